#include "omenn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>

#include "omenn/kernels.hpp"

namespace omenn {
namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_rank2(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    fail(ErrorCode::Shape, std::string(what) + ": expected rank 2, got rank " +
                               std::to_string(t.rank()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) fail(ErrorCode::Shape, std::string(what) + ": shape mismatch");
}

}  // namespace

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::Shape: return "shape";
    case ErrorCode::Parameter: return "parameter";
    case ErrorCode::Resource: return "resource";
    case ErrorCode::Capability: return "capability";
    case ErrorCode::Integrity: return "integrity";
    case ErrorCode::Io: return "io";
    case ErrorCode::Parse: return "parse";
    case ErrorCode::MissingBlob: return "missing-blob";
    case ErrorCode::ShapeChain: return "shape-chain";
    case ErrorCode::UnknownKind: return "unknown-kind";
    case ErrorCode::Version: return "version";
    case ErrorCode::Checksum: return "checksum";
    case ErrorCode::UndefinedCorrelation: return "undefined-correlation";
    case ErrorCode::OutOfRange: return "out-of-range";
  }
  return "unknown";
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(product(shape_), fill) {
  for (std::size_t extent : shape_) {
    if (extent == 0) fail(ErrorCode::Shape, "tensor extents must be positive");
  }
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (product(shape_) != data_.size()) {
    fail(ErrorCode::Shape, "tensor data length " + std::to_string(data_.size()) +
                               " does not match shape product " +
                               std::to_string(product(shape_)));
  }
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t m = rows.size();
  if (m == 0) fail(ErrorCode::Shape, "from_rows: no rows");
  const std::size_t n = rows.begin()->size();
  std::vector<double> data;
  data.reserve(m * n);
  for (const auto& row : rows) {
    if (row.size() != n) fail(ErrorCode::Shape, "from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({m, n}, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) fail(ErrorCode::Shape, "axis out of range");
  return shape_[axis];
}

std::size_t Tensor::rows() const {
  require_rank2(*this, "rows");
  return shape_[0];
}

std::size_t Tensor::cols() const {
  require_rank2(*this, "cols");
  return shape_[1];
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Shape2D flat_shape(std::size_t tokens, std::size_t channels) {
  return Shape2D{tokens, channels, 0, 0};
}

Shape2D image_shape(std::size_t height, std::size_t width, std::size_t channels) {
  return Shape2D{height * width, channels, height, width};
}

Tensor matmul(const Tensor& a, const Tensor& b) { return kernels::parallel::matmul(a, b); }

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  Tensor t({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor r = a;
  for (std::size_t i = 0; i < r.size(); ++i) r[i] += b[i];
  return r;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor r = a;
  for (std::size_t i = 0; i < r.size(); ++i) r[i] -= b[i];
  return r;
}

Tensor scale(const Tensor& a, double s) {
  Tensor r = a;
  for (double& v : r.storage()) v *= s;
  return r;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  Tensor r = a;
  for (std::size_t i = 0; i < r.size(); ++i) r[i] *= b[i];
  return r;
}

double dot(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) fail(ErrorCode::Shape, "dot: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double sum(const Tensor& a) {
  return std::accumulate(a.storage().begin(), a.storage().end(), 0.0);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) fail(ErrorCode::Shape, "max_abs_diff: length mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double max_abs(const Tensor& a) {
  double m = 0.0;
  for (double v : a.storage()) m = std::max(m, std::abs(v));
  return m;
}

VecView::VecView(const Tensor& m) : m_(&m), rows_(m.rows()), cols_(m.cols()) {}

Tensor vec(const Tensor& x) {
  require_rank2(x, "vec");
  const std::size_t t = x.rows(), d = x.cols();
  Tensor v({t * d});
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < d; ++j) v[vec_index(i, j, t)] = x(i, j);
  return v;
}

Tensor unvec(const Tensor& v, std::size_t rows, std::size_t cols) {
  if (v.size() != rows * cols) fail(ErrorCode::Shape, "unvec: length mismatch");
  Tensor x({rows, cols});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) x(i, j) = v[vec_index(i, j, rows)];
  return x;
}

Tensor kron(const Tensor& a, const Tensor& b) {
  require_rank2(a, "kron");
  require_rank2(b, "kron");
  const std::size_t m = a.rows(), n = a.cols(), p = b.rows(), q = b.cols();
  Tensor r({m * p, n * q});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double aij = a(i, j);
      for (std::size_t k = 0; k < p; ++k)
        for (std::size_t l = 0; l < q; ++l) r(i * p + k, j * q + l) = aij * b(k, l);
    }
  return r;
}

std::size_t ConvGeometry::out_height() const {
  validate();
  return (in_height + 2 * padding - kernel_height) / stride + 1;
}

std::size_t ConvGeometry::out_width() const {
  validate();
  return (in_width + 2 * padding - kernel_width) / stride + 1;
}

void ConvGeometry::validate() const {
  if (in_height == 0 || in_width == 0 || kernel_height == 0 || kernel_width == 0) {
    fail(ErrorCode::Shape, "conv geometry: extents must be positive");
  }
  if (stride == 0) fail(ErrorCode::Shape, "conv geometry: stride must be positive");
  if (kernel_height > in_height + 2 * padding || kernel_width > in_width + 2 * padding) {
    fail(ErrorCode::Shape, "conv geometry: kernel larger than padded input");
  }
}

long ConvGeometry::source_token(std::size_t oi, std::size_t oj, std::size_t ki,
                                std::size_t kj) const noexcept {
  const long i = static_cast<long>(oi * stride + ki) - static_cast<long>(padding);
  const long j = static_cast<long>(oj * stride + kj) - static_cast<long>(padding);
  if (i < 0 || j < 0 || i >= static_cast<long>(in_height) || j >= static_cast<long>(in_width)) {
    return -1;
  }
  return i * static_cast<long>(in_width) + j;
}

namespace {

std::size_t image_channels(const Tensor& x, const ConvGeometry& geom) {
  const std::size_t t = geom.in_height * geom.in_width;
  if (x.rank() == 3) {
    if (x.dim(0) != geom.in_height || x.dim(1) != geom.in_width) {
      fail(ErrorCode::Shape, "im2col: image extents do not match geometry");
    }
    return x.dim(2);
  }
  if (x.rank() == 2 && x.rows() == t) return x.cols();
  fail(ErrorCode::Shape, "im2col: expected h x w x d or (h*w) x d input");
}

}  // namespace

Tensor im2col(const Tensor& x, const ConvGeometry& geom) {
  geom.validate();
  const std::size_t d = image_channels(x, geom);
  const std::size_t ho = geom.out_height(), wo = geom.out_width();
  const std::size_t kh = geom.kernel_height, kw = geom.kernel_width;
  Tensor cols({kh * kw * d, ho * wo});
  const auto& data = x.storage();
  for (std::size_t oi = 0; oi < ho; ++oi)
    for (std::size_t oj = 0; oj < wo; ++oj)
      for (std::size_t ki = 0; ki < kh; ++ki)
        for (std::size_t kj = 0; kj < kw; ++kj) {
          const long src = geom.source_token(oi, oj, ki, kj);
          if (src < 0) continue;
          for (std::size_t c = 0; c < d; ++c) {
            cols((ki * kw + kj) * d + c, oi * wo + oj) =
                data[static_cast<std::size_t>(src) * d + c];
          }
        }
  return cols;
}

Tensor dbt_matrix(const Tensor& kernel, const ConvGeometry& geom, std::size_t cap) {
  if (kernel.rank() != 4) fail(ErrorCode::Shape, "dbt_matrix: kernel must be kh x kw x din x dout");
  geom.validate();
  const std::size_t kh = kernel.dim(0), kw = kernel.dim(1), din = kernel.dim(2),
                    dout = kernel.dim(3);
  if (kh != geom.kernel_height || kw != geom.kernel_width) {
    fail(ErrorCode::Shape, "dbt_matrix: kernel extents do not match geometry");
  }
  const std::size_t tin = geom.in_height * geom.in_width, tout = geom.out_tokens();
  if (tin * din > cap || tout * dout > cap) {
    fail(ErrorCode::Resource, "dbt_matrix: dense size " + std::to_string(tout * dout) + "x" +
                                  std::to_string(tin * din) + " exceeds cap " +
                                  std::to_string(cap));
  }
  Tensor t({tout * dout, tin * din});
  const std::size_t wo = geom.out_width();
  for (std::size_t oi = 0; oi < geom.out_height(); ++oi)
    for (std::size_t oj = 0; oj < wo; ++oj) {
      const std::size_t to = oi * wo + oj;
      for (std::size_t ki = 0; ki < kh; ++ki)
        for (std::size_t kj = 0; kj < kw; ++kj) {
          const long src = geom.source_token(oi, oj, ki, kj);
          if (src < 0) continue;
          const auto ti = static_cast<std::size_t>(src);
          for (std::size_t c = 0; c < din; ++c)
            for (std::size_t o = 0; o < dout; ++o) {
              t(vec_index(to, o, tout), vec_index(ti, c, tin)) +=
                  kernel[((ki * kw + kj) * din + c) * dout + o];
            }
        }
    }
  return t;
}

}  // namespace omenn

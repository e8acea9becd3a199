#include "omenn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "omenn/kernels.hpp"

namespace omenn {
namespace {

constexpr double kSigmaFloor = 1e-12;

std::string describe(const Layer& layer) {
  std::string s = to_string(layer.kind);
  if (!layer.name.empty()) s += " '" + layer.name + "'";
  return s;
}

[[noreturn]] void chain_error(const Layer& layer, const std::string& what) {
  fail(ErrorCode::ShapeChain, describe(layer) + ": " + what);
}

template <class P>
const P& params_of(const Layer& layer) {
  const P* p = std::get_if<P>(&layer.params);
  if (p == nullptr) fail(ErrorCode::Parameter, describe(layer) + ": parameters do not match kind");
  return *p;
}

void expect_matrix(const Layer& layer, const Tensor& m, std::size_t rows, const char* what) {
  if (m.rank() != 2 || m.rows() != rows) {
    chain_error(layer, std::string(what) + " must have " + std::to_string(rows) + " rows");
  }
}

void expect_vector(const Layer& layer, const Tensor& v, std::size_t n, const char* what) {
  if (v.size() != n) {
    chain_error(layer, std::string(what) + " must have " + std::to_string(n) + " entries");
  }
}

Tensor add_row_bias(Tensor y, const Tensor& bias) {
  const std::size_t n = y.cols();
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < n; ++j) y(i, j) += bias[j];
  return y;
}

std::size_t head_width_v(const AttentionHead& h) { return h.wv.cols(); }

void check_head(const Layer& layer, const AttentionHead& h, std::size_t din) {
  expect_matrix(layer, h.wq, din, "W_q");
  expect_matrix(layer, h.wk, din, "W_k");
  expect_matrix(layer, h.wv, din, "W_v");
  if (h.wq.cols() != h.wk.cols()) chain_error(layer, "W_q and W_k widths differ");
  expect_vector(layer, h.bq, h.wq.cols(), "b_q");
  expect_vector(layer, h.bk, h.wk.cols(), "b_k");
  expect_vector(layer, h.bv, h.wv.cols(), "b_v");
}

Tensor softmax_rows(const Tensor& s) {
  Tensor a = s;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double m = a(i, 0);
    for (std::size_t j = 1; j < a.cols(); ++j) m = std::max(m, a(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) {
      a(i, j) = std::exp(a(i, j) - m);
      z += a(i, j);
    }
    for (std::size_t j = 0; j < a.cols(); ++j) a(i, j) /= z;
  }
  return a;
}

/// Backward of softmax rows: dS = A .* (dA - rowsum(dA .* A)).
Tensor softmax_rows_vjp(const Tensor& a, const Tensor& da) {
  Tensor ds = a;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double inner = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) inner += da(i, j) * a(i, j);
    for (std::size_t j = 0; j < a.cols(); ++j) ds(i, j) = a(i, j) * (da(i, j) - inner);
  }
  return ds;
}

Tensor head_vjp(const AttentionHead& head, double dk, const Tensor& x, const Tensor& g) {
  using kernels::parallel::conv2d;
  using kernels::parallel::conv2d_adjoint;
  using kernels::parallel::matmul_nt;
  using kernels::parallel::matmul_tn;
  const auto h = detail::attention_head(head, dk, x);
  const double inv = 1.0 / std::sqrt(detail::effective_dk(head, dk));
  const Tensor dv = matmul_tn(h.attention, g);
  const Tensor da = matmul_nt(g, h.v);
  const Tensor ds = scale(softmax_rows_vjp(h.attention, da), inv);
  const Tensor dq = matmul(ds, h.k);
  const Tensor dkm = matmul_tn(ds, h.q);
  Tensor dx = matmul_nt(dq, head.wq);
  dx = add(dx, matmul_nt(dkm, head.wk));
  return add(dx, matmul_nt(dv, head.wv));
}

}  // namespace

namespace act {

double gaussian_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double gaussian_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {
constexpr double kTanhCoef = 0.044715;
double tanh_arg(double x) {
  return std::sqrt(2.0 / std::numbers::pi) * (x + kTanhCoef * x * x * x);
}
}  // namespace

double multiplier(const ActivationParams& p, double x) {
  switch (p.kind) {
    case ActivationKind::GELU: return gaussian_cdf(x);
    case ActivationKind::GELUTanh: return 0.5 * (1.0 + std::tanh(tanh_arg(x)));
    case ActivationKind::SWISH: return sigmoid(x);
    case ActivationKind::ReLU: return x > 0 ? 1.0 : 0.0;
    case ActivationKind::LeakyReLU: return x > 0 ? 1.0 : p.alpha;
  }
  fail(ErrorCode::Capability, "unsupported activation");
}

double apply(const ActivationParams& p, double x) { return x * multiplier(p, x); }

double derivative(const ActivationParams& p, double x) {
  switch (p.kind) {
    case ActivationKind::GELU: return gaussian_cdf(x) + x * gaussian_pdf(x);
    case ActivationKind::GELUTanh: {
      const double t = std::tanh(tanh_arg(x));
      const double du = std::sqrt(2.0 / std::numbers::pi) * (1.0 + 3.0 * kTanhCoef * x * x);
      return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
    }
    case ActivationKind::SWISH: {
      const double s = sigmoid(x);
      return s + x * s * (1.0 - s);
    }
    case ActivationKind::ReLU: return x > 0 ? 1.0 : 0.0;
    case ActivationKind::LeakyReLU: return x > 0 ? 1.0 : p.alpha;
  }
  fail(ErrorCode::Capability, "unsupported activation");
}

}  // namespace act

namespace detail {

NormCoefficients norm_coefficients(const NormParams& p, const Tensor& x, Diagnostics* diag) {
  const std::size_t t = x.rows(), d = x.cols();
  NormCoefficients c{Tensor({t, d}), Tensor({t, d})};
  auto sigma_of = [&](double variance, std::size_t where) {
    double sigma = std::sqrt(variance + p.eps);
    if (!(sigma >= kSigmaFloor)) {
      if (diag != nullptr) {
        diag->note("normalization sigma " + std::to_string(sigma) + " clamped to 1e-12 at " +
                   std::to_string(where));
      }
      sigma = kSigmaFloor;
    }
    return sigma;
  };
  if (p.mode == NormMode::Batch) {
    for (std::size_t j = 0; j < d; ++j) {
      const double sigma = sigma_of(p.variance[j], j);
      const double s = p.gamma[j] / sigma;
      const double b = p.beta[j] - p.gamma[j] * p.mean[j] / sigma;
      for (std::size_t i = 0; i < t; ++i) {
        c.scale(i, j) = s;
        c.shift(i, j) = b;
      }
    }
    return c;
  }
  for (std::size_t i = 0; i < t; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += x(i, j);
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (x(i, j) - mu) * (x(i, j) - mu);
    var /= static_cast<double>(d);
    const double sigma = sigma_of(var, i);
    for (std::size_t j = 0; j < d; ++j) {
      c.scale(i, j) = p.gamma[j] / sigma;
      c.shift(i, j) = p.beta[j] - p.gamma[j] * mu / sigma;
    }
  }
  return c;
}

double effective_dk(const AttentionHead& head, double dk) {
  const double v = dk > 0.0 ? dk : static_cast<double>(head.wq.cols());
  if (!(v > 0.0)) fail(ErrorCode::Parameter, "attention: d_k must be positive");
  return v;
}

HeadActivations attention_head(const AttentionHead& head, double dk, const Tensor& x) {
  using kernels::parallel::matmul_nt;
  HeadActivations h;
  h.q = add_row_bias(matmul(x, head.wq), head.bq);
  h.k = add_row_bias(matmul(x, head.wk), head.bk);
  h.v = add_row_bias(matmul(x, head.wv), head.bv);
  h.attention = softmax_rows(scale(matmul_nt(h.q, h.k), 1.0 / std::sqrt(effective_dk(head, dk))));
  return h;
}

Tensor kernel_matrix(const Tensor& kernel) {
  return kernel.reshaped({kernel.dim(0) * kernel.dim(1) * kernel.dim(2), kernel.dim(3)});
}

ConvGeometry conv_geometry(const ConvParams& p, const Shape2D& in) {
  return ConvGeometry{in.height, in.width, p.kernel.dim(0), p.kernel.dim(1), p.stride, p.padding};
}

ConvGeometry pool_geometry(const PoolParams& p, const Shape2D& in) {
  return ConvGeometry{in.height, in.width, p.window, p.window, p.stride, 0};
}

std::vector<std::size_t> maxpool_argmax(const PoolParams& p, const Tensor& x,
                                        const Shape2D& in) {
  const ConvGeometry g = pool_geometry(p, in);
  const std::size_t ho = g.out_height(), wo = g.out_width(), d = in.channels;
  std::vector<std::size_t> src(ho * wo * d);
  for (std::size_t oi = 0; oi < ho; ++oi)
    for (std::size_t oj = 0; oj < wo; ++oj)
      for (std::size_t c = 0; c < d; ++c) {
        std::size_t best = static_cast<std::size_t>(g.source_token(oi, oj, 0, 0));
        for (std::size_t ki = 0; ki < p.window; ++ki)
          for (std::size_t kj = 0; kj < p.window; ++kj) {
            const auto s = static_cast<std::size_t>(g.source_token(oi, oj, ki, kj));
            // Strict comparison keeps the lowest flat index on ties.
            if (x(s, c) > x(best, c)) best = s;
          }
        src[(oi * wo + oj) * d + c] = best;
      }
  return src;
}

}  // namespace detail

Shape2D output_shape(const Layer& layer, const Shape2D& in) {
  if (!in.valid()) chain_error(layer, "invalid input shape");
  switch (layer.kind) {
    case LayerKind::FullyConnected: {
      const auto& p = params_of<FcParams>(layer);
      expect_matrix(layer, p.weight, in.channels, "weight");
      expect_vector(layer, p.bias, p.weight.cols(), "bias");
      Shape2D out = in;
      out.channels = p.weight.cols();
      return out;
    }
    case LayerKind::Normalization: {
      const auto& p = params_of<NormParams>(layer);
      expect_vector(layer, p.gamma, in.channels, "gamma");
      expect_vector(layer, p.beta, in.channels, "beta");
      if (p.mode == NormMode::Batch) {
        expect_vector(layer, p.mean, in.channels, "mean");
        expect_vector(layer, p.variance, in.channels, "variance");
      }
      if (!(p.eps >= 0.0)) chain_error(layer, "eps must be non-negative");
      return in;
    }
    case LayerKind::Conv2D: {
      const auto& p = params_of<ConvParams>(layer);
      if (!in.spatial()) chain_error(layer, "input has no spatial layout");
      if (p.kernel.rank() != 4) chain_error(layer, "kernel must be kh x kw x d_in x d_out");
      if (p.kernel.dim(2) != in.channels) chain_error(layer, "kernel d_in does not match input");
      expect_vector(layer, p.bias, p.kernel.dim(3), "bias");
      const ConvGeometry g = detail::conv_geometry(p, in);
      try {
        g.validate();
      } catch (const Error& e) {
        chain_error(layer, e.what());
      }
      return image_shape(g.out_height(), g.out_width(), p.kernel.dim(3));
    }
    case LayerKind::Activation: {
      const auto& p = params_of<ActivationParams>(layer);
      if (p.kind == ActivationKind::LeakyReLU && !(p.alpha >= 0.0 && p.alpha < 1.0)) {
        chain_error(layer, "LeakyReLU alpha must lie in [0, 1)");
      }
      return in;
    }
    case LayerKind::Softmax:
    case LayerKind::Sigmoid:
    case LayerKind::Tanh:
      return in;
    case LayerKind::Attention: {
      const auto& p = params_of<AttentionParams>(layer);
      check_head(layer, p.head, in.channels);
      if (p.dk < 0.0) fail(ErrorCode::Parameter, describe(layer) + ": d_k must be positive");
      Shape2D out = in;
      out.channels = head_width_v(p.head);
      return out;
    }
    case LayerKind::MultiHeadAttention: {
      const auto& p = params_of<MultiHeadParams>(layer);
      if (p.heads.empty()) chain_error(layer, "at least one head required");
      if (p.dk < 0.0) fail(ErrorCode::Parameter, describe(layer) + ": d_k must be positive");
      for (const auto& h : p.heads) {
        check_head(layer, h, in.channels);
        if (h.wq.cols() != p.heads[0].wq.cols() || h.wv.cols() != p.heads[0].wv.cols()) {
          fail(ErrorCode::Parameter, describe(layer) + ": head dimensions differ");
        }
      }
      expect_matrix(layer, p.wu, p.heads.size() * head_width_v(p.heads[0]), "W_u");
      expect_vector(layer, p.bu, p.wu.cols(), "b_u");
      Shape2D out = in;
      out.channels = p.wu.cols();
      return out;
    }
    case LayerKind::Residual: {
      const auto& p = params_of<ResidualParams>(layer);
      if (p.branches.empty()) chain_error(layer, "at least one branch required");
      if (p.ones_owner >= p.branches.size()) chain_error(layer, "ones_owner out of range");
      Shape2D first{};
      for (std::size_t b = 0; b < p.branches.size(); ++b) {
        const Shape2D out = output_shape(p.branches[b], in);
        if (b == 0) {
          first = out;
        } else if (out.tokens != first.tokens || out.channels != first.channels) {
          chain_error(layer, "branch " + std::to_string(b) + " output shape differs");
        }
      }
      return first;
    }
    case LayerKind::MaxPool2D:
    case LayerKind::AvgPool2D: {
      const auto& p = params_of<PoolParams>(layer);
      if (!in.spatial()) chain_error(layer, "input has no spatial layout");
      if (p.window == 0 || p.stride == 0) chain_error(layer, "window and stride must be positive");
      const ConvGeometry g = detail::pool_geometry(p, in);
      try {
        g.validate();
      } catch (const Error& e) {
        chain_error(layer, e.what());
      }
      return image_shape(g.out_height(), g.out_width(), in.channels);
    }
    case LayerKind::Flatten:
      return flat_shape(1, in.tokens * in.channels);
    case LayerKind::TokenSelect: {
      const auto& p = params_of<TokenSelectParams>(layer);
      if (p.mode == TokenSelectMode::Index && p.index >= in.tokens) {
        chain_error(layer, "token index out of range");
      }
      return flat_shape(1, in.channels);
    }
  }
  fail(ErrorCode::UnknownKind, "unknown layer kind");
}

Shape2D output_shape(const std::vector<Layer>& layers, const Shape2D& in) {
  Shape2D s = in;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    try {
      s = output_shape(layers[i], s);
    } catch (const Error& e) {
      fail(e.code(), "layer " + std::to_string(i) + ": " + e.what());
    }
  }
  return s;
}

Tensor forward(const Layer& layer, const Tensor& x, const Shape2D& in, Diagnostics* diag) {
  using kernels::parallel::conv2d;
  using kernels::parallel::conv2d_adjoint;
  using kernels::parallel::matmul_nt;
  using kernels::parallel::matmul_tn;
  switch (layer.kind) {
    case LayerKind::FullyConnected: {
      const auto& p = params_of<FcParams>(layer);
      return add_row_bias(matmul(x, p.weight), p.bias);
    }
    case LayerKind::Normalization: {
      const auto& p = params_of<NormParams>(layer);
      const auto c = detail::norm_coefficients(p, x, diag);
      Tensor y = x;
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * c.scale[i] + c.shift[i];
      return y;
    }
    case LayerKind::Conv2D: {
      const auto& p = params_of<ConvParams>(layer);
      return add_row_bias(conv2d(x, detail::kernel_matrix(p.kernel), in.channels,
                                 detail::conv_geometry(p, in)),
                          p.bias);
    }
    case LayerKind::Activation: {
      const auto& p = params_of<ActivationParams>(layer);
      Tensor y = x;
      for (double& v : y.storage()) v = act::apply(p, v);
      return y;
    }
    case LayerKind::Softmax:
      return softmax_rows(x);
    case LayerKind::Sigmoid: {
      Tensor y = x;
      for (double& v : y.storage()) v = act::sigmoid(v);
      return y;
    }
    case LayerKind::Tanh: {
      Tensor y = x;
      for (double& v : y.storage()) v = std::tanh(v);
      return y;
    }
    case LayerKind::Attention: {
      const auto& p = params_of<AttentionParams>(layer);
      const auto h = detail::attention_head(p.head, p.dk, x);
      return matmul(h.attention, h.v);
    }
    case LayerKind::MultiHeadAttention: {
      const auto& p = params_of<MultiHeadParams>(layer);
      const std::size_t dv = head_width_v(p.heads[0]);
      Tensor concat({x.rows(), dv * p.heads.size()});
      for (std::size_t hi = 0; hi < p.heads.size(); ++hi) {
        const auto h = detail::attention_head(p.heads[hi], p.dk, x);
        const Tensor y = matmul(h.attention, h.v);
        for (std::size_t i = 0; i < y.rows(); ++i)
          for (std::size_t j = 0; j < dv; ++j) concat(i, hi * dv + j) = y(i, j);
      }
      return add_row_bias(matmul(concat, p.wu), p.bu);
    }
    case LayerKind::Residual: {
      const auto& p = params_of<ResidualParams>(layer);
      Tensor y;
      for (std::size_t b = 0; b < p.branches.size(); ++b) {
        Tensor yb = forward(p.branches[b], x, in, diag);
        y = b == 0 ? std::move(yb) : add(y, yb);
      }
      return y;
    }
    case LayerKind::MaxPool2D: {
      const auto& p = params_of<PoolParams>(layer);
      const auto src = detail::maxpool_argmax(p, x, in);
      const std::size_t d = in.channels;
      Tensor y({src.size() / d, d});
      for (std::size_t k = 0; k < src.size(); ++k) y[k] = x(src[k], k % d);
      return y;
    }
    case LayerKind::AvgPool2D: {
      const auto& p = params_of<PoolParams>(layer);
      const ConvGeometry g = detail::pool_geometry(p, in);
      const std::size_t wo = g.out_width(), d = in.channels;
      const double w = 1.0 / static_cast<double>(p.window * p.window);
      Tensor y({g.out_tokens(), d});
      for (std::size_t oi = 0; oi < g.out_height(); ++oi)
        for (std::size_t oj = 0; oj < wo; ++oj)
          for (std::size_t ki = 0; ki < p.window; ++ki)
            for (std::size_t kj = 0; kj < p.window; ++kj) {
              const auto s = static_cast<std::size_t>(g.source_token(oi, oj, ki, kj));
              for (std::size_t c = 0; c < d; ++c) y(oi * wo + oj, c) += w * x(s, c);
            }
      return y;
    }
    case LayerKind::Flatten:
      return x.reshaped({1, x.size()});
    case LayerKind::TokenSelect: {
      const auto& p = params_of<TokenSelectParams>(layer);
      Tensor y({1, x.cols()});
      if (p.mode == TokenSelectMode::Index) {
        for (std::size_t j = 0; j < x.cols(); ++j) y(0, j) = x(p.index, j);
      } else {
        for (std::size_t i = 0; i < x.rows(); ++i)
          for (std::size_t j = 0; j < x.cols(); ++j) y(0, j) += x(i, j);
        y = scale(y, 1.0 / static_cast<double>(x.rows()));
      }
      return y;
    }
  }
  fail(ErrorCode::UnknownKind, "unknown layer kind");
}

Tensor forward(const std::vector<Layer>& layers, const Tensor& x, const Shape2D& in,
               Diagnostics* diag) {
  Tensor cur = x;
  Shape2D shape = in;
  for (const auto& layer : layers) {
    cur = forward(layer, cur, shape, diag);
    shape = output_shape(layer, shape);
  }
  return cur;
}

Tensor vjp(const Layer& layer, const Tensor& x, const Shape2D& in, const Tensor& g) {
  using kernels::parallel::conv2d;
  using kernels::parallel::conv2d_adjoint;
  using kernels::parallel::matmul_nt;
  using kernels::parallel::matmul_tn;
  switch (layer.kind) {
    case LayerKind::FullyConnected:
      return matmul_nt(g, params_of<FcParams>(layer).weight);
    case LayerKind::Normalization: {
      const auto& p = params_of<NormParams>(layer);
      const auto c = detail::norm_coefficients(p, x, nullptr);
      if (p.mode == NormMode::Batch) return hadamard(g, c.scale);
      // Full layer-norm Jacobian, statistics included.
      const std::size_t t = x.rows(), d = x.cols();
      Tensor dx({t, d});
      for (std::size_t i = 0; i < t; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += x(i, j);
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (x(i, j) - mu) * (x(i, j) - mu);
        var /= static_cast<double>(d);
        const double sigma = std::max(std::sqrt(var + p.eps), kSigmaFloor);
        double mean_gh = 0.0, mean_ghx = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double gh = g(i, j) * p.gamma[j];
          const double xh = (x(i, j) - mu) / sigma;
          mean_gh += gh;
          mean_ghx += gh * xh;
        }
        mean_gh /= static_cast<double>(d);
        mean_ghx /= static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
          const double xh = (x(i, j) - mu) / sigma;
          dx(i, j) = (g(i, j) * p.gamma[j] - mean_gh - xh * mean_ghx) / sigma;
        }
      }
      return dx;
    }
    case LayerKind::Conv2D: {
      const auto& p = params_of<ConvParams>(layer);
      return conv2d_adjoint(g, detail::kernel_matrix(p.kernel), in.channels,
                            detail::conv_geometry(p, in));
    }
    case LayerKind::Activation: {
      const auto& p = params_of<ActivationParams>(layer);
      Tensor dx = g;
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= act::derivative(p, x[i]);
      return dx;
    }
    case LayerKind::Softmax:
      return softmax_rows_vjp(softmax_rows(x), g);
    case LayerKind::Sigmoid: {
      Tensor dx = g;
      for (std::size_t i = 0; i < dx.size(); ++i) {
        const double s = act::sigmoid(x[i]);
        dx[i] *= s * (1.0 - s);
      }
      return dx;
    }
    case LayerKind::Tanh: {
      Tensor dx = g;
      for (std::size_t i = 0; i < dx.size(); ++i) {
        const double t = std::tanh(x[i]);
        dx[i] *= 1.0 - t * t;
      }
      return dx;
    }
    case LayerKind::Attention: {
      const auto& p = params_of<AttentionParams>(layer);
      return head_vjp(p.head, p.dk, x, g);
    }
    case LayerKind::MultiHeadAttention: {
      const auto& p = params_of<MultiHeadParams>(layer);
      const Tensor gc = matmul_nt(g, p.wu);
      const std::size_t dv = head_width_v(p.heads[0]);
      Tensor dx({x.rows(), x.cols()});
      for (std::size_t hi = 0; hi < p.heads.size(); ++hi) {
        Tensor gh({x.rows(), dv});
        for (std::size_t i = 0; i < x.rows(); ++i)
          for (std::size_t j = 0; j < dv; ++j) gh(i, j) = gc(i, hi * dv + j);
        dx = add(dx, head_vjp(p.heads[hi], p.dk, x, gh));
      }
      return dx;
    }
    case LayerKind::Residual: {
      const auto& p = params_of<ResidualParams>(layer);
      Tensor dx({x.rows(), x.cols()});
      for (const auto& branch : p.branches) dx = add(dx, vjp(branch, x, in, g));
      return dx;
    }
    case LayerKind::MaxPool2D: {
      const auto src = detail::maxpool_argmax(params_of<PoolParams>(layer), x, in);
      const std::size_t d = in.channels;
      Tensor dx({x.rows(), d});
      for (std::size_t k = 0; k < src.size(); ++k) dx(src[k], k % d) += g[k];
      return dx;
    }
    case LayerKind::AvgPool2D: {
      const auto& p = params_of<PoolParams>(layer);
      const ConvGeometry geo = detail::pool_geometry(p, in);
      const std::size_t wo = geo.out_width(), d = in.channels;
      const double w = 1.0 / static_cast<double>(p.window * p.window);
      Tensor dx({x.rows(), d});
      for (std::size_t oi = 0; oi < geo.out_height(); ++oi)
        for (std::size_t oj = 0; oj < wo; ++oj)
          for (std::size_t ki = 0; ki < p.window; ++ki)
            for (std::size_t kj = 0; kj < p.window; ++kj) {
              const auto s = static_cast<std::size_t>(geo.source_token(oi, oj, ki, kj));
              for (std::size_t c = 0; c < d; ++c) dx(s, c) += w * g(oi * wo + oj, c);
            }
      return dx;
    }
    case LayerKind::Flatten:
      return g.reshaped({x.rows(), x.cols()});
    case LayerKind::TokenSelect: {
      const auto& p = params_of<TokenSelectParams>(layer);
      Tensor dx({x.rows(), x.cols()});
      if (p.mode == TokenSelectMode::Index) {
        for (std::size_t j = 0; j < x.cols(); ++j) dx(p.index, j) = g(0, j);
      } else {
        const double w = 1.0 / static_cast<double>(x.rows());
        for (std::size_t i = 0; i < x.rows(); ++i)
          for (std::size_t j = 0; j < x.cols(); ++j) dx(i, j) = w * g(0, j);
      }
      return dx;
    }
  }
  fail(ErrorCode::UnknownKind, "unknown layer kind");
}

Tensor vjp(const std::vector<Layer>& layers, const Tensor& x, const Shape2D& in,
           const Tensor& grad_out) {
  std::vector<Tensor> inputs;
  std::vector<Shape2D> shapes;
  Tensor cur = x;
  Shape2D shape = in;
  for (const auto& layer : layers) {
    inputs.push_back(cur);
    shapes.push_back(shape);
    cur = forward(layer, cur, shape);
    shape = output_shape(layer, shape);
  }
  Tensor g = grad_out;
  for (std::size_t i = layers.size(); i-- > 0;) g = vjp(layers[i], inputs[i], shapes[i], g);
  return g;
}

}  // namespace omenn

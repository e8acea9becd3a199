#include "omenn/kernels.hpp"

#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace omenn::kernels {
namespace {

const double* row(const Tensor& t, std::size_t i) { return t.data().data() + i * t.cols(); }

void require_rank2(const Tensor& t, const char* what) {
  if (t.rank() != 2) fail(ErrorCode::Shape, std::string(what) + ": expected a rank-2 tensor");
}

void check_inner(std::size_t lhs, std::size_t rhs, const char* what) {
  if (lhs != rhs) {
    fail(ErrorCode::Shape, std::string(what) + ": inner dimensions differ (" +
                               std::to_string(lhs) + " vs " + std::to_string(rhs) + ")");
  }
}

void check_conv_operands(const Tensor& x, const Tensor& kernel, std::size_t channels_in,
                         const ConvGeometry& geom, bool adjoint) {
  require_rank2(x, "conv2d");
  require_rank2(kernel, "conv2d");
  geom.validate();
  if (kernel.rows() != geom.kernel_height * geom.kernel_width * channels_in) {
    fail(ErrorCode::Shape, "conv2d: kernel rows do not match kh*kw*d_in");
  }
  const std::size_t tokens = adjoint ? geom.out_tokens() : geom.in_height * geom.in_width;
  const std::size_t channels = adjoint ? kernel.cols() : channels_in;
  if (x.rows() != tokens || x.cols() != channels) {
    fail(ErrorCode::Shape, "conv2d: operand shape does not match geometry");
  }
}

}  // namespace

int max_threads() noexcept {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace serial {

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  check_inner(a.cols(), b.rows(), "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = &c(i, 0);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a(i, p);
      const double* brow = b.data().data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  check_inner(a.cols(), b.cols(), "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a(i, p) * b(j, p);
      c(i, j) = acc;
    }
  }
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_tn");
  require_rank2(b, "matmul_tn");
  check_inner(a.rows(), b.rows(), "matmul_tn");
  const std::size_t m = a.cols(), k = a.rows(), n = b.cols();
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = &c(i, 0);
    for (std::size_t p = 0; p < k; ++p) {
      const double api = a(p, i);
      const double* brow = b.data().data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += api * brow[j];
    }
  }
  return c;
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t channels_in,
              const ConvGeometry& geom) {
  check_conv_operands(x, kernel, channels_in, geom, false);
  const std::size_t ho = geom.out_height(), wo = geom.out_width(), dout = kernel.cols();
  Tensor y({ho * wo, dout});
  for (std::size_t oi = 0; oi < ho; ++oi) {
    for (std::size_t oj = 0; oj < wo; ++oj) {
      double* yrow = &y(oi * wo + oj, 0);
      for (std::size_t ki = 0; ki < geom.kernel_height; ++ki) {
        for (std::size_t kj = 0; kj < geom.kernel_width; ++kj) {
          const long src = geom.source_token(oi, oj, ki, kj);
          if (src < 0) continue;
          const std::size_t base = (ki * geom.kernel_width + kj) * channels_in;
          for (std::size_t c = 0; c < channels_in; ++c) {
            const double xv = x(static_cast<std::size_t>(src), c);
            const double* krow = row(kernel, base + c);
            for (std::size_t o = 0; o < dout; ++o) yrow[o] += xv * krow[o];
          }
        }
      }
    }
  }
  return y;
}

Tensor conv2d_adjoint(const Tensor& g, const Tensor& kernel, std::size_t channels_in,
                      const ConvGeometry& geom) {
  check_conv_operands(g, kernel, channels_in, geom, true);
  const std::size_t ho = geom.out_height(), wo = geom.out_width(), dout = kernel.cols();
  Tensor x({geom.in_height * geom.in_width, channels_in});
  for (std::size_t oi = 0; oi < ho; ++oi) {
    for (std::size_t oj = 0; oj < wo; ++oj) {
      const double* grow = row(g, oi * wo + oj);
      for (std::size_t ki = 0; ki < geom.kernel_height; ++ki) {
        for (std::size_t kj = 0; kj < geom.kernel_width; ++kj) {
          const long src = geom.source_token(oi, oj, ki, kj);
          if (src < 0) continue;
          const std::size_t base = (ki * geom.kernel_width + kj) * channels_in;
          for (std::size_t c = 0; c < channels_in; ++c) {
            const double* krow = row(kernel, base + c);
            double acc = 0.0;
            for (std::size_t o = 0; o < dout; ++o) acc += grow[o] * krow[o];
            x(static_cast<std::size_t>(src), c) += acc;
          }
        }
      }
    }
  }
  return x;
}

}  // namespace serial

namespace parallel {

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  check_inner(a.cols(), b.rows(), "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor c({m, n});
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  double* cd = c.data().data();
#pragma omp parallel for schedule(static) if (m * k * n > 32768)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(m); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* crow = cd + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ad[i * k + p];
      const double* brow = bd + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  check_inner(a.cols(), b.cols(), "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor c({m, n});
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  double* cd = c.data().data();
#pragma omp parallel for schedule(static) if (m * k * n > 32768)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(m); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ad[i * k + p] * bd[j * k + p];
      cd[i * n + j] = acc;
    }
  }
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_tn");
  require_rank2(b, "matmul_tn");
  check_inner(a.rows(), b.rows(), "matmul_tn");
  const std::size_t m = a.cols(), k = a.rows(), n = b.cols();
  Tensor c({m, n});
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  double* cd = c.data().data();
#pragma omp parallel for schedule(static) if (m * k * n > 32768)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(m); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* crow = cd + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double api = ad[p * m + i];
      const double* brow = bd + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += api * brow[j];
    }
  }
  return c;
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t channels_in,
              const ConvGeometry& geom) {
  check_conv_operands(x, kernel, channels_in, geom, false);
  const std::size_t ho = geom.out_height(), wo = geom.out_width(), dout = kernel.cols();
  Tensor y({ho * wo, dout});
#pragma omp parallel for schedule(static) if (ho * wo * dout * kernel.rows() > 32768)
  for (std::ptrdiff_t tt = 0; tt < static_cast<std::ptrdiff_t>(ho * wo); ++tt) {
    const auto t = static_cast<std::size_t>(tt);
    const std::size_t oi = t / wo, oj = t % wo;
    double* yrow = &y(t, 0);
    for (std::size_t ki = 0; ki < geom.kernel_height; ++ki) {
      for (std::size_t kj = 0; kj < geom.kernel_width; ++kj) {
        const long src = geom.source_token(oi, oj, ki, kj);
        if (src < 0) continue;
        const std::size_t base = (ki * geom.kernel_width + kj) * channels_in;
        for (std::size_t c = 0; c < channels_in; ++c) {
          const double xv = x(static_cast<std::size_t>(src), c);
          const double* krow = row(kernel, base + c);
          for (std::size_t o = 0; o < dout; ++o) yrow[o] += xv * krow[o];
        }
      }
    }
  }
  return y;
}

Tensor conv2d_adjoint(const Tensor& g, const Tensor& kernel, std::size_t channels_in,
                      const ConvGeometry& geom) {
  check_conv_operands(g, kernel, channels_in, geom, true);
  const std::size_t ho = geom.out_height(), wo = geom.out_width(), dout = kernel.cols();
  const std::size_t h = geom.in_height, w = geom.in_width;
  const auto stride = static_cast<long>(geom.stride);
  const auto pad = static_cast<long>(geom.padding);
  Tensor x({h * w, channels_in});
#pragma omp parallel for schedule(static) if (h * w * dout * kernel.rows() > 32768)
  for (std::ptrdiff_t pp = 0; pp < static_cast<std::ptrdiff_t>(h * w); ++pp) {
    const auto p = static_cast<std::size_t>(pp);
    const long pi = static_cast<long>(p / w), pj = static_cast<long>(p % w);
    double* xrow = &x(p, 0);
    for (std::size_t ki = 0; ki < geom.kernel_height; ++ki) {
      const long ni = pi + pad - static_cast<long>(ki);
      if (ni < 0 || ni % stride != 0 || ni / stride >= static_cast<long>(ho)) continue;
      const auto oi = static_cast<std::size_t>(ni / stride);
      for (std::size_t kj = 0; kj < geom.kernel_width; ++kj) {
        const long nj = pj + pad - static_cast<long>(kj);
        if (nj < 0 || nj % stride != 0 || nj / stride >= static_cast<long>(wo)) continue;
        const auto oj = static_cast<std::size_t>(nj / stride);
        const double* grow = row(g, oi * wo + oj);
        const std::size_t base = (ki * geom.kernel_width + kj) * channels_in;
        for (std::size_t c = 0; c < channels_in; ++c) {
          const double* krow = row(kernel, base + c);
          double acc = 0.0;
          for (std::size_t o = 0; o < dout; ++o) acc += grow[o] * krow[o];
          xrow[c] += acc;
        }
      }
    }
  }
  return x;
}

}  // namespace parallel
}  // namespace omenn::kernels

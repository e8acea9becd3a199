#pragma once

#include "omenn/tensor.hpp"

// Hot loops of the engine. Every kernel exists twice: `serial` is the plain
// reference kept for testing and benchmarking, `parallel` is the OpenMP
// version the library calls. Both take row-major rank-2 tensors.
namespace omenn::kernels {

namespace serial {
Tensor matmul(const Tensor& a, const Tensor& b);     // a * b
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a * b^T
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // a^T * b
/// Cross-correlation of x (t_in x d_in) with a patch-major kernel
/// (kh*kw*d_in x d_out); no bias.
Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t channels_in,
              const ConvGeometry& geom);
/// Transpose of conv2d with respect to x (col2im scatter).
Tensor conv2d_adjoint(const Tensor& g, const Tensor& kernel, std::size_t channels_in,
                      const ConvGeometry& geom);
}  // namespace serial

namespace parallel {
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t channels_in,
              const ConvGeometry& geom);
/// Gather formulation: each input cell collects from the outputs that read it,
/// so threads never write the same cell.
Tensor conv2d_adjoint(const Tensor& g, const Tensor& kernel, std::size_t channels_in,
                      const ConvGeometry& geom);
}  // namespace parallel

int max_threads() noexcept;

}  // namespace omenn::kernels

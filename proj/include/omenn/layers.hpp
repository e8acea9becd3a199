#pragma once

#include <string>
#include <vector>

#include "omenn/model.hpp"
#include "omenn/tensor.hpp"

namespace omenn {

/// Collects non-fatal numerical notes (e.g. clamped normalization scales).
struct Diagnostics {
  std::vector<std::string> messages;
  void note(std::string message) { messages.push_back(std::move(message)); }
};

namespace act {
double gaussian_cdf(double x);
double gaussian_pdf(double x);
double sigmoid(double x);

/// Input-dependent multiplier xi with phi(x) = x * xi(x).
double multiplier(const ActivationParams& p, double x);
/// phi(x).
double apply(const ActivationParams& p, double x);
/// d phi / dx, the ordinary local derivative.
double derivative(const ActivationParams& p, double x);
}  // namespace act

/// Shape after the layer; throws ShapeChain when the layer cannot accept `in`.
Shape2D output_shape(const Layer& layer, const Shape2D& in);
/// Validates the whole chain and returns the final shape.
Shape2D output_shape(const std::vector<Layer>& layers, const Shape2D& in);

/// Plain (non-augmented) forward pass of one layer on x (tokens x channels).
Tensor forward(const Layer& layer, const Tensor& x, const Shape2D& in,
               Diagnostics* diag = nullptr);
Tensor forward(const std::vector<Layer>& layers, const Tensor& x, const Shape2D& in,
               Diagnostics* diag = nullptr);

/// Vector-Jacobian product with the true local Jacobian at x: returns
/// dL/dx given dL/dy. Used by the gradient baselines.
Tensor vjp(const Layer& layer, const Tensor& x, const Shape2D& in, const Tensor& grad_out);
Tensor vjp(const std::vector<Layer>& layers, const Tensor& x, const Shape2D& in,
           const Tensor& grad_out);

// Shared helpers so plain and frozen paths see identical statistics.
namespace detail {

struct NormCoefficients {
  Tensor scale;  // tokens x channels
  Tensor shift;  // tokens x channels
};
NormCoefficients norm_coefficients(const NormParams& p, const Tensor& x, Diagnostics* diag);

struct HeadActivations {
  Tensor q, k, v;  // tokens x head width
  Tensor attention;  // tokens x tokens, rows sum to one
};
HeadActivations attention_head(const AttentionHead& head, double dk, const Tensor& x);
double effective_dk(const AttentionHead& head, double dk);

/// Flat patch-major kernel (kh*kw*d_in x d_out) from a kh x kw x d_in x d_out tensor.
Tensor kernel_matrix(const Tensor& kernel);
ConvGeometry conv_geometry(const ConvParams& p, const Shape2D& in);
ConvGeometry pool_geometry(const PoolParams& p, const Shape2D& in);

/// Argmax input token per (output token, channel) of a max-pool window,
/// lowest flat index on ties.
std::vector<std::size_t> maxpool_argmax(const PoolParams& p, const Tensor& x,
                                        const Shape2D& in);

}  // namespace detail
}  // namespace omenn

#pragma once

#include <cstddef>
#include <vector>

#include "omenn/dynlinear.hpp"
#include "omenn/model.hpp"
#include "omenn/tensor.hpp"

namespace omenn {

/// X~ = [X, 1]. `shape` keeps the spatial layout of the raw input.
struct AugmentedInput {
  Tensor x_aug;  // tokens x (channels + 1)
  Shape2D shape;
};

AugmentedInput augment(const Tensor& x, const Shape2D& shape);
AugmentedInput augment(const Tensor& x);
Tensor strip(const AugmentedInput& input);

/// The network frozen at one input: W~_n ... W~_1 kept as implicit operators.
struct FrozenTrace {
  std::vector<OpPtr> ops;
  AugmentedInput input;
  std::vector<Tensor> activations;  // plain forward input of each layer, then the output
  Tensor output;                    // final plain activation
  Tensor logits;                    // row-major flattening of `output`
  Diagnostics diagnostics;

  /// Applies every frozen op to X~.
  [[nodiscard]] Tensor apply(const Tensor& x_aug) const;
};

/// Runs the plain forward pass and freezes every layer at its actual input.
/// Throws a capability error naming the layer when one has no linear form.
FrozenTrace freeze_network(const ModelGraph& model, const Tensor& x);

/// Row k of Omega~_w as a tokens x (channels + 1) matrix (C~_wb), computed
/// by one adjoint sweep from the logit back to the input.
Tensor contribution_row(const FrozenTrace& trace, std::size_t logit_index);

struct ExplanationResult {
  Tensor c_wb;  // tokens x (channels + 1)
  Tensor c_w;   // tokens x channels
  Tensor c_b;   // tokens x 1
  Tensor c;     // tokens x 1
  double logit = 0.0;
  double completeness_residual = 0.0;
  bool flagged = false;  // residual above the soft tolerance
};

struct ExplainOptions {
  /// Soft bound: residual <= tolerance * max(1, |f(x)|) else flagged.
  double tolerance = 1e-6;
  /// Hard cap on the relative residual; above it an integrity error is thrown.
  double hard_cap = 1e-4;
};

/// Assembles C_w, C_b and C from C~_wb and X and checks completeness.
ExplanationResult assemble_explanation(const Tensor& c_wb, const Tensor& x, double logit,
                                       const ExplainOptions& options = {});

ExplanationResult explain(const FrozenTrace& trace, std::size_t class_index,
                          const ExplainOptions& options = {});
ExplanationResult explain(const ModelGraph& model, const Tensor& x, std::size_t class_index,
                          const ExplainOptions& options = {});

/// Plain forward pass, returning the flattened logits.
Tensor model_logits(const ModelGraph& model, const Tensor& x);

/// d logit_k / dX with the true local Jacobians (tokens x channels).
Tensor explain_gradient(const ModelGraph& model, const Tensor& x, std::size_t class_index);
/// Gradient times input, summed over channels (tokens x 1).
Tensor gradient_times_input(const Tensor& gradient, const Tensor& x);
/// Sum over channels of a tokens x channels map (tokens x 1).
Tensor sum_channels(const Tensor& m);

}  // namespace omenn

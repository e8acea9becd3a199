#pragma once

#include <vector>

#include "omenn/dynlinear.hpp"
#include "omenn/engine.hpp"
#include "omenn/model.hpp"

// Brute-force ground truth. Every frozen operator is written out as an
// explicit dense matrix over column-major vec(X~), built from its Kronecker,
// doubly block-Toeplitz, diagonal or selection form rather than from apply().
// Intended for small models only; every entry point enforces a size cap.
namespace omenn::oracle {

/// Affine map y = W x + b over column-major vectorized activations. The fused
/// form has an empty b and acts on vec(X~).
struct DenseAffine {
  Tensor w;
  Tensor b;  // rank-1, empty for fused maps

  [[nodiscard]] bool fused() const noexcept { return b.size() == 0; }
};

struct OracleOptions {
  std::size_t cap = kDefaultDenseCap;  // max augmented length of any activation
};

/// Fused dense matrix W~ of a frozen op.
DenseAffine materialize(const DynLinearOp& op, const OracleOptions& options = {});
/// Unfused (W, b) of a frozen op, read off the fused form with the ones channel fixed to 1.
DenseAffine materialize_unfused(const DynLinearOp& op, const OracleOptions& options = {});

struct UnfusedComposition {
  Tensor omega_w;     // prod_{i=n..1} W_i
  Tensor bias_total;  // sum_i Omega_{b_i} b_i
};

/// Composes unfused layers; Omega_{b_n} is the identity.
UnfusedComposition compose_unfused(const std::vector<DenseAffine>& layers);
/// Omega~_w = prod_{i=n..1} W~_i, multiplied left to right in order.
Tensor compose_fused(const std::vector<DenseAffine>& layers);

/// Explanation via the dense Omega~_w of a frozen trace.
ExplanationResult oracle_explain(const FrozenTrace& trace, std::size_t class_index,
                                 const OracleOptions& options = {});
ExplanationResult oracle_explain(const ModelGraph& model, const Tensor& x,
                                 std::size_t class_index, const OracleOptions& options = {});

}  // namespace omenn::oracle

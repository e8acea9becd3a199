#pragma once

#include <memory>
#include <string_view>
#include <vector>

#include "omenn/layers.hpp"
#include "omenn/model.hpp"
#include "omenn/tensor.hpp"

namespace omenn {

/// One layer frozen at a concrete input: a linear operator on augmented
/// activations. Operands are (tokens x (channels + 1)) matrices whose last
/// column is the ones channel; the operator maps [X, 1] to [layer(X), 1].
///
/// `apply` and `apply_adjoint` are exact transposes of one another. Shapes
/// reported by in_shape/out_shape exclude the ones channel.
class DynLinearOp {
 public:
  virtual ~DynLinearOp() = default;

  [[nodiscard]] virtual std::string_view kind() const noexcept = 0;
  [[nodiscard]] virtual Shape2D in_shape() const noexcept = 0;
  [[nodiscard]] virtual Shape2D out_shape() const noexcept = 0;
  [[nodiscard]] virtual Tensor apply(const Tensor& u) const = 0;
  [[nodiscard]] virtual Tensor apply_adjoint(const Tensor& g) const = 0;

 protected:
  void check_input(const Tensor& u) const;
  void check_cotangent(const Tensor& g) const;
};

using OpPtr = std::shared_ptr<const DynLinearOp>;

/// X~ -> X~ * W~ with W~ = [[W, 0], [b, 1]] shared by every token.
/// Fully-connected layers, batch norm and attention output projections.
class FusedAffineOp final : public DynLinearOp {
 public:
  FusedAffineOp(Tensor fused_weight, Shape2D in, Shape2D out);
  std::string_view kind() const noexcept override { return "fused_affine"; }
  Shape2D in_shape() const noexcept override { return in_; }
  Shape2D out_shape() const noexcept override { return out_; }
  Tensor apply(const Tensor& u) const override;
  Tensor apply_adjoint(const Tensor& g) const override;
  /// (d_in + 1) x (d_out + 1).
  [[nodiscard]] const Tensor& fused_weight() const noexcept { return w_; }

 private:
  Tensor w_;
  Shape2D in_, out_;
};

/// Per-token scale and shift riding on the ones channel (layer norm with
/// frozen statistics): y[i,j] = u[i,j]*scale[i,j] + u[i,ones]*shift[i,j].
class TokenwiseAffineOp final : public DynLinearOp {
 public:
  TokenwiseAffineOp(Tensor scale, Tensor shift, Shape2D shape);
  std::string_view kind() const noexcept override { return "tokenwise_affine"; }
  Shape2D in_shape() const noexcept override { return shape_; }
  Shape2D out_shape() const noexcept override { return shape_; }
  Tensor apply(const Tensor& u) const override;
  Tensor apply_adjoint(const Tensor& g) const override;
  [[nodiscard]] const Tensor& scale() const noexcept { return scale_; }
  [[nodiscard]] const Tensor& shift() const noexcept { return shift_; }

 private:
  Tensor scale_, shift_;
  Shape2D shape_;
};

/// Elementwise multiplier [xi(X), 1]: activations.
class DiagonalOp final : public DynLinearOp {
 public:
  DiagonalOp(Tensor multiplier, Shape2D shape);
  std::string_view kind() const noexcept override { return "diagonal"; }
  Shape2D in_shape() const noexcept override { return shape_; }
  Shape2D out_shape() const noexcept override { return shape_; }
  Tensor apply(const Tensor& u) const override;
  Tensor apply_adjoint(const Tensor& g) const override;
  /// tokens x (channels + 1), last column all ones.
  [[nodiscard]] const Tensor& multiplier() const noexcept { return m_; }

 private:
  Tensor m_;
  Shape2D shape_;
};

/// [A_1 X~ W~_v1, ..., A_h X~ W~_vh, X~ W~_aug] with frozen attention maps.
class AttentionOp final : public DynLinearOp {
 public:
  AttentionOp(std::vector<Tensor> attention, std::vector<Tensor> fused_values, Shape2D in);
  std::string_view kind() const noexcept override { return "attention"; }
  Shape2D in_shape() const noexcept override { return in_; }
  Shape2D out_shape() const noexcept override { return out_; }
  Tensor apply(const Tensor& u) const override;
  Tensor apply_adjoint(const Tensor& g) const override;
  [[nodiscard]] const std::vector<Tensor>& attention() const noexcept { return a_; }
  /// Per head (d_in + 1) x d_v: [W_v; b_v].
  [[nodiscard]] const std::vector<Tensor>& fused_values() const noexcept { return wv_; }
  /// (d_in + 1) x 1 passthrough [0, ..., 0, 1]^T.
  [[nodiscard]] Tensor ones_passthrough() const;

 private:
  std::vector<Tensor> a_;
  std::vector<Tensor> wv_;
  Shape2D in_, out_;
  std::size_t head_width_;
};

/// Convolution on the augmented input with the static kernel K~_w and the
/// position-dependent bias kernel K~_b_i = (1/s_i) [[0, B~], [0, 1]], where
/// s_i counts the non-padded cells of receptive field i.
class ConvOp final : public DynLinearOp {
 public:
  ConvOp(Tensor kernel, Tensor bias, ConvGeometry geom, std::vector<double> patch_sums,
         Shape2D in, Shape2D out);
  std::string_view kind() const noexcept override { return "conv2d"; }
  Shape2D in_shape() const noexcept override { return in_; }
  Shape2D out_shape() const noexcept override { return out_; }
  Tensor apply(const Tensor& u) const override;
  Tensor apply_adjoint(const Tensor& g) const override;
  [[nodiscard]] const Tensor& kernel() const noexcept { return kernel_; }  // kh x kw x din x dout
  [[nodiscard]] const Tensor& bias() const noexcept { return bias_; }
  [[nodiscard]] const ConvGeometry& geometry() const noexcept { return geom_; }
  /// s_i per output token.
  [[nodiscard]] const std::vector<double>& patch_sums() const noexcept { return s_; }

 private:
  Tensor kernel_;
  Tensor kmat_;
  Tensor bias_;
  ConvGeometry geom_;
  std::vector<double> s_;
  Shape2D in_, out_;
};

/// Each output cell copies one input cell (max-pool selections, flatten,
/// token selection). Sources are (token, channel) pairs over the augmented
/// input, output cells in row-major order including the ones column.
class GatherOp final : public DynLinearOp {
 public:
  struct Source {
    std::size_t token;
    std::size_t channel;
  };
  GatherOp(std::string_view kind, std::vector<Source> sources, Shape2D in, Shape2D out);
  std::string_view kind() const noexcept override { return kind_; }
  Shape2D in_shape() const noexcept override { return in_; }
  Shape2D out_shape() const noexcept override { return out_; }
  Tensor apply(const Tensor& u) const override;
  Tensor apply_adjoint(const Tensor& g) const override;
  [[nodiscard]] const std::vector<Source>& sources() const noexcept { return src_; }

 private:
  std::string_view kind_;
  std::vector<Source> src_;
  Shape2D in_, out_;
};

/// X~ -> P X~ for a fixed token-mixing matrix P (average pooling, mean
/// token selection). Rows of P sum to one, so the ones channel survives.
class TokenMixOp final : public DynLinearOp {
 public:
  TokenMixOp(std::string_view kind, Tensor mix, Shape2D in, Shape2D out);
  std::string_view kind() const noexcept override { return kind_; }
  Shape2D in_shape() const noexcept override { return in_; }
  Shape2D out_shape() const noexcept override { return out_; }
  Tensor apply(const Tensor& u) const override;
  Tensor apply_adjoint(const Tensor& g) const override;
  [[nodiscard]] const Tensor& mix() const noexcept { return p_; }

 private:
  std::string_view kind_;
  Tensor p_;
  Shape2D in_, out_;
};

/// Composition op_n o ... o op_1. Empty means identity on `shape`.
class SequenceOp final : public DynLinearOp {
 public:
  SequenceOp(std::vector<OpPtr> ops, Shape2D shape_if_empty);
  std::string_view kind() const noexcept override { return "sequence"; }
  Shape2D in_shape() const noexcept override;
  Shape2D out_shape() const noexcept override;
  Tensor apply(const Tensor& u) const override;
  Tensor apply_adjoint(const Tensor& g) const override;
  [[nodiscard]] const std::vector<OpPtr>& ops() const noexcept { return ops_; }

 private:
  std::vector<OpPtr> ops_;
  Shape2D identity_shape_;
};

/// Sum of branches. Only the branch `ones_owner` writes the ones channel of
/// the output; the other branches' ones column is masked to zero.
class ResidualOp final : public DynLinearOp {
 public:
  ResidualOp(std::vector<OpPtr> branches, std::size_t ones_owner);
  std::string_view kind() const noexcept override { return "residual"; }
  Shape2D in_shape() const noexcept override { return branches_.front()->in_shape(); }
  Shape2D out_shape() const noexcept override { return branches_.front()->out_shape(); }
  Tensor apply(const Tensor& u) const override;
  Tensor apply_adjoint(const Tensor& g) const override;
  [[nodiscard]] const std::vector<OpPtr>& branches() const noexcept { return branches_; }
  [[nodiscard]] std::size_t ones_owner() const noexcept { return owner_; }

 private:
  std::vector<OpPtr> branches_;
  std::size_t owner_;
};

// Freezing. Every function takes the augmented input X~ at which the
// input-dependent factors are evaluated and then held constant.
OpPtr freeze_fc(const FcParams& params, const Tensor& x_aug, const Shape2D& in);
OpPtr freeze_norm(const NormParams& params, const Tensor& x_aug, const Shape2D& in,
                  Diagnostics* diag = nullptr);
OpPtr freeze_activation(const ActivationParams& params, const Tensor& x_aug, const Shape2D& in);
OpPtr freeze_attention(const AttentionParams& params, const Tensor& x_aug, const Shape2D& in);
OpPtr freeze_multihead(const MultiHeadParams& params, const Tensor& x_aug, const Shape2D& in);
OpPtr freeze_conv(const ConvParams& params, const Tensor& x_aug, const Shape2D& in);
OpPtr freeze_residual(std::vector<OpPtr> branch_ops, const Tensor& x_aug,
                      std::size_t ones_owner = 0);
OpPtr freeze_maxpool(const PoolParams& params, const Tensor& x_aug, const Shape2D& in);
OpPtr freeze_avgpool(const PoolParams& params, const Tensor& x_aug, const Shape2D& in);
OpPtr freeze_flatten(const Tensor& x_aug, const Shape2D& in);
OpPtr freeze_token_select(const TokenSelectParams& params, const Tensor& x_aug,
                          const Shape2D& in);

/// Dispatch on layer kind; residual branches are frozen recursively.
/// Throws a capability error for kinds without a linear form.
OpPtr freeze_layer(const Layer& layer, const Tensor& x_aug, const Shape2D& in,
                   Diagnostics* diag = nullptr);
/// Freezes a layer chain, propagating the augmented activation through it.
OpPtr freeze_chain(const std::vector<Layer>& layers, const Tensor& x_aug, const Shape2D& in,
                   Diagnostics* diag = nullptr);

/// [X, 1] and its inverse.
Tensor augment_matrix(const Tensor& x);
Tensor strip_ones(const Tensor& x_aug);

}  // namespace omenn

#pragma once

#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include "omenn/tensor.hpp"

namespace omenn {

enum class LayerKind {
  FullyConnected,
  Normalization,
  Conv2D,
  Activation,
  Attention,
  MultiHeadAttention,
  Residual,
  MaxPool2D,
  AvgPool2D,
  Flatten,
  TokenSelect,
  // Recognized and evaluable, but with no input-dependent linear form.
  Softmax,
  Sigmoid,
  Tanh,
};

const char* to_string(LayerKind kind) noexcept;
bool has_linear_form(LayerKind kind) noexcept;

enum class ActivationKind { GELU, GELUTanh, SWISH, ReLU, LeakyReLU };

const char* to_string(ActivationKind kind) noexcept;
/// Inverse of to_string; throws UnknownKind.
ActivationKind parse_activation(const std::string& name);

struct FcParams {
  Tensor weight;  // d_in x d_out
  Tensor bias;    // d_out
};

enum class NormMode { Batch, Layer };

struct NormParams {
  NormMode mode = NormMode::Layer;
  Tensor gamma;
  Tensor beta;
  Tensor mean;      // batch mode only
  Tensor variance;  // batch mode only
  double eps = 1e-5;
};

struct ConvParams {
  Tensor kernel;  // kh x kw x d_in x d_out
  Tensor bias;    // d_out
  std::size_t stride = 1;
  std::size_t padding = 0;
};

struct ActivationParams {
  ActivationKind kind = ActivationKind::GELU;
  double alpha = 0.0;  // LeakyReLU slope, in [0, 1)
};

/// One scaled dot-product attention head. Weights map d_in -> head width.
struct AttentionHead {
  Tensor wq, bq;
  Tensor wk, bk;
  Tensor wv, bv;
};

struct AttentionParams {
  AttentionHead head;
  double dk = 0.0;  // 0 selects the query width
};

struct MultiHeadParams {
  std::vector<AttentionHead> heads;
  double dk = 0.0;
  Tensor wu;  // (heads * d_v) x d_out
  Tensor bu;  // d_out
};

struct Layer;

/// Y = sum of branch outputs. An empty branch is the identity (skip path).
/// `ones_owner` names the branch that carries the augmented ones channel.
struct ResidualParams {
  std::vector<std::vector<Layer>> branches;
  std::size_t ones_owner = 0;
};

struct PoolParams {
  std::size_t window = 2;
  std::size_t stride = 2;
};

enum class TokenSelectMode { Index, Mean };

struct TokenSelectParams {
  TokenSelectMode mode = TokenSelectMode::Index;
  std::size_t index = 0;
};

using LayerParams =
    std::variant<std::monostate, FcParams, NormParams, ConvParams, ActivationParams,
                 AttentionParams, MultiHeadParams, ResidualParams, PoolParams, TokenSelectParams>;

struct Layer {
  LayerKind kind = LayerKind::FullyConnected;
  std::string name;
  LayerParams params;
};

/// Declarative network: input layout, ordered layers, and the head width.
/// Logit k is element k of the row-major flattened final activation.
struct ModelGraph {
  Shape2D input;
  std::size_t logits = 0;
  std::vector<Layer> layers;
  std::string source_dtype = "float64";
};

// Layer builders, used by generators and tests.
Layer fc_layer(Tensor weight, Tensor bias, std::string name = {});
Layer batch_norm_layer(Tensor gamma, Tensor beta, Tensor mean, Tensor variance, double eps,
                       std::string name = {});
Layer layer_norm_layer(Tensor gamma, Tensor beta, double eps, std::string name = {});
Layer conv_layer(Tensor kernel, Tensor bias, std::size_t stride, std::size_t padding,
                 std::string name = {});
Layer activation_layer(ActivationKind kind, double alpha = 0.0, std::string name = {});
Layer attention_layer(AttentionHead head, double dk = 0.0, std::string name = {});
Layer multihead_layer(std::vector<AttentionHead> heads, Tensor wu, Tensor bu, double dk = 0.0,
                      std::string name = {});
Layer residual_layer(std::vector<std::vector<Layer>> branches, std::size_t ones_owner = 0,
                     std::string name = {});
Layer maxpool_layer(std::size_t window, std::size_t stride, std::string name = {});
Layer avgpool_layer(std::size_t window, std::size_t stride, std::string name = {});
Layer flatten_layer(std::string name = {});
Layer token_select_layer(TokenSelectMode mode, std::size_t index = 0, std::string name = {});
Layer opaque_layer(LayerKind kind, std::string name = {});

}  // namespace omenn

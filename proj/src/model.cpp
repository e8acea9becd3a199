#include "omenn/model.hpp"

namespace omenn {

const char* to_string(LayerKind kind) noexcept {
  switch (kind) {
    case LayerKind::FullyConnected: return "fc";
    case LayerKind::Normalization: return "norm";
    case LayerKind::Conv2D: return "conv2d";
    case LayerKind::Activation: return "activation";
    case LayerKind::Attention: return "attention";
    case LayerKind::MultiHeadAttention: return "multihead_attention";
    case LayerKind::Residual: return "residual";
    case LayerKind::MaxPool2D: return "maxpool2d";
    case LayerKind::AvgPool2D: return "avgpool2d";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::TokenSelect: return "token_select";
    case LayerKind::Softmax: return "softmax";
    case LayerKind::Sigmoid: return "sigmoid";
    case LayerKind::Tanh: return "tanh";
  }
  return "unknown";
}

bool has_linear_form(LayerKind kind) noexcept {
  switch (kind) {
    case LayerKind::Softmax:
    case LayerKind::Sigmoid:
    case LayerKind::Tanh:
      return false;
    default:
      return true;
  }
}

const char* to_string(ActivationKind kind) noexcept {
  switch (kind) {
    case ActivationKind::GELU: return "gelu";
    case ActivationKind::GELUTanh: return "gelu_tanh";
    case ActivationKind::SWISH: return "swish";
    case ActivationKind::ReLU: return "relu";
    case ActivationKind::LeakyReLU: return "leaky_relu";
  }
  return "unknown";
}

ActivationKind parse_activation(const std::string& name) {
  for (auto k : {ActivationKind::GELU, ActivationKind::GELUTanh, ActivationKind::SWISH,
                 ActivationKind::ReLU, ActivationKind::LeakyReLU}) {
    if (name == to_string(k)) return k;
  }
  fail(ErrorCode::UnknownKind, "unknown activation '" + name + "'");
}

Layer fc_layer(Tensor weight, Tensor bias, std::string name) {
  return {LayerKind::FullyConnected, std::move(name), FcParams{std::move(weight), std::move(bias)}};
}

Layer batch_norm_layer(Tensor gamma, Tensor beta, Tensor mean, Tensor variance, double eps,
                       std::string name) {
  NormParams p;
  p.mode = NormMode::Batch;
  p.gamma = std::move(gamma);
  p.beta = std::move(beta);
  p.mean = std::move(mean);
  p.variance = std::move(variance);
  p.eps = eps;
  return {LayerKind::Normalization, std::move(name), std::move(p)};
}

Layer layer_norm_layer(Tensor gamma, Tensor beta, double eps, std::string name) {
  NormParams p;
  p.mode = NormMode::Layer;
  p.gamma = std::move(gamma);
  p.beta = std::move(beta);
  p.eps = eps;
  return {LayerKind::Normalization, std::move(name), std::move(p)};
}

Layer conv_layer(Tensor kernel, Tensor bias, std::size_t stride, std::size_t padding,
                 std::string name) {
  return {LayerKind::Conv2D, std::move(name),
          ConvParams{std::move(kernel), std::move(bias), stride, padding}};
}

Layer activation_layer(ActivationKind kind, double alpha, std::string name) {
  return {LayerKind::Activation, std::move(name), ActivationParams{kind, alpha}};
}

Layer attention_layer(AttentionHead head, double dk, std::string name) {
  return {LayerKind::Attention, std::move(name), AttentionParams{std::move(head), dk}};
}

Layer multihead_layer(std::vector<AttentionHead> heads, Tensor wu, Tensor bu, double dk,
                      std::string name) {
  return {LayerKind::MultiHeadAttention, std::move(name),
          MultiHeadParams{std::move(heads), dk, std::move(wu), std::move(bu)}};
}

Layer residual_layer(std::vector<std::vector<Layer>> branches, std::size_t ones_owner,
                     std::string name) {
  return {LayerKind::Residual, std::move(name), ResidualParams{std::move(branches), ones_owner}};
}

Layer maxpool_layer(std::size_t window, std::size_t stride, std::string name) {
  return {LayerKind::MaxPool2D, std::move(name), PoolParams{window, stride}};
}

Layer avgpool_layer(std::size_t window, std::size_t stride, std::string name) {
  return {LayerKind::AvgPool2D, std::move(name), PoolParams{window, stride}};
}

Layer flatten_layer(std::string name) {
  return {LayerKind::Flatten, std::move(name), std::monostate{}};
}

Layer token_select_layer(TokenSelectMode mode, std::size_t index, std::string name) {
  return {LayerKind::TokenSelect, std::move(name), TokenSelectParams{mode, index}};
}

Layer opaque_layer(LayerKind kind, std::string name) {
  return {kind, std::move(name), std::monostate{}};
}

}  // namespace omenn

#include "omenn/generate.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "omenn/layers.hpp"

namespace omenn {
namespace {

class Knobs {
 public:
  explicit Knobs(const ArchSpec& spec) : spec_(spec) {}

  std::size_t size(const std::string& key, std::size_t fallback, std::size_t min = 1) {
    used_.push_back(key);
    const auto it = spec_.knobs.find(key);
    if (it == spec_.knobs.end()) return fallback;
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(it->second, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != it->second.size() || it->second.empty() || it->second[0] == '-') {
      fail(ErrorCode::Parameter, spec_.family + ": knob '" + key + "' must be an integer");
    }
    if (v < min) {
      fail(ErrorCode::Parameter,
           spec_.family + ": knob '" + key + "' must be at least " + std::to_string(min));
    }
    return static_cast<std::size_t>(v);
  }

  double real(const std::string& key, double fallback) {
    used_.push_back(key);
    const auto it = spec_.knobs.find(key);
    if (it == spec_.knobs.end()) return fallback;
    std::size_t pos = 0;
    double v = 0;
    try {
      v = std::stod(it->second, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != it->second.size() || !std::isfinite(v)) {
      fail(ErrorCode::Parameter, spec_.family + ": knob '" + key + "' must be a number");
    }
    return v;
  }

  std::string text(const std::string& key, const std::string& fallback) {
    used_.push_back(key);
    const auto it = spec_.knobs.find(key);
    return it == spec_.knobs.end() ? fallback : it->second;
  }

  void finish() const {
    for (const auto& [key, value] : spec_.knobs) {
      if (std::find(used_.begin(), used_.end(), key) == used_.end()) {
        fail(ErrorCode::Parameter, spec_.family + ": unknown knob '" + key + "'");
      }
    }
  }

 private:
  const ArchSpec& spec_;
  std::vector<std::string> used_;
};

class Init {
 public:
  Init(std::uint64_t seed, double scale) : rng_(seed), scale_(scale) {}

  Tensor weight(std::vector<std::size_t> shape, std::size_t fan_in) {
    const double s = scale_ / std::sqrt(static_cast<double>(fan_in));
    return fill(std::move(shape), -s, s);
  }
  Tensor fill(std::vector<std::size_t> shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (double& v : t.storage()) v = rng_.next(lo, hi);
    return t;
  }

  Layer fc(std::size_t in, std::size_t out) {
    Tensor w = weight({in, out}, in);
    return fc_layer(std::move(w), weight({out}, in));
  }
  Layer batch_norm(std::size_t d) {
    Tensor g = fill({d}, 0.5, 1.5), b = fill({d}, -0.1, 0.1);
    Tensor m = fill({d}, -0.5, 0.5), v = fill({d}, 0.5, 1.5);
    return batch_norm_layer(std::move(g), std::move(b), std::move(m), std::move(v), 1e-5);
  }
  Layer layer_norm(std::size_t d) {
    Tensor g = fill({d}, 0.5, 1.5);
    return layer_norm_layer(std::move(g), fill({d}, -0.1, 0.1), 1e-5);
  }
  Layer conv(std::size_t k, std::size_t din, std::size_t dout, std::size_t stride,
             std::size_t padding) {
    const std::size_t fan_in = k * k * din;
    Tensor w = weight({k, k, din, dout}, fan_in);
    return conv_layer(std::move(w), weight({dout}, fan_in), stride, padding);
  }
  AttentionHead head(std::size_t din, std::size_t dh) {
    AttentionHead h;
    h.wq = weight({din, dh}, din);
    h.bq = weight({dh}, din);
    h.wk = weight({din, dh}, din);
    h.bk = weight({dh}, din);
    h.wv = weight({din, dh}, din);
    h.bv = weight({dh}, din);
    return h;
  }

 private:
  Uniform rng_;
  double scale_;
};

Layer activation(const std::string& name, double alpha) {
  const ActivationKind kind = parse_activation(name);
  if (kind == ActivationKind::LeakyReLU && (alpha < 0.0 || alpha >= 1.0)) {
    fail(ErrorCode::Parameter, "leaky_relu alpha must lie in [0, 1)");
  }
  return activation_layer(kind, kind == ActivationKind::LeakyReLU ? alpha : 0.0);
}

std::vector<std::size_t> parse_widths(const std::string& text) {
  std::vector<std::size_t> widths;
  if (text.empty() || text == "0") return widths;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    std::size_t pos = 0;
    std::size_t v = 0;
    try {
      v = std::stoul(part, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != part.size() || part.empty() || v == 0) {
      fail(ErrorCode::Parameter, "mlp: hidden widths must look like 8 or 8x4");
    }
    widths.push_back(v);
  }
  return widths;
}

ModelGraph mlp(const ArchSpec& spec, std::uint64_t seed) {
  Knobs k(spec);
  const std::size_t in = k.size("in", 4), out = k.size("out", 2), tokens = k.size("tokens", 1);
  const auto hidden = parse_widths(k.text("hidden", "8"));
  const std::string act = k.text("act", "gelu");
  const double alpha = k.real("alpha", 0.1);
  const bool bn = k.size("batchnorm", 0, 0) != 0;
  Init init(seed, k.real("scale", 1.0));
  k.finish();

  ModelGraph m;
  m.input = flat_shape(tokens, in);
  std::size_t d = in;
  for (std::size_t h : hidden) {
    m.layers.push_back(init.fc(d, h));
    if (bn) m.layers.push_back(init.batch_norm(h));
    m.layers.push_back(activation(act, alpha));
    d = h;
  }
  m.layers.push_back(init.fc(d, out));
  m.logits = tokens * out;
  return m;
}

ModelGraph cnn(const ArchSpec& spec, std::uint64_t seed) {
  Knobs k(spec);
  const std::size_t h = k.size("h", 6), w = k.size("w", 6), c = k.size("c", 1);
  const std::size_t filters = k.size("filters", 3), kernel = k.size("kernel", 3);
  const std::size_t padding = k.size("padding", 1, 0), stride = k.size("stride", 1);
  const std::size_t blocks = k.size("blocks", 1), out = k.size("out", 2);
  const std::string act = k.text("act", "relu"), pool = k.text("pool", "max");
  const double alpha = k.real("alpha", 0.1);
  const bool bn = k.size("batchnorm", 0, 0) != 0;
  Init init(seed, k.real("scale", 1.0));
  k.finish();
  if (pool != "max" && pool != "avg" && pool != "none") {
    fail(ErrorCode::Parameter, "cnn: pool must be max, avg or none");
  }

  ModelGraph m;
  m.input = image_shape(h, w, c);
  std::size_t d = c;
  for (std::size_t b = 0; b < blocks; ++b) {
    m.layers.push_back(init.conv(kernel, d, filters, stride, padding));
    if (bn) m.layers.push_back(init.batch_norm(filters));
    m.layers.push_back(activation(act, alpha));
    if (pool == "max") m.layers.push_back(maxpool_layer(2, 2));
    if (pool == "avg") m.layers.push_back(avgpool_layer(2, 2));
    d = filters;
  }
  m.layers.push_back(flatten_layer());
  Shape2D s;
  try {
    s = output_shape(m.layers, m.input);
  } catch (const Error& e) {
    fail(ErrorCode::Parameter, std::string("cnn: knobs give an invalid network: ") + e.what());
  }
  m.layers.push_back(init.fc(s.channels, out));
  m.logits = out;
  return m;
}

ModelGraph vit_block(const ArchSpec& spec, std::uint64_t seed) {
  Knobs k(spec);
  const std::size_t h = k.size("h", 4), w = k.size("w", 4), c = k.size("c", 1);
  const std::size_t patch = k.size("patch", 2), dim = k.size("dim", 4);
  const std::size_t heads = k.size("heads", 2), hidden = k.size("mlp", 8);
  const std::size_t blocks = k.size("blocks", 1), out = k.size("out", 2);
  const std::string act = k.text("act", "gelu"), select = k.text("select", "cls");
  Init init(seed, k.real("scale", 1.0));
  k.finish();
  if (h % patch != 0 || w % patch != 0) {
    fail(ErrorCode::Parameter, "vit-block: patch must divide h and w");
  }
  if (dim % heads != 0) fail(ErrorCode::Parameter, "vit-block: heads must divide dim");
  if (select != "cls" && select != "mean") {
    fail(ErrorCode::Parameter, "vit-block: select must be cls or mean");
  }

  ModelGraph m;
  m.input = image_shape(h, w, c);
  m.layers.push_back(init.conv(patch, c, dim, patch, 0));
  const std::size_t dh = dim / heads;
  for (std::size_t b = 0; b < blocks; ++b) {
    std::vector<AttentionHead> hs;
    for (std::size_t i = 0; i < heads; ++i) hs.push_back(init.head(dim, dh));
    Tensor wu = init.weight({heads * dh, dim}, heads * dh);
    Tensor bu = init.weight({dim}, heads * dh);
    std::vector<Layer> attn;
    attn.push_back(init.layer_norm(dim));
    attn.push_back(multihead_layer(std::move(hs), std::move(wu), std::move(bu)));
    m.layers.push_back(residual_layer({{}, std::move(attn)}));

    std::vector<Layer> ffn;
    ffn.push_back(init.layer_norm(dim));
    ffn.push_back(init.fc(dim, hidden));
    ffn.push_back(activation(act, 0.1));
    ffn.push_back(init.fc(hidden, dim));
    m.layers.push_back(residual_layer({{}, std::move(ffn)}));
  }
  m.layers.push_back(init.layer_norm(dim));
  m.layers.push_back(select == "cls" ? token_select_layer(TokenSelectMode::Index, 0)
                                     : token_select_layer(TokenSelectMode::Mean));
  m.layers.push_back(init.fc(dim, out));
  m.logits = out;
  return m;
}

}  // namespace

Uniform::Uniform(std::uint64_t seed) : engine_(seed) {}

double Uniform::next() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

std::size_t Uniform::below(std::size_t n) {
  if (n == 0) fail(ErrorCode::Parameter, "Uniform::below: empty range");
  const auto v = static_cast<std::size_t>(next() * static_cast<double>(n));
  return std::min(v, n - 1);
}

ArchSpec parse_arch_spec(const std::string& text) {
  ArchSpec spec;
  const auto colon = text.find(':');
  spec.family = text.substr(0, colon);
  if (spec.family.empty()) fail(ErrorCode::Parameter, "architecture spec has no template name");
  if (colon == std::string::npos) return spec;
  std::stringstream ss(text.substr(colon + 1));
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) {
      fail(ErrorCode::Parameter, "architecture knob '" + item + "' is not key=value");
    }
    spec.knobs[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return spec;
}

std::string to_string(const ArchSpec& spec) {
  std::string s = spec.family;
  char sep = ':';
  for (const auto& [key, value] : spec.knobs) {
    s += sep + key + "=" + value;
    sep = ',';
  }
  return s;
}

ModelGraph generate_random_model(const ArchSpec& spec, std::uint64_t seed) {
  ModelGraph m;
  if (spec.family == "mlp") {
    m = mlp(spec, seed);
  } else if (spec.family == "cnn") {
    m = cnn(spec, seed);
  } else if (spec.family == "vit-block") {
    m = vit_block(spec, seed);
  } else {
    fail(ErrorCode::Parameter, "unknown architecture template '" + spec.family + "'");
  }
  const Shape2D out = output_shape(m.layers, m.input);
  if (out.size() != m.logits) fail(ErrorCode::ShapeChain, "generated head width mismatch");
  return m;
}

Tensor random_input(const Shape2D& shape, std::uint64_t seed, double lo, double hi) {
  Uniform rng(seed);
  Tensor x({shape.tokens, shape.channels});
  for (double& v : x.storage()) v = rng.next(lo, hi);
  return x;
}

}  // namespace omenn

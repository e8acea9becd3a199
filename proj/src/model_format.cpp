#include "omenn/model_format.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>

#include "json.hpp"
#include "omenn/layers.hpp"

namespace omenn::format {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little,
              "blob encoding assumes a little-endian host");

constexpr char kMagic[4] = {'O', 'M', 'N', 'B'};
constexpr const char* kFormatName = "omenn-model";

template <class T>
void put(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.insert(out.end(), bytes, bytes + sizeof(T));
}

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, const std::string& name)
      : bytes_(bytes), name_(name) {}

  template <class T>
  T get() {
    if (pos_ + sizeof(T) > bytes_.size()) {
      fail(ErrorCode::Parse, "blob '" + name_ + "': truncated at offset " + std::to_string(pos_));
    }
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  [[nodiscard]] std::size_t pos() const { return pos_; }
  [[nodiscard]] std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  const std::string& name_;
  std::size_t pos_ = 0;
};

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// --- manifest reading -------------------------------------------------------

const json& field(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) {
    fail(ErrorCode::Parse, where + ": missing field '" + key + "'");
  }
  return obj.at(key);
}

std::string string_field(const json& obj, const char* key, const std::string& where) {
  const json& v = field(obj, key, where);
  if (!v.is_string()) fail(ErrorCode::Parse, where + ": field '" + key + "' must be a string");
  return v.get<std::string>();
}

std::size_t size_field(const json& obj, const char* key, const std::string& where) {
  const json& v = field(obj, key, where);
  if (!v.is_number_unsigned()) {
    fail(ErrorCode::Parse, where + ": field '" + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

double number_field(const json& obj, const char* key, const std::string& where, double fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number()) fail(ErrorCode::Parse, where + ": field '" + key + "' must be a number");
  return v.get<double>();
}

class Loader {
 public:
  Loader(fs::path dir, const json& weights) : dir_(std::move(dir)), weights_(weights) {}

  Tensor tensor(const json& obj, const char* key, const std::string& where) {
    const std::string ref = string_field(obj, key, where);
    if (!weights_.is_object() || !weights_.contains(ref)) {
      fail(ErrorCode::MissingBlob, where + ": weight '" + ref + "' is not declared");
    }
    const json& entry = weights_.at(ref);
    const std::string file = string_field(entry, "file", "weight '" + ref + "'");
    const fs::path path = dir_ / file;
    if (!fs::exists(path)) {
      fail(ErrorCode::MissingBlob, where + ": blob file '" + file + "' for '" + ref + "' not found");
    }
    const auto bytes = read_file(path);
    WeightBlob blob = decode_blob(bytes, ref);
    if (entry.contains("crc32") && entry.at("crc32").get<std::uint32_t>() != blob_checksum(bytes)) {
      fail(ErrorCode::Checksum, "weight '" + ref + "': manifest checksum does not match blob");
    }
    std::vector<std::size_t> declared;
    for (const auto& e : field(entry, "shape", "weight '" + ref + "'")) {
      declared.push_back(e.get<std::size_t>());
    }
    if (declared != blob.shape) {
      fail(ErrorCode::ShapeChain, "weight '" + ref + "': blob shape differs from manifest");
    }
    if (entry.contains("dtype") && parse_dtype(entry.at("dtype").get<std::string>()) != blob.dtype) {
      fail(ErrorCode::Parse, "weight '" + ref + "': blob dtype differs from manifest");
    }
    return Tensor(std::move(blob.shape), std::move(blob.values));
  }

  std::vector<Layer> layers(const json& arr, const std::string& where) {
    if (!arr.is_array()) fail(ErrorCode::Parse, where + ": layers must be an array");
    std::vector<Layer> out;
    for (std::size_t i = 0; i < arr.size(); ++i) {
      out.push_back(layer(arr[i], where + "/" + std::to_string(i)));
    }
    return out;
  }

 private:
  AttentionHead head(const json& obj, const std::string& where) {
    AttentionHead h;
    h.wq = tensor(obj, "wq", where);
    h.bq = tensor(obj, "bq", where);
    h.wk = tensor(obj, "wk", where);
    h.bk = tensor(obj, "bk", where);
    h.wv = tensor(obj, "wv", where);
    h.bv = tensor(obj, "bv", where);
    return h;
  }

  Layer layer(const json& obj, const std::string& where) {
    const std::string kind = string_field(obj, "kind", where);
    const std::string name = obj.contains("name") ? obj.at("name").get<std::string>() : "";
    if (kind == "fc") {
      return fc_layer(tensor(obj, "weight", where), tensor(obj, "bias", where), name);
    }
    if (kind == "norm") {
      const std::string mode = string_field(obj, "mode", where);
      const double eps = number_field(obj, "eps", where, 1e-5);
      if (mode == "batch") {
        return batch_norm_layer(tensor(obj, "gamma", where), tensor(obj, "beta", where),
                                tensor(obj, "mean", where), tensor(obj, "variance", where), eps,
                                name);
      }
      if (mode == "layer") {
        return layer_norm_layer(tensor(obj, "gamma", where), tensor(obj, "beta", where), eps, name);
      }
      fail(ErrorCode::Parse, where + ": unknown norm mode '" + mode + "'");
    }
    if (kind == "conv2d") {
      return conv_layer(tensor(obj, "kernel", where), tensor(obj, "bias", where),
                        size_field(obj, "stride", where), size_field(obj, "padding", where), name);
    }
    if (kind == "activation") {
      const std::string fn = string_field(obj, "function", where);
      const double alpha = number_field(obj, "alpha", where, 0.0);
      ActivationKind k;
      try {
        k = parse_activation(fn);
      } catch (const Error& e) {
        fail(ErrorCode::UnknownKind, where + ": " + e.what());
      }
      return activation_layer(k, alpha, name);
    }
    if (kind == "attention") {
      return attention_layer(head(field(obj, "head", where), where),
                             number_field(obj, "dk", where, 0.0), name);
    }
    if (kind == "multihead_attention") {
      std::vector<AttentionHead> heads;
      for (const auto& h : field(obj, "heads", where)) heads.push_back(head(h, where));
      return multihead_layer(std::move(heads), tensor(obj, "wu", where), tensor(obj, "bu", where),
                             number_field(obj, "dk", where, 0.0), name);
    }
    if (kind == "residual") {
      std::vector<std::vector<Layer>> branches;
      const json& arr = field(obj, "branches", where);
      for (std::size_t b = 0; b < arr.size(); ++b) {
        branches.push_back(layers(arr[b], where + "/branch" + std::to_string(b)));
      }
      const std::size_t owner = obj.contains("ones_owner") ? size_field(obj, "ones_owner", where) : 0;
      return residual_layer(std::move(branches), owner, name);
    }
    if (kind == "maxpool2d" || kind == "avgpool2d") {
      const std::size_t window = size_field(obj, "window", where);
      const std::size_t stride = size_field(obj, "stride", where);
      return kind == "maxpool2d" ? maxpool_layer(window, stride, name)
                                 : avgpool_layer(window, stride, name);
    }
    if (kind == "flatten") return flatten_layer(name);
    if (kind == "token_select") {
      const std::string mode = string_field(obj, "mode", where);
      if (mode == "mean") return token_select_layer(TokenSelectMode::Mean, 0, name);
      if (mode == "index") {
        return token_select_layer(TokenSelectMode::Index, size_field(obj, "index", where), name);
      }
      fail(ErrorCode::Parse, where + ": unknown token_select mode '" + mode + "'");
    }
    if (kind == "softmax") return opaque_layer(LayerKind::Softmax, name);
    if (kind == "sigmoid") return opaque_layer(LayerKind::Sigmoid, name);
    if (kind == "tanh") return opaque_layer(LayerKind::Tanh, name);
    fail(ErrorCode::UnknownKind, where + ": unknown layer kind '" + kind + "'");
  }

  fs::path dir_;
  const json& weights_;
};

// --- manifest writing -------------------------------------------------------

class Saver {
 public:
  Saver(fs::path dir, DType dtype) : dir_(std::move(dir)), dtype_(dtype) {}

  json layers(const std::vector<Layer>& ls, const std::string& prefix) {
    json arr = json::array();
    for (std::size_t i = 0; i < ls.size(); ++i) {
      arr.push_back(layer(ls[i], prefix + "l" + std::to_string(i)));
    }
    return arr;
  }

  json weights() const { return weights_; }

 private:
  std::string tensor(const Tensor& t, const std::string& ref) {
    WeightBlob blob{ref, t.shape(), dtype_, t.storage()};
    const auto bytes = encode_blob(blob);
    const std::string file = ref + ".bin";
    write_file(dir_ / file, bytes);
    weights_[ref] = {{"file", file},
                     {"shape", t.shape()},
                     {"dtype", to_string(dtype_)},
                     {"crc32", blob_checksum(bytes)}};
    return ref;
  }

  json head(const AttentionHead& h, const std::string& p) {
    return {{"wq", tensor(h.wq, p + ".wq")}, {"bq", tensor(h.bq, p + ".bq")},
            {"wk", tensor(h.wk, p + ".wk")}, {"bk", tensor(h.bk, p + ".bk")},
            {"wv", tensor(h.wv, p + ".wv")}, {"bv", tensor(h.bv, p + ".bv")}};
  }

  json layer(const Layer& l, const std::string& p) {
    json o = {{"kind", to_string(l.kind)}};
    if (!l.name.empty()) o["name"] = l.name;
    switch (l.kind) {
      case LayerKind::FullyConnected: {
        const auto& fc = std::get<FcParams>(l.params);
        o["weight"] = tensor(fc.weight, p + ".weight");
        o["bias"] = tensor(fc.bias, p + ".bias");
        break;
      }
      case LayerKind::Normalization: {
        const auto& n = std::get<NormParams>(l.params);
        o["mode"] = n.mode == NormMode::Batch ? "batch" : "layer";
        o["eps"] = n.eps;
        o["gamma"] = tensor(n.gamma, p + ".gamma");
        o["beta"] = tensor(n.beta, p + ".beta");
        if (n.mode == NormMode::Batch) {
          o["mean"] = tensor(n.mean, p + ".mean");
          o["variance"] = tensor(n.variance, p + ".variance");
        }
        break;
      }
      case LayerKind::Conv2D: {
        const auto& c = std::get<ConvParams>(l.params);
        o["kernel"] = tensor(c.kernel, p + ".kernel");
        o["bias"] = tensor(c.bias, p + ".bias");
        o["stride"] = c.stride;
        o["padding"] = c.padding;
        break;
      }
      case LayerKind::Activation: {
        const auto& a = std::get<ActivationParams>(l.params);
        o["function"] = to_string(a.kind);
        if (a.kind == ActivationKind::LeakyReLU) o["alpha"] = a.alpha;
        break;
      }
      case LayerKind::Attention: {
        const auto& a = std::get<AttentionParams>(l.params);
        o["head"] = head(a.head, p + ".h0");
        o["dk"] = a.dk;
        break;
      }
      case LayerKind::MultiHeadAttention: {
        const auto& m = std::get<MultiHeadParams>(l.params);
        json heads = json::array();
        for (std::size_t h = 0; h < m.heads.size(); ++h) {
          heads.push_back(head(m.heads[h], p + ".h" + std::to_string(h)));
        }
        o["heads"] = heads;
        o["dk"] = m.dk;
        o["wu"] = tensor(m.wu, p + ".wu");
        o["bu"] = tensor(m.bu, p + ".bu");
        break;
      }
      case LayerKind::Residual: {
        const auto& r = std::get<ResidualParams>(l.params);
        json branches = json::array();
        for (std::size_t b = 0; b < r.branches.size(); ++b) {
          branches.push_back(layers(r.branches[b], p + ".b" + std::to_string(b) + "."));
        }
        o["branches"] = branches;
        o["ones_owner"] = r.ones_owner;
        break;
      }
      case LayerKind::MaxPool2D:
      case LayerKind::AvgPool2D: {
        const auto& pp = std::get<PoolParams>(l.params);
        o["window"] = pp.window;
        o["stride"] = pp.stride;
        break;
      }
      case LayerKind::TokenSelect: {
        const auto& t = std::get<TokenSelectParams>(l.params);
        o["mode"] = t.mode == TokenSelectMode::Mean ? "mean" : "index";
        if (t.mode == TokenSelectMode::Index) o["index"] = t.index;
        break;
      }
      case LayerKind::Flatten:
      case LayerKind::Softmax:
      case LayerKind::Sigmoid:
      case LayerKind::Tanh:
        break;
    }
    return o;
  }

  fs::path dir_;
  DType dtype_;
  json weights_ = json::object();
};

}  // namespace

DType parse_dtype(const std::string& s) {
  if (s == "float32") return DType::Float32;
  if (s == "float64") return DType::Float64;
  fail(ErrorCode::Parse, "unknown dtype '" + s + "'");
}

const char* to_string(DType d) noexcept { return d == DType::Float32 ? "float32" : "float64"; }

std::size_t width(DType d) noexcept { return d == DType::Float32 ? 4 : 8; }

std::uint32_t checksum(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in bounded chunks.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - off, 1u << 30);
    crc = crc32(crc, bytes.data() + off, static_cast<uInt>(n));
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> encode_blob(const WeightBlob& blob) {
  if (product(blob.shape) != blob.values.size()) {
    fail(ErrorCode::Shape, "blob '" + blob.name + "': value count does not match shape");
  }
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put<std::uint16_t>(out, kBlobVersion);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(blob.dtype));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(blob.shape.size()));
  for (std::size_t e : blob.shape) put<std::uint64_t>(out, e);
  const std::size_t payload_start = out.size();
  for (double v : blob.values) {
    if (blob.dtype == DType::Float32) {
      put<float>(out, static_cast<float>(v));
    } else {
      put<double>(out, v);
    }
  }
  const std::uint32_t crc = checksum(std::span(out).subspan(payload_start));
  put<std::uint32_t>(out, crc);
  return out;
}

WeightBlob decode_blob(std::span<const std::uint8_t> bytes, const std::string& name) {
  Reader r(bytes, name);
  char magic[4];
  for (char& c : magic) c = static_cast<char>(r.get<std::uint8_t>());
  if (std::memcmp(magic, kMagic, 4) != 0) fail(ErrorCode::Parse, "blob '" + name + "': bad magic");
  const auto version = r.get<std::uint16_t>();
  if (version != kBlobVersion) {
    fail(ErrorCode::Version, "blob '" + name + "': unsupported version " + std::to_string(version));
  }
  WeightBlob blob;
  blob.name = name;
  const auto dtype = r.get<std::uint8_t>();
  if (dtype != 1 && dtype != 2) fail(ErrorCode::Parse, "blob '" + name + "': unknown dtype code");
  blob.dtype = static_cast<DType>(dtype);
  const auto rank = r.get<std::uint8_t>();
  for (std::uint8_t i = 0; i < rank; ++i) {
    const auto e = r.get<std::uint64_t>();
    if (e == 0) fail(ErrorCode::Parse, "blob '" + name + "': zero extent");
    blob.shape.push_back(static_cast<std::size_t>(e));
  }
  const std::size_t n = product(blob.shape);
  const std::size_t payload = n * width(blob.dtype);
  if (r.remaining() != payload + 4) {
    fail(ErrorCode::Parse, "blob '" + name + "': byte length " + std::to_string(bytes.size()) +
                               " does not match shape and dtype");
  }
  const std::size_t payload_start = r.pos();
  blob.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    blob.values[i] = blob.dtype == DType::Float32 ? static_cast<double>(r.get<float>())
                                                  : r.get<double>();
  }
  const auto stored = r.get<std::uint32_t>();
  if (stored != checksum(bytes.subspan(payload_start, payload))) {
    fail(ErrorCode::Checksum, "blob '" + name + "': checksum mismatch");
  }
  return blob;
}

std::uint32_t blob_checksum(std::span<const std::uint8_t> encoded) {
  if (encoded.size() < 4) fail(ErrorCode::Parse, "blob too short");
  std::uint32_t crc;
  std::memcpy(&crc, encoded.data() + encoded.size() - 4, 4);
  return crc;
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::Io, "write failed for '" + path.string() + "'");
}

ModelGraph load_model(const fs::path& manifest_path) {
  fs::path path = manifest_path;
  if (fs::is_directory(path)) path /= kManifestName;
  if (!fs::exists(path)) fail(ErrorCode::Io, "manifest '" + path.string() + "' not found");
  const auto bytes = read_file(path);
  json doc;
  try {
    doc = json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    fail(ErrorCode::Parse, "manifest '" + path.string() + "': " + e.what());
  }
  const std::string where = path.filename().string();
  if (!doc.is_object() || !doc.contains("format") || doc.at("format") != kFormatName) {
    fail(ErrorCode::Version, where + ": not an " + std::string(kFormatName) + " manifest");
  }
  const json& version = field(doc, "version", where);
  if (!version.is_number_integer() || version.get<int>() != kManifestVersion) {
    fail(ErrorCode::Version, where + ": unsupported manifest version " + version.dump());
  }

  ModelGraph model;
  model.source_dtype = to_string(parse_dtype(string_field(doc, "dtype", where)));
  const json& input = field(doc, "input", where);
  model.input.tokens = size_field(input, "tokens", where + "/input");
  model.input.channels = size_field(input, "channels", where + "/input");
  if (input.contains("height")) model.input.height = size_field(input, "height", where + "/input");
  if (input.contains("width")) model.input.width = size_field(input, "width", where + "/input");
  if (!model.input.valid()) fail(ErrorCode::ShapeChain, where + ": invalid input shape");
  model.logits = size_field(field(doc, "head", where), "logits", where + "/head");

  const json empty = json::object();
  Loader loader(path.parent_path(), doc.contains("weights") ? doc.at("weights") : empty);
  model.layers = loader.layers(field(doc, "layers", where), where + "/layers");

  const Shape2D out = output_shape(model.layers, model.input);
  if (out.size() != model.logits) {
    fail(ErrorCode::ShapeChain, where + ": network produces " + std::to_string(out.size()) +
                                    " outputs but head declares " + std::to_string(model.logits));
  }
  return model;
}

void save_model(const ModelGraph& model, const fs::path& dir) {
  output_shape(model.layers, model.input);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::Io, "cannot create '" + dir.string() + "': " + ec.message());
  const DType dtype = parse_dtype(model.source_dtype);
  Saver saver(dir, dtype);
  json doc;
  doc["format"] = kFormatName;
  doc["version"] = kManifestVersion;
  doc["dtype"] = to_string(dtype);
  json input = {{"tokens", model.input.tokens}, {"channels", model.input.channels}};
  if (model.input.spatial()) {
    input["height"] = model.input.height;
    input["width"] = model.input.width;
  }
  doc["input"] = input;
  doc["head"] = {{"logits", model.logits}};
  doc["layers"] = saver.layers(model.layers, "");
  doc["weights"] = saver.weights();
  const std::string text = doc.dump(2) + "\n";
  write_file(dir / kManifestName,
             std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

ProbeSet load_probes(const fs::path& dir) {
  const fs::path path = dir / "probes.json";
  const auto bytes = read_file(path);
  json doc;
  try {
    doc = json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    fail(ErrorCode::Parse, "probes.json: " + std::string(e.what()));
  }
  ProbeSet set;
  set.tolerance = number_field(doc, "tolerance", "probes.json", 1e-4);
  for (const auto& p : field(doc, "probes", "probes.json")) {
    set.inputs.push_back(dir / string_field(p, "input", "probes.json"));
    set.logits.push_back(field(p, "logits", "probes.json").get<std::vector<double>>());
  }
  return set;
}

}  // namespace omenn::format

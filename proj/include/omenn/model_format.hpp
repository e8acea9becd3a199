#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "omenn/model.hpp"
#include "omenn/tensor.hpp"

// Portable model description: a JSON manifest plus one raw binary blob per
// weight tensor. See README.md ("Model format") for the byte layout.
namespace omenn::format {

inline constexpr int kManifestVersion = 1;
inline constexpr std::uint16_t kBlobVersion = 1;
inline constexpr const char* kManifestName = "model.json";

enum class DType : std::uint8_t { Float32 = 1, Float64 = 2 };

DType parse_dtype(const std::string& s);
const char* to_string(DType d) noexcept;
std::size_t width(DType d) noexcept;

struct WeightBlob {
  std::string name;
  std::vector<std::size_t> shape;
  DType dtype = DType::Float64;
  std::vector<double> values;  // widened to 64-bit
};

/// CRC-32 (IEEE 802.3, as in zlib) of the payload bytes.
std::uint32_t checksum(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_blob(const WeightBlob& blob);
/// Parses and verifies one blob; `name` is only used in error messages.
WeightBlob decode_blob(std::span<const std::uint8_t> bytes, const std::string& name);
/// Checksum recorded in an encoded blob's trailer.
std::uint32_t blob_checksum(std::span<const std::uint8_t> encoded);

/// Loads a manifest (or a directory containing model.json) and every blob it
/// references, then validates the layer shape chain before returning.
ModelGraph load_model(const std::filesystem::path& manifest_path);

/// Writes model.json and the blobs into `dir`, storing weights in the model's
/// source dtype. Output is deterministic for a given model.
void save_model(const ModelGraph& model, const std::filesystem::path& dir);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// Inputs and reference logits recorded next to an exported model
/// (probes.json), used for cross-framework parity checks.
struct ProbeSet {
  std::vector<std::filesystem::path> inputs;
  std::vector<std::vector<double>> logits;
  double tolerance = 1e-4;
};

ProbeSet load_probes(const std::filesystem::path& dir);

}  // namespace omenn::format

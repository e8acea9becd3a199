#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>

#include "omenn/model.hpp"
#include "omenn/tensor.hpp"

namespace omenn {

/// Template name plus size knobs, e.g. "mlp:in=2,hidden=4,out=1,act=gelu".
///
/// mlp      in, hidden (e.g. "8x8"), out, tokens, act, alpha, batchnorm
/// cnn      h, w, c, filters, kernel, padding, stride, blocks, act, alpha,
///          pool (max|avg|none), batchnorm, out
/// vit-block h, w, c, patch, dim, heads, mlp, blocks, act, select (cls|mean), out
///
/// Every template also accepts `scale` (init range multiplier).
struct ArchSpec {
  std::string family;
  std::map<std::string, std::string> knobs;
};

ArchSpec parse_arch_spec(const std::string& text);
std::string to_string(const ArchSpec& spec);

/// Deterministic for a fixed seed. Weights are U(-s, s) with
/// s = scale / sqrt(fan_in).
ModelGraph generate_random_model(const ArchSpec& spec, std::uint64_t seed);

/// Input drawn from U(lo, hi), tokens x channels.
Tensor random_input(const Shape2D& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0);

/// Seeded uniform source over mt19937_64, whose output sequence is fixed
/// by the standard (unlike the std distributions).
class Uniform {
 public:
  explicit Uniform(std::uint64_t seed);
  /// Next value in [0, 1).
  double next();
  double next(double lo, double hi) { return lo + (hi - lo) * next(); }
  /// Next integer in [0, n).
  std::size_t below(std::size_t n);

 private:
  std::mt19937_64 engine_;
};

}  // namespace omenn

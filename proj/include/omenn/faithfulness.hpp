#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "omenn/model.hpp"
#include "omenn/tensor.hpp"

namespace omenn {

struct FaithfulnessConfig {
  double subset = 0.2;      // fraction of tokens set to the baseline per trial
  std::size_t trials = 30;
  std::uint64_t seed = 0;
  // The baseline value is fixed at 0.

  void validate() const;
};

/// Product-moment correlation; throws UndefinedCorrelation on zero variance.
double pearson(std::span<const double> a, std::span<const double> b);

/// Per-trial (delta logit, summed attribution) pairs.
struct FaithfulnessTrace {
  std::vector<double> delta_logit;
  std::vector<double> attribution_sum;
};

FaithfulnessTrace faithfulness_trials(const ModelGraph& model, const Tensor& x,
                                      const Tensor& attribution, std::size_t class_index,
                                      const FaithfulnessConfig& cfg);

/// Each trial zeroes floor(subset * tokens) random input tokens (all
/// channels) and records f(x) - f(x') against the attribution summed over
/// those tokens; the score is the Pearson correlation of the two series.
double faithfulness_correlation(const ModelGraph& model, const Tensor& x,
                                const Tensor& attribution, std::size_t class_index,
                                const FaithfulnessConfig& cfg = {});

/// U[0, 1] attribution, deterministic per seed.
Tensor random_attribution(std::size_t tokens, std::uint64_t seed);

enum class AttributionMethod { Omenn, Gradient, GradientTimesInput, Random };

AttributionMethod parse_method(const std::string& name);
const char* to_string(AttributionMethod m) noexcept;

/// Per-token attribution (tokens x 1) for the chosen method. `seed` is only
/// used by the random baseline.
Tensor attribute(const ModelGraph& model, const Tensor& x, std::size_t class_index,
                 AttributionMethod method, std::uint64_t seed = 0);

}  // namespace omenn

#include "omenn/faithfulness.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>

#include "omenn/engine.hpp"
#include "omenn/generate.hpp"

namespace omenn {
namespace {

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double mean(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

void FaithfulnessConfig::validate() const {
  if (!(subset > 0.0 && subset < 1.0)) {
    fail(ErrorCode::Parameter, "subset fraction must lie in (0, 1)");
  }
  if (trials < 2) fail(ErrorCode::Parameter, "at least 2 trials are required");
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(ErrorCode::Shape, "pearson: series lengths differ");
  if (a.size() < 2) fail(ErrorCode::Shape, "pearson: at least 2 points are required");
  const double ma = mean(a), mb = mean(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) {
    fail(ErrorCode::UndefinedCorrelation, "correlation undefined: a series has zero variance");
  }
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

FaithfulnessTrace faithfulness_trials(const ModelGraph& model, const Tensor& x,
                                      const Tensor& attribution, std::size_t class_index,
                                      const FaithfulnessConfig& cfg) {
  cfg.validate();
  const std::size_t t = model.input.tokens;
  if (attribution.size() != t) {
    fail(ErrorCode::Shape, "attribution has " + std::to_string(attribution.size()) +
                               " entries for " + std::to_string(t) + " input tokens");
  }
  const auto k = static_cast<std::size_t>(std::floor(cfg.subset * static_cast<double>(t)));
  if (k == 0) fail(ErrorCode::Parameter, "subset fraction selects no tokens");
  const Tensor base = model_logits(model, x);
  if (class_index >= base.size()) fail(ErrorCode::OutOfRange, "class index out of range");
  const double f = base[class_index];

  FaithfulnessTrace trace;
  trace.delta_logit.assign(cfg.trials, 0.0);
  trace.attribution_sum.assign(cfg.trials, 0.0);
  std::exception_ptr error;
  const long trials = static_cast<long>(cfg.trials);
#pragma omp parallel for schedule(dynamic)
  for (long trial = 0; trial < trials; ++trial) {
    try {
      Uniform rng(splitmix64(cfg.seed ^ splitmix64(static_cast<std::uint64_t>(trial))));
      std::vector<std::size_t> order(t);
      std::iota(order.begin(), order.end(), 0);
      Tensor xp = x;
      double attr = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        std::swap(order[i], order[i + rng.below(t - i)]);
        const std::size_t tok = order[i];
        for (std::size_t c = 0; c < xp.cols(); ++c) xp(tok, c) = 0.0;
        attr += attribution[tok];
      }
      const auto idx = static_cast<std::size_t>(trial);
      trace.delta_logit[idx] = f - model_logits(model, xp)[class_index];
      trace.attribution_sum[idx] = attr;
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return trace;
}

double faithfulness_correlation(const ModelGraph& model, const Tensor& x,
                                const Tensor& attribution, std::size_t class_index,
                                const FaithfulnessConfig& cfg) {
  const FaithfulnessTrace tr = faithfulness_trials(model, x, attribution, class_index, cfg);
  return pearson(tr.delta_logit, tr.attribution_sum);
}

Tensor random_attribution(std::size_t tokens, std::uint64_t seed) {
  Uniform rng(seed);
  Tensor a({tokens, 1});
  for (double& v : a.storage()) v = rng.next();
  return a;
}

AttributionMethod parse_method(const std::string& name) {
  for (auto m : {AttributionMethod::Omenn, AttributionMethod::Gradient,
                 AttributionMethod::GradientTimesInput, AttributionMethod::Random}) {
    if (name == to_string(m)) return m;
  }
  fail(ErrorCode::Parameter, "unknown attribution method '" + name + "'");
}

const char* to_string(AttributionMethod m) noexcept {
  switch (m) {
    case AttributionMethod::Omenn: return "omenn";
    case AttributionMethod::Gradient: return "gradient";
    case AttributionMethod::GradientTimesInput: return "gradxinput";
    case AttributionMethod::Random: return "random";
  }
  return "unknown";
}

Tensor attribute(const ModelGraph& model, const Tensor& x, std::size_t class_index,
                 AttributionMethod method, std::uint64_t seed) {
  switch (method) {
    case AttributionMethod::Omenn:
      return explain(model, x, class_index).c;
    case AttributionMethod::Gradient:
      return sum_channels(explain_gradient(model, x, class_index));
    case AttributionMethod::GradientTimesInput:
      return gradient_times_input(explain_gradient(model, x, class_index), x);
    case AttributionMethod::Random:
      return random_attribution(model.input.tokens, seed);
  }
  fail(ErrorCode::Parameter, "unknown attribution method");
}

}  // namespace omenn

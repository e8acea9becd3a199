#include "omenn/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace omenn {

void PostConfig::validate() const {
  if (!(quantile > 0.5 && quantile <= 1.0)) {
    fail(ErrorCode::Parameter, "quantile must lie in (0.5, 1], got " + std::to_string(quantile));
  }
  if (kernel == 0 || kernel % 2 == 0) {
    fail(ErrorCode::Parameter, "mean filter size must be odd and >= 1, got " +
                                   std::to_string(kernel));
  }
}

double nearest_rank_quantile(std::span<const double> values, double q) {
  if (values.empty()) fail(ErrorCode::Shape, "quantile of an empty series");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const auto n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(q * n));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

Tensor mean_filter(const Tensor& map, std::size_t height, std::size_t width, std::size_t k) {
  if (map.size() != height * width) fail(ErrorCode::Shape, "mean_filter: size mismatch");
  Tensor out({height, width});
  const long r = static_cast<long>(k / 2), h = static_cast<long>(height),
             w = static_cast<long>(width);
  const double norm = 1.0 / static_cast<double>(k * k);
  for (long i = 0; i < h; ++i)
    for (long j = 0; j < w; ++j) {
      double acc = 0.0;
      for (long a = -r; a <= r; ++a)
        for (long b = -r; b <= r; ++b) {
          const long ii = std::clamp(i + a, 0L, h - 1), jj = std::clamp(j + b, 0L, w - 1);
          acc += map[static_cast<std::size_t>(ii * w + jj)];
        }
      out[static_cast<std::size_t>(i * w + j)] = acc * norm;
    }
  return out;
}

Tensor postprocess(const Tensor& c, std::size_t height, std::size_t width, const PostConfig& cfg) {
  cfg.validate();
  if (c.size() != height * width) {
    fail(ErrorCode::Shape, "postprocess: " + std::to_string(c.size()) + " contributions for a " +
                               std::to_string(height) + "x" + std::to_string(width) + " map");
  }
  Tensor m = c.reshaped({height, width});
  if (cfg.clip_negatives) {
    for (double& v : m.storage()) v = std::max(v, 0.0);
  }
  const double top = nearest_rank_quantile(m.data(), cfg.quantile);
  for (double& v : m.storage()) v = std::min(v, top);
  if (cfg.kernel == 1) return m;
  return mean_filter(m, height, width, cfg.kernel);
}

}  // namespace omenn

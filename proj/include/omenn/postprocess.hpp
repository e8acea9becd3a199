#pragma once

#include <cstddef>
#include <span>

#include "omenn/tensor.hpp"

namespace omenn {

struct PostConfig {
  bool clip_negatives = true;
  double quantile = 0.99;  // in (0.5, 1]
  std::size_t kernel = 3;  // odd, >= 1

  void validate() const;
};

/// Nearest-rank quantile: the ceil(q * n)-th smallest value (1-based).
double nearest_rank_quantile(std::span<const double> values, double q);

/// k x k mean filter with edge replication over a height x width map.
Tensor mean_filter(const Tensor& map, std::size_t height, std::size_t width, std::size_t k);

/// Turns a per-token contribution vector (t x 1, t = h * w) into an h x w
/// map: clip negatives, clamp above the q-quantile, then mean filter.
Tensor postprocess(const Tensor& c, std::size_t height, std::size_t width,
                   const PostConfig& cfg = {});

}  // namespace omenn

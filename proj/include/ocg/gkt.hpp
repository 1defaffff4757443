// SPDX-License-Identifier: Apache-2.0
//
// Gaussian kernel click embedding: a single-channel map, the size of the
// query image, whose value decays with squared distance from the clicked
// pixel. The spread is a fixed fraction of the image diagonal so the same
// sigma means the same relative footprint at any resolution.
#pragma once

#include <cstdint>

#include "ocg/tensor.hpp"

namespace ocg::gkt {

/// Click location in query-image pixels. x is the column, y the row; pixel
/// centers sit on integer coordinates with the origin at the top-left.
struct ClickPoint {
  double x = 0.0;
  double y = 0.0;
};

inline constexpr double kDroneSigma = 0.075;
inline constexpr double kGroundSigma = 0.15;

struct GktConfig {
  double sigma = kDroneSigma;
  int64_t height = 256;
  int64_t width = 256;

  /// sigma * sqrt(H^2 + W^2).
  double normalized_sigma() const;
  /// Throws InvalidConfig unless sigma > 0 and both dimensions are >= 1.
  void validate() const;
};

/// Throws InvalidInput unless 0 <= x < width and 0 <= y < height.
void check_click(const ClickPoint& click, const GktConfig& cfg);

/// M(i, j) = exp(-((i - x)^2 + (j - y)^2) / (2 sigma_n^2)) as an [H, W]
/// tensor. Evaluated in double precision, stored as T.
template <typename T = float>
Tensor<T> gkt_map(const ClickPoint& click, const GktConfig& cfg);

}  // namespace ocg::gkt

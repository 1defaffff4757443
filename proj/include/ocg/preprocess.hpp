// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>

#include "ocg/image_io.hpp"
#include "ocg/manifest.hpp"

namespace ocg::data {

/// Network-ready tensors for one sample, all in canonical resolution.
struct ModelInputs {
  std::string sample_id;
  std::string class_label;
  QueryKind kind = QueryKind::kDrone;
  Tensor<float> query;      // [3, Hq, Wq]
  Tensor<float> heatmap;    // [1, Hq, Wq]
  Tensor<float> satellite;  // [3, Hs, Ws]
  gkt::ClickPoint click;    // canonical query pixels
  Box gt;                   // canonical satellite pixels
  double sigma = 0.0;
};

struct PreprocessOptions {
  std::optional<double> sigma_drone;
  std::optional<double> sigma_ground;

  double sigma_for(QueryKind kind, const ModelConfig& cfg) const;
};

/// Scales a point by the per-axis resize ratio.
gkt::ClickPoint scale_click(const gkt::ClickPoint& c, ImageSize from, ImageSize to);
Box scale_box(const Box& b, ImageSize from, ImageSize to);

/// Resizes both images to the canonical sizes, normalizes them with the
/// model's pixel statistics and renders the click heatmap. Throws
/// InvalidInput for a click outside the query and InvalidAnnotation when
/// the scaled box has zero area.
ModelInputs preprocess_images(const image::RgbImage& query, const image::RgbImage& satellite,
                              QueryKind kind, const gkt::ClickPoint& click,
                              const std::optional<Box>& gt, const ModelConfig& cfg,
                              const PreprocessOptions& opts = {});

/// Left-right mirror of every image together with the click and the box.
ModelInputs mirror_horizontal(const ModelInputs& in);

/// Reads the sample's images relative to the manifest root.
ModelInputs preprocess(const GeoSample& sample, const Manifest& manifest, const ModelConfig& cfg,
                       const PreprocessOptions& opts = {});

}  // namespace ocg::data

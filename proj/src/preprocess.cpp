// SPDX-License-Identifier: Apache-2.0
#include "ocg/preprocess.hpp"

namespace ocg::data {

double PreprocessOptions::sigma_for(QueryKind kind, const ModelConfig& cfg) const {
  const auto& o = kind == QueryKind::kDrone ? sigma_drone : sigma_ground;
  return o.value_or(cfg.sigma_for(kind));
}

gkt::ClickPoint scale_click(const gkt::ClickPoint& c, ImageSize from, ImageSize to) {
  return {c.x * static_cast<double>(to.width) / static_cast<double>(from.width),
          c.y * static_cast<double>(to.height) / static_cast<double>(from.height)};
}

Box scale_box(const Box& b, ImageSize from, ImageSize to) {
  const double rx = static_cast<double>(to.width) / static_cast<double>(from.width);
  const double ry = static_cast<double>(to.height) / static_cast<double>(from.height);
  return {b.cx * rx, b.cy * ry, b.w * rx, b.h * ry};
}

ModelInputs preprocess_images(const image::RgbImage& query, const image::RgbImage& satellite,
                              QueryKind kind, const gkt::ClickPoint& click,
                              const std::optional<Box>& gt, const ModelConfig& cfg,
                              const PreprocessOptions& opts) {
  const ImageSize qsize = cfg.query_size(kind);
  ModelInputs in;
  in.kind = kind;
  in.sigma = opts.sigma_for(kind, cfg);

  gkt::GktConfig source{in.sigma, query.height, query.width};
  gkt::check_click(click, source);
  in.click = scale_click(click, query.size(), qsize);

  in.query = image::to_tensor(image::resize(query, qsize), cfg.pixel_mean, cfg.pixel_std);
  in.satellite =
      image::to_tensor(image::resize(satellite, cfg.satellite_size), cfg.pixel_mean, cfg.pixel_std);
  gkt::GktConfig g{in.sigma, qsize.height, qsize.width};
  in.heatmap = gkt::gkt_map<float>(in.click, g).reshaped({1, qsize.height, qsize.width});

  if (gt) {
    in.gt = scale_box(*gt, satellite.size(), cfg.satellite_size);
    if (!(in.gt.w > 0.0) || !(in.gt.h > 0.0)) {
      throw InvalidAnnotation("ground-truth box has zero area after resizing");
    }
  }
  return in;
}

namespace {

// [C, H, W] reversed along W.
Tensor<float> flip_width(const Tensor<float>& t) {
  const int64_t planes = t.size(0) * t.size(1), w = t.size(2);
  Tensor<float> out(t.shape());
  for (int64_t p = 0; p < planes; ++p)
    for (int64_t x = 0; x < w; ++x) out[p * w + x] = t[p * w + (w - 1 - x)];
  return out;
}

}  // namespace

ModelInputs mirror_horizontal(const ModelInputs& in) {
  ModelInputs out = in;
  out.query = flip_width(in.query);
  out.heatmap = flip_width(in.heatmap);
  out.satellite = flip_width(in.satellite);
  out.click.x = static_cast<double>(in.query.size(2) - 1) - in.click.x;
  out.gt.cx = static_cast<double>(in.satellite.size(2)) - in.gt.cx;
  return out;
}

ModelInputs preprocess(const GeoSample& sample, const Manifest& manifest, const ModelConfig& cfg,
                       const PreprocessOptions& opts) {
  const auto q = image::read(manifest.resolve(sample.query_path));
  const auto s = image::read(manifest.resolve(sample.satellite_path));
  ModelInputs in = preprocess_images(q, s, sample.query_kind, sample.click, sample.gt_box, cfg, opts);
  in.sample_id = sample.sample_id;
  in.class_label = sample.class_label;
  return in;
}

}  // namespace ocg::data

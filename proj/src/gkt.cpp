// SPDX-License-Identifier: Apache-2.0
#include "ocg/gkt.hpp"

#include <cmath>
#include <string>

namespace ocg::gkt {

double GktConfig::normalized_sigma() const {
  const double h = static_cast<double>(height);
  const double w = static_cast<double>(width);
  return sigma * std::sqrt(h * h + w * w);
}

void GktConfig::validate() const {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw InvalidConfig("gkt: sigma must be positive and finite, got " + std::to_string(sigma));
  }
  if (height < 1 || width < 1) {
    throw InvalidConfig("gkt: image size must be at least 1x1, got " + std::to_string(height) +
                        "x" + std::to_string(width));
  }
  const double sn = normalized_sigma();
  if (!(sn > 0.0) || !std::isfinite(sn)) throw InvalidConfig("gkt: normalized sigma degenerate");
}

void check_click(const ClickPoint& click, const GktConfig& cfg) {
  const bool inside = std::isfinite(click.x) && std::isfinite(click.y) && click.x >= 0.0 &&
                      click.y >= 0.0 && click.x < static_cast<double>(cfg.width) &&
                      click.y < static_cast<double>(cfg.height);
  if (!inside) {
    throw InvalidInput("click (" + std::to_string(click.x) + ", " + std::to_string(click.y) +
                       ") outside " + std::to_string(cfg.width) + "x" +
                       std::to_string(cfg.height) + " query image");
  }
}

template <typename T>
Tensor<T> gkt_map(const ClickPoint& click, const GktConfig& cfg) {
  cfg.validate();
  check_click(click, cfg);
  const double sn = cfg.normalized_sigma();
  const double inv = 1.0 / (2.0 * sn * sn);
  Tensor<T> m({cfg.height, cfg.width});
  T* out = m.data();
#pragma omp parallel for schedule(static)
  for (int64_t row = 0; row < cfg.height; ++row) {
    const double dy = static_cast<double>(row) - click.y;
    for (int64_t col = 0; col < cfg.width; ++col) {
      const double dx = static_cast<double>(col) - click.x;
      out[row * cfg.width + col] = static_cast<T>(std::exp(-(dx * dx + dy * dy) * inv));
    }
  }
  return m;
}

template Tensor<float> gkt_map<float>(const ClickPoint&, const GktConfig&);
template Tensor<double> gkt_map<double>(const ClickPoint&, const GktConfig&);

}  // namespace ocg::gkt

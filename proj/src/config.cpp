// SPDX-License-Identifier: Apache-2.0
#include "ocg/config.hpp"

#include <cmath>

#include "ocg/errors.hpp"

namespace ocg {

std::vector<Anchor> default_anchors() {
  std::vector<Anchor> out;
  for (double size : {32.0, 64.0, 128.0}) {
    for (double ratio : {0.5, 1.0, 2.0}) {
      out.push_back({size / std::sqrt(ratio), size * std::sqrt(ratio)});
    }
  }
  return out;
}

std::string to_string(QueryKind kind) { return kind == QueryKind::kDrone ? "drone" : "ground"; }

QueryKind query_kind_from_string(const std::string& s) {
  if (s == "drone") return QueryKind::kDrone;
  if (s == "ground") return QueryKind::kGround;
  throw InvalidInput("unknown query kind '" + s + "' (expected drone or ground)");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw InvalidConfig("model config: " + what); };
  if (nc < 1 || heads < 1 || d_k < 1 || d_v < 1) fail("nc, heads, d_k, d_v must be >= 1");
  if (resnet_width < 1 || resnet_blocks.size() != 4) fail("resnet needs width and 4 stages");
  if (darknet_width < 1 || darknet_blocks.size() != 5) fail("darknet needs width and 5 stages");
  for (auto b : resnet_blocks)
    if (b < 1) fail("resnet stage depth must be >= 1");
  for (auto b : darknet_blocks)
    if (b < 1) fail("darknet stage depth must be >= 1");
  if (det_kernel != 1 && det_kernel != 3) fail("det_kernel must be 1 or 3");
  for (const ImageSize& s : {drone_size, ground_size, satellite_size}) {
    if (s.height < kStrideC3 || s.width < kStrideC3 || s.height % kStrideC3 != 0 ||
        s.width % kStrideC3 != 0) {
      fail("image sizes must be positive multiples of 32");
    }
  }
  if (!(sigma_drone > 0.0) || !(sigma_ground > 0.0)) fail("sigma must be positive");
  if (!(objectness_prior > 0.0 && objectness_prior < 1.0)) fail("objectness_prior must be in (0, 1)");
  for (double s : pixel_std)
    if (!(s > 0.0)) fail("pixel_std must be positive");
  if (static_cast<int64_t>(anchors.size()) != kNumAnchors) fail("exactly 9 anchors required");
  for (const auto& a : anchors)
    if (!(a.width > 0.0) || !(a.height > 0.0)) fail("anchor dimensions must be positive");
}

ModelConfig ModelConfig::standard() { return ModelConfig{}; }

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.nc = 32;
  c.heads = 4;
  c.d_k = 8;
  c.d_v = 8;
  c.resnet_width = 8;
  c.resnet_blocks = {1, 1, 1, 1};
  c.darknet_width = 4;
  c.darknet_blocks = {1, 1, 1, 1, 1};
  c.darknet_neck = false;
  c.drone_size = {128, 128};
  c.ground_size = {128, 256};
  c.satellite_size = {256, 256};
  return c;
}

void to_json(nlohmann::json& j, const Anchor& a) { j = nlohmann::json::array({a.width, a.height}); }
void from_json(const nlohmann::json& j, Anchor& a) {
  a.width = j.at(0).get<double>();
  a.height = j.at(1).get<double>();
}

void to_json(nlohmann::json& j, const ImageSize& s) { j = nlohmann::json::array({s.height, s.width}); }
void from_json(const nlohmann::json& j, ImageSize& s) {
  s.height = j.at(0).get<int64_t>();
  s.width = j.at(1).get<int64_t>();
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"nc", c.nc},
                     {"heads", c.heads},
                     {"d_k", c.d_k},
                     {"d_v", c.d_v},
                     {"resnet_width", c.resnet_width},
                     {"resnet_blocks", c.resnet_blocks},
                     {"darknet_width", c.darknet_width},
                     {"darknet_blocks", c.darknet_blocks},
                     {"darknet_neck", c.darknet_neck},
                     {"det_kernel", c.det_kernel},
                     {"sa_init_scale", c.sa_init_scale},
                     {"objectness_prior", c.objectness_prior},
                     {"bn_momentum", c.bn_momentum},
                     {"bn_eps", c.bn_eps},
                     {"drone_size", c.drone_size},
                     {"ground_size", c.ground_size},
                     {"satellite_size", c.satellite_size},
                     {"sigma_drone", c.sigma_drone},
                     {"sigma_ground", c.sigma_ground},
                     {"pixel_mean", c.pixel_mean},
                     {"pixel_std", c.pixel_std},
                     {"anchors", c.anchors},
                     {"strides", {ModelConfig::kStrideC2, ModelConfig::kStrideC3}}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.nc = j.value("nc", d.nc);
  c.heads = j.value("heads", d.heads);
  c.d_k = j.value("d_k", d.d_k);
  c.d_v = j.value("d_v", d.d_v);
  c.resnet_width = j.value("resnet_width", d.resnet_width);
  c.resnet_blocks = j.value("resnet_blocks", d.resnet_blocks);
  c.darknet_width = j.value("darknet_width", d.darknet_width);
  c.darknet_blocks = j.value("darknet_blocks", d.darknet_blocks);
  c.darknet_neck = j.value("darknet_neck", d.darknet_neck);
  c.det_kernel = j.value("det_kernel", d.det_kernel);
  c.sa_init_scale = j.value("sa_init_scale", d.sa_init_scale);
  c.objectness_prior = j.value("objectness_prior", d.objectness_prior);
  c.bn_momentum = j.value("bn_momentum", d.bn_momentum);
  c.bn_eps = j.value("bn_eps", d.bn_eps);
  c.drone_size = j.value("drone_size", d.drone_size);
  c.ground_size = j.value("ground_size", d.ground_size);
  c.satellite_size = j.value("satellite_size", d.satellite_size);
  c.sigma_drone = j.value("sigma_drone", d.sigma_drone);
  c.sigma_ground = j.value("sigma_ground", d.sigma_ground);
  c.pixel_mean = j.value("pixel_mean", d.pixel_mean);
  c.pixel_std = j.value("pixel_std", d.pixel_std);
  c.anchors = j.value("anchors", d.anchors);
}

}  // namespace ocg

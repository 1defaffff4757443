// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace ocg {

/// Prior box shape in reference-image pixels.
struct Anchor {
  double width = 0.0;
  double height = 0.0;
};

/// Nine anchors: sizes {32, 64, 128} crossed with aspect ratios
/// (h / w) {0.5, 1, 2}, size-major.
std::vector<Anchor> default_anchors();

enum class QueryKind { kDrone, kGround };

std::string to_string(QueryKind kind);
QueryKind query_kind_from_string(const std::string& s);

struct ImageSize {
  int64_t height = 0;
  int64_t width = 0;
  bool operator==(const ImageSize&) const = default;
};

/// Everything needed to rebuild a network with the same layout. Stored in
/// the checkpoint header so training, evaluation and serving agree.
struct ModelConfig {
  int64_t nc = 512;
  int64_t heads = 8;
  int64_t d_k = 64;
  int64_t d_v = 64;

  int64_t resnet_width = 64;
  std::vector<int64_t> resnet_blocks{2, 2, 2, 2};
  int64_t darknet_width = 32;
  std::vector<int64_t> darknet_blocks{1, 2, 8, 8, 4};
  /// Stride-32 convolution set that follows DarkNet-53 in the YOLOv3 head.
  bool darknet_neck = true;

  int64_t det_kernel = 3;
  double sa_init_scale = 10.0;
  /// Initial objectness probability; sets the prediction conv's objectness bias.
  double objectness_prior = 0.01;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  ImageSize drone_size{256, 256};
  ImageSize ground_size{256, 512};
  ImageSize satellite_size{1024, 1024};

  double sigma_drone = 0.075;
  double sigma_ground = 0.15;

  std::array<double, 3> pixel_mean{0.485, 0.456, 0.406};
  std::array<double, 3> pixel_std{0.229, 0.224, 0.225};

  std::vector<Anchor> anchors = default_anchors();

  static constexpr int64_t kStrideC2 = 16;
  static constexpr int64_t kStrideC3 = 32;
  static constexpr int64_t kNumAnchors = 9;

  ImageSize query_size(QueryKind kind) const {
    return kind == QueryKind::kDrone ? drone_size : ground_size;
  }
  double sigma_for(QueryKind kind) const {
    return kind == QueryKind::kDrone ? sigma_drone : sigma_ground;
  }

  /// Throws InvalidConfig on inconsistent values.
  void validate() const;

  /// Full-size network.
  static ModelConfig standard();
  /// Narrow, shallow network on small images for desk-scale training and
  /// gradient checks.
  static ModelConfig tiny();
};

void to_json(nlohmann::json& j, const Anchor& a);
void from_json(const nlohmann::json& j, Anchor& a);
void to_json(nlohmann::json& j, const ImageSize& s);
void from_json(const nlohmann::json& j, ImageSize& s);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace ocg

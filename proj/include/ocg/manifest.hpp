// SPDX-License-Identifier: Apache-2.0
//
// JSON-Lines dataset manifest. One object per line:
//   {"sample_id", "query_path", "query_kind": "drone"|"ground",
//    "click": {"x", "y"}, "satellite_path",
//    "gt_box": {"cx", "cy", "w", "h"}, "class_label",
//    "split": "train"|"validation"|"test"}
// Paths are relative to the manifest's directory; coordinates are in source
// image pixels.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ocg/box.hpp"
#include "ocg/config.hpp"
#include "ocg/gkt.hpp"

namespace ocg::data {

enum class Split { kTrain, kValidation, kTest };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct GeoSample {
  std::string sample_id;
  std::string query_path;
  QueryKind query_kind = QueryKind::kDrone;
  gkt::ClickPoint click;
  std::string satellite_path;
  Box gt_box;
  std::string class_label;
  Split split = Split::kTrain;
};

nlohmann::json to_json(const GeoSample& s);
/// Throws InvalidAnnotation naming the first missing or malformed field.
GeoSample sample_from_json(const nlohmann::json& j);

struct RowError {
  int64_t line = 0;
  std::string sample_id;
  std::string reason;
};

struct Manifest {
  std::filesystem::path root;
  std::vector<GeoSample> samples;
  std::vector<RowError> rejects;

  std::filesystem::path resolve(const std::string& rel) const { return root / rel; }
  std::vector<GeoSample> split(Split s) const;
  /// Distinct class labels of the given split, sorted.
  std::vector<std::string> classes(Split s) const;
  const GeoSample* find(const std::string& sample_id) const;
};

struct LoadOptions {
  /// Decode images to check click and box bounds.
  bool check_images = true;
};

/// Valid rows are returned; invalid rows are collected in `rejects` with
/// their 1-based line number. Throws IoError if the file cannot be read.
Manifest load_manifest(const std::filesystem::path& path, const LoadOptions& opts = {});

/// One sorted-key JSON object per line, "\n" terminated.
void write_manifest(const std::filesystem::path& path, const std::vector<GeoSample>& samples);
std::string manifest_text(const std::vector<GeoSample>& samples);

}  // namespace ocg::data

// SPDX-License-Identifier: Apache-2.0
//
// Procedural desk-scale corpus: a satellite canvas with a few colored
// shapes over a smooth background, and a query image cropped around one of
// them. The click is the target's center in the query; the ground-truth box
// is the target's bounding box in the satellite canvas.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ocg/manifest.hpp"

namespace ocg::data {

std::vector<std::string> base_fixture_classes();
std::vector<std::string> fewshot_fixture_classes();

struct FixtureOptions {
  uint64_t seed = 7;
  int64_t n = 8;
  /// "drone", "ground" or "mixed" (alternating).
  std::string query_kind = "drone";
  /// Source resolution of the satellite canvas.
  int64_t satellite_px = 512;
  /// Every sample in the train split.
  bool all_train = false;
  std::vector<std::string> classes = base_fixture_classes();
  int64_t distractors = 3;
  std::string id_prefix = "syn";
};

/// Writes images under out_dir/images and out_dir/manifest.jsonl. Returns the
/// manifest path. Output is a pure function of the options.
std::filesystem::path make_synthetic_fixture(const std::filesystem::path& out_dir,
                                             const FixtureOptions& opts);

/// Generates samples for the given class sequence without writing them.
struct FixtureSample {
  GeoSample sample;
  std::vector<uint8_t> query_png;
  std::vector<uint8_t> satellite_png;
};
FixtureSample render_fixture_sample(uint64_t seed, int64_t index, const std::string& target_class,
                                    QueryKind kind, const FixtureOptions& opts);

struct FewShotSpec {
  std::vector<std::string> categories;
  int64_t shots_per_category = 7;
  std::filesystem::path train_manifest;
  std::filesystem::path test_manifest;
};

/// Throws InvalidConfig unless the train manifest holds exactly
/// shots_per_category samples of every category.
void validate_fewshot(const FewShotSpec& spec);

/// Few-shot fixture over novel categories: shots per category for training,
/// test_per_category for testing (4 x 7 = 28 and 4 x 6 = 24 by default).
FewShotSpec make_fewshot_fixture(const std::filesystem::path& out_dir, uint64_t seed,
                                 std::vector<std::string> categories = fewshot_fixture_classes(),
                                 int64_t shots = 7, int64_t test_per_category = 6);

/// Best-effort adapter from a CSV export with header
///   sample_id,query_path,query_kind,click_x,click_y,satellite_path,
///   x1,y1,x2,y2,class_label,split
/// (corner-form boxes, paths relative to the CSV) to a manifest. Returns the
/// number of rows written; malformed rows are skipped and reported.
struct ImportResult {
  int64_t written = 0;
  std::vector<RowError> skipped;
};
ImportResult import_cvogl_csv(const std::filesystem::path& csv, const std::filesystem::path& out);

}  // namespace ocg::data

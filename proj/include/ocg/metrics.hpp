// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ocg/box.hpp"

namespace ocg::metrics {

/// Intersection over union of two axis-aligned boxes. Throws InvalidInput
/// if either box has non-positive width or height.
double iou(const Box& a, const Box& b);

struct EvalPair {
  Box pred;
  Box gt;
  std::string class_label;
};

/// Percentage of pairs whose IoU is at least t. Throws InvalidInput on an
/// empty list or t outside (0, 1).
double acc_at_t(std::span<const EvalPair> pairs, double t);

struct ClassStats {
  double acc_at_25 = 0.0;
  double acc_at_50 = 0.0;
  int64_t count = 0;

  bool operator==(const ClassStats&) const = default;
};

struct EvalReport {
  double acc_at_25 = 0.0;
  double acc_at_50 = 0.0;
  /// 100 * mean per-sample IoU.
  double mean_iou = 0.0;
  int64_t n = 0;
  /// Lexicographic by class name.
  std::map<std::string, ClassStats> per_class;
  /// Known classes with no samples; reported with count 0.
  std::vector<std::string> empty_classes;
  std::vector<std::string> warnings;

  bool operator==(const EvalReport&) const = default;
};

inline const std::string kOtherClass = "other";

/// Overall and per-class accuracy. When known_classes is given, labels
/// outside it are grouped under "other" and a warning is recorded.
EvalReport per_class_report(std::span<const EvalPair> pairs,
                            const std::optional<std::vector<std::string>>& known_classes = {});

nlohmann::json to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);

struct TableRow {
  std::string label;
  std::optional<EvalReport> validation;
  std::optional<EvalReport> test;
};

/// Aligned text table: one row per entry, column groups validation and test,
/// each with acc@0.25 and acc@0.50. Missing splits print as "-".
std::string format_table(std::span<const TableRow> rows);

/// Per-class listing of one report, one class per line.
std::string format_class_table(const EvalReport& r);

}  // namespace ocg::metrics

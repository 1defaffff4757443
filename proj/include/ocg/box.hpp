// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

namespace ocg {

/// Axis-aligned box in center/size form. This is the only box layout used
/// inside the library; corner form exists only at I/O edges.
struct Box {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  double x1() const { return cx - 0.5 * w; }
  double y1() const { return cy - 0.5 * h; }
  double x2() const { return cx + 0.5 * w; }
  double y2() const { return cy + 0.5 * h; }
  double area() const { return w * h; }

  static Box from_corners(double x1, double y1, double x2, double y2) {
    return {0.5 * (x1 + x2), 0.5 * (y1 + y2), x2 - x1, y2 - y1};
  }

  bool operator==(const Box&) const = default;
};

struct GroundTruthBox {
  Box box;
  std::string class_label;
};

}  // namespace ocg

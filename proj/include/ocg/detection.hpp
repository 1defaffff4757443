// SPDX-License-Identifier: Apache-2.0
//
// Anchor-based single-scale detection head on the stride-32 reference grid.
//
// Raw output layout: [N, 9 * 5, H, W] with channel a * 5 + k holding, for
// anchor a, k = 0..3 the box offsets (t_x, t_y, t_w, t_h) and k = 4 the
// objectness logit. Boxes decode YOLOv3-style:
//   b_x = (sigmoid(t_x) + col) * stride,   b_w = p_w * exp(t_w)
//   b_y = (sigmoid(t_y) + row) * stride,   b_h = p_h * exp(t_h)
#pragma once

#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "ocg/box.hpp"
#include "ocg/config.hpp"
#include "ocg/nn.hpp"

namespace ocg::detection {

template <typename T>
using Var = ad::Var<T>;

using AnchorTable = std::vector<Anchor>;

inline constexpr int64_t kValuesPerAnchor = 5;

/// Throws InvalidConfig unless there are exactly 9 positive anchors.
void validate_anchors(const AnchorTable& anchors);

struct PredictedBox {
  Box box;
  double score = 0.0;
  int64_t cell_row = 0;
  int64_t cell_col = 0;
  int64_t anchor_index = 0;
};

/// Ground-truth box expressed in raw-output coordinates.
struct EncodedBox {
  int64_t cell_row = 0;
  int64_t cell_col = 0;
  int64_t anchor_index = 0;
  double tx = 0.0;
  double ty = 0.0;
  double tw = 0.0;
  double th = 0.0;
};

struct LossBreakdown {
  double total = 0.0;
  double mse_component = 0.0;
  double bce_component = 0.0;
};

/// Anchor whose shape (centered on the box) has the highest IoU with `box`;
/// ties go to the lowest index.
int64_t best_anchor(const Box& box, const AnchorTable& anchors);

/// Assigns `box` to the grid cell containing its center and to its best
/// anchor, and returns the raw offsets that decode back to it.
EncodedBox encode_box(const Box& box, const AnchorTable& anchors, int64_t stride, int64_t grid_h,
                      int64_t grid_w);

Box decode_box(const EncodedBox& e, const AnchorTable& anchors, int64_t stride);

/// k-means over box shapes with 1 - IoU (boxes centered on each other) as
/// the distance, seeded k-means++ style. Returns k anchors sorted by area.
/// Throws InvalidInput with fewer than k boxes.
AnchorTable fit_anchors(std::span<const Box> boxes, uint64_t seed, int64_t k = 9,
                        int64_t max_iterations = 300);

/// Highest-objectness anchor over the grid. raw is [45, H, W] or
/// [1, 45, H, W]. Ties go to the lowest (row, col, anchor).
template <typename T>
PredictedBox decode_and_select(const Tensor<T>& raw, const AnchorTable& anchors, int64_t stride);

/// Throws InvalidAnnotation for zero-area boxes or boxes outside the image
/// (1 px tolerance).
void validate_gt(const Box& gt, const ImageSize& image);

template <typename T>
struct Loss {
  Var<T> value;  // scalar, differentiable w.r.t. raw
  LossBreakdown parts;
};

/// MSE on the positive anchor's (sigmoid(t_x), sigmoid(t_y), t_w, t_h)
/// against the encoded target, plus BCE-with-logits on every objectness
/// logit (1 at the positive, 0 elsewhere). Each component is averaged over
/// its terms; mse_weight scales the MSE component.
template <typename T>
Loss<T> compute_loss(const Var<T>& raw, const std::vector<Box>& gts, const AnchorTable& anchors,
                     int64_t stride, const ImageSize& image, double mse_weight = 1.0);

template <typename T>
class DetectionHead {
 public:
  DetectionHead(const ModelConfig& cfg, nn::Rng& rng);
  /// Conv1x1(CBR(F_hat_s (.) A_s)).
  Var<T> forward(const Var<T>& f_s_hat, const Var<T>& a_s, bool training);
  void state(const std::string& prefix, nn::StateList<T>& out);

  nn::ConvBnAct<T>& fuse() { return fuse_; }
  nn::Conv2d<T>& predict() { return predict_; }

 private:
  nn::ConvBnAct<T> fuse_;
  nn::Conv2d<T> predict_;
};

/// {sample_id, bbox:[cx,cy,w,h], score, grid_cell:[r,c], anchor_index}
nlohmann::json prediction_record(const std::string& sample_id, const PredictedBox& p);
PredictedBox prediction_from_record(const nlohmann::json& j);

}  // namespace ocg::detection

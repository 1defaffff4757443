// SPDX-License-Identifier: Apache-2.0
#include "ocg/detection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

namespace ocg::detection {

namespace {

constexpr double kFracEps = 1e-12;

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline double logit(double p) {
  p = std::clamp(p, kFracEps, 1.0 - kFracEps);
  return std::log(p / (1.0 - p));
}

// log(1 + exp(-|z|)) + max(z, 0) - z * y
inline double bce_with_logits(double z, double y) {
  return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

}  // namespace

void validate_anchors(const AnchorTable& anchors) {
  if (static_cast<int64_t>(anchors.size()) != ModelConfig::kNumAnchors) {
    throw InvalidConfig("anchor table must have exactly 9 entries, got " +
                        std::to_string(anchors.size()));
  }
  for (const auto& a : anchors) {
    if (!(a.width > 0.0) || !(a.height > 0.0)) {
      throw InvalidConfig("anchor dimensions must be positive");
    }
  }
}

int64_t best_anchor(const Box& box, const AnchorTable& anchors) {
  int64_t best = 0;
  double best_iou = -1.0;
  for (size_t a = 0; a < anchors.size(); ++a) {
    const double inter = std::min(box.w, anchors[a].width) * std::min(box.h, anchors[a].height);
    const double uni = box.w * box.h + anchors[a].width * anchors[a].height - inter;
    const double iou = inter / uni;
    if (iou > best_iou) {
      best_iou = iou;
      best = static_cast<int64_t>(a);
    }
  }
  return best;
}

EncodedBox encode_box(const Box& box, const AnchorTable& anchors, int64_t stride, int64_t grid_h,
                      int64_t grid_w) {
  validate_anchors(anchors);
  if (!(box.w > 0.0) || !(box.h > 0.0)) throw InvalidAnnotation("encode_box: zero-area box");
  const double s = static_cast<double>(stride);
  EncodedBox e;
  e.cell_col = std::clamp<int64_t>(static_cast<int64_t>(std::floor(box.cx / s)), 0, grid_w - 1);
  e.cell_row = std::clamp<int64_t>(static_cast<int64_t>(std::floor(box.cy / s)), 0, grid_h - 1);
  e.anchor_index = best_anchor(box, anchors);
  const Anchor& a = anchors[static_cast<size_t>(e.anchor_index)];
  e.tx = logit(box.cx / s - static_cast<double>(e.cell_col));
  e.ty = logit(box.cy / s - static_cast<double>(e.cell_row));
  e.tw = std::log(box.w / a.width);
  e.th = std::log(box.h / a.height);
  return e;
}

namespace {

double shape_iou(double w1, double h1, double w2, double h2) {
  const double inter = std::min(w1, w2) * std::min(h1, h2);
  return inter / (w1 * h1 + w2 * h2 - inter);
}

}  // namespace

AnchorTable fit_anchors(std::span<const Box> boxes, uint64_t seed, int64_t k,
                        int64_t max_iterations) {
  if (k < 1 || static_cast<int64_t>(boxes.size()) < k) {
    throw InvalidInput("fit_anchors: need at least " + std::to_string(k) + " boxes, got " +
                       std::to_string(boxes.size()));
  }
  for (const Box& b : boxes) {
    if (!(b.w > 0.0) || !(b.h > 0.0)) throw InvalidInput("fit_anchors: box with zero area");
  }
  std::mt19937_64 rng(seed);
  AnchorTable centers;
  const Box& first = boxes[std::uniform_int_distribution<size_t>(0, boxes.size() - 1)(rng)];
  centers.push_back({first.w, first.h});
  std::vector<double> dist(boxes.size());
  while (static_cast<int64_t>(centers.size()) < k) {
    for (size_t i = 0; i < boxes.size(); ++i) {
      double d = 1.0;
      for (const Anchor& c : centers) {
        d = std::min(d, 1.0 - shape_iou(boxes[i].w, boxes[i].h, c.width, c.height));
      }
      dist[i] = d * d;
    }
    const double total = std::accumulate(dist.begin(), dist.end(), 0.0);
    size_t pick = 0;
    if (total > 0.0) {
      pick = std::discrete_distribution<size_t>(dist.begin(), dist.end())(rng);
    } else {
      pick = std::uniform_int_distribution<size_t>(0, boxes.size() - 1)(rng);
    }
    centers.push_back({boxes[pick].w, boxes[pick].h});
  }

  std::vector<int64_t> assign(boxes.size(), -1);
  for (int64_t it = 0; it < max_iterations; ++it) {
    bool changed = false;
    for (size_t i = 0; i < boxes.size(); ++i) {
      int64_t best = 0;
      double best_iou = -1.0;
      for (int64_t c = 0; c < k; ++c) {
        const double iou = shape_iou(boxes[i].w, boxes[i].h, centers[c].width, centers[c].height);
        if (iou > best_iou) {
          best_iou = iou;
          best = c;
        }
      }
      changed = changed || assign[i] != best;
      assign[i] = best;
    }
    if (!changed) break;
    std::vector<double> sw(k, 0.0), sh(k, 0.0);
    std::vector<int64_t> count(k, 0);
    for (size_t i = 0; i < boxes.size(); ++i) {
      sw[assign[i]] += boxes[i].w;
      sh[assign[i]] += boxes[i].h;
      ++count[assign[i]];
    }
    for (int64_t c = 0; c < k; ++c) {
      if (count[c] > 0) centers[c] = {sw[c] / count[c], sh[c] / count[c]};
    }
  }
  std::sort(centers.begin(), centers.end(), [](const Anchor& a, const Anchor& b) {
    const double aa = a.width * a.height, ab = b.width * b.height;
    return aa != ab ? aa < ab : a.height < b.height;
  });
  return centers;
}

Box decode_box(const EncodedBox& e, const AnchorTable& anchors, int64_t stride) {
  const Anchor& a = anchors.at(static_cast<size_t>(e.anchor_index));
  const double s = static_cast<double>(stride);
  return {(sigmoid(e.tx) + static_cast<double>(e.cell_col)) * s,
          (sigmoid(e.ty) + static_cast<double>(e.cell_row)) * s, a.width * std::exp(e.tw),
          a.height * std::exp(e.th)};
}

template <typename T>
PredictedBox decode_and_select(const Tensor<T>& raw, const AnchorTable& anchors, int64_t stride) {
  validate_anchors(anchors);
  const Shape& s = raw.shape();
  const bool batched = s.size() == 4;
  if (!(s.size() == 3 || (batched && s[0] == 1))) {
    throw ShapeError("decode_and_select: expected [45,H,W] or [1,45,H,W], got " + shape_str(s));
  }
  const int64_t ch = s[batched ? 1 : 0];
  const int64_t gh = s[batched ? 2 : 1];
  const int64_t gw = s[batched ? 3 : 2];
  const int64_t na = static_cast<int64_t>(anchors.size());
  if (ch != na * kValuesPerAnchor) {
    throw ShapeError("decode_and_select: " + std::to_string(ch) + " channels for " +
                     std::to_string(na) + " anchors");
  }
  if (gh <= 0 || gw <= 0) throw InvalidInput("decode_and_select: empty grid");
  const int64_t plane = gh * gw;
  auto at = [&](int64_t a, int64_t k, int64_t r, int64_t c) {
    return static_cast<double>(raw[(a * kValuesPerAnchor + k) * plane + r * gw + c]);
  };

  EncodedBox best;
  double best_logit = -std::numeric_limits<double>::infinity();
  bool found = false;
  for (int64_t r = 0; r < gh; ++r)
    for (int64_t c = 0; c < gw; ++c)
      for (int64_t a = 0; a < na; ++a) {
        const double z = at(a, 4, r, c);
        if (!std::isfinite(z)) throw InvalidInput("decode_and_select: non-finite objectness");
        if (!found || z > best_logit) {
          found = true;
          best_logit = z;
          best = {r, c, a, at(a, 0, r, c), at(a, 1, r, c), at(a, 2, r, c), at(a, 3, r, c)};
        }
      }
  PredictedBox p;
  p.box = decode_box(best, anchors, stride);
  p.score = sigmoid(best_logit);
  p.cell_row = best.cell_row;
  p.cell_col = best.cell_col;
  p.anchor_index = best.anchor_index;
  return p;
}

void validate_gt(const Box& gt, const ImageSize& image) {
  constexpr double kTol = 1.0;
  if (!(gt.w > 0.0) || !(gt.h > 0.0) || !std::isfinite(gt.cx) || !std::isfinite(gt.cy)) {
    throw InvalidAnnotation("ground-truth box has zero area");
  }
  if (gt.x1() < -kTol || gt.y1() < -kTol || gt.x2() > static_cast<double>(image.width) + kTol ||
      gt.y2() > static_cast<double>(image.height) + kTol) {
    throw InvalidAnnotation("ground-truth box outside the " + std::to_string(image.width) + "x" +
                            std::to_string(image.height) + " reference image");
  }
}

template <typename T>
Loss<T> compute_loss(const Var<T>& raw, const std::vector<Box>& gts, const AnchorTable& anchors,
                     int64_t stride, const ImageSize& image, double mse_weight) {
  validate_anchors(anchors);
  const Shape& s = raw.shape();
  const int64_t na = static_cast<int64_t>(anchors.size());
  if (s.size() != 4 || s[1] != na * kValuesPerAnchor) {
    throw ShapeError("compute_loss: raw must be [N,45,H,W], got " + shape_str(s));
  }
  const int64_t n = s[0], gh = s[2], gw = s[3], plane = gh * gw;
  if (static_cast<int64_t>(gts.size()) != n) {
    throw ShapeError("compute_loss: " + std::to_string(gts.size()) + " boxes for batch of " +
                     std::to_string(n));
  }
  std::vector<EncodedBox> targets;
  targets.reserve(gts.size());
  for (const Box& gt : gts) {
    validate_gt(gt, image);
    targets.push_back(encode_box(gt, anchors, stride, gh, gw));
  }

  const Tensor<T>& rv = raw.value();
  auto idx = [&](int64_t i, int64_t a, int64_t k, int64_t r, int64_t c) {
    return ((i * na + a) * kValuesPerAnchor + k) * plane + r * gw + c;
  };
  const double mse_terms = 4.0 * static_cast<double>(n);
  const double bce_terms = static_cast<double>(n * na * plane);

  double mse = 0.0, bce = 0.0;
  Tensor<T> grad(s);
  for (int64_t i = 0; i < n; ++i) {
    const EncodedBox& e = targets[static_cast<size_t>(i)];
    const double fx = sigmoid(e.tx), fy = sigmoid(e.ty);
    const int64_t a = e.anchor_index, r = e.cell_row, c = e.cell_col;
    const double px = sigmoid(rv[idx(i, a, 0, r, c)]);
    const double py = sigmoid(rv[idx(i, a, 1, r, c)]);
    const double dw = rv[idx(i, a, 2, r, c)] - e.tw;
    const double dh = rv[idx(i, a, 3, r, c)] - e.th;
    mse += (px - fx) * (px - fx) + (py - fy) * (py - fy) + dw * dw + dh * dh;
    const double gscale = 2.0 * mse_weight / mse_terms;
    grad[idx(i, a, 0, r, c)] = static_cast<T>(gscale * (px - fx) * px * (1.0 - px));
    grad[idx(i, a, 1, r, c)] = static_cast<T>(gscale * (py - fy) * py * (1.0 - py));
    grad[idx(i, a, 2, r, c)] = static_cast<T>(gscale * dw);
    grad[idx(i, a, 3, r, c)] = static_cast<T>(gscale * dh);

    for (int64_t aa = 0; aa < na; ++aa)
      for (int64_t rr = 0; rr < gh; ++rr)
        for (int64_t cc = 0; cc < gw; ++cc) {
          const double y = (aa == a && rr == r && cc == c) ? 1.0 : 0.0;
          const double z = rv[idx(i, aa, 4, rr, cc)];
          bce += bce_with_logits(z, y);
          grad[idx(i, aa, 4, rr, cc)] = static_cast<T>((sigmoid(z) - y) / bce_terms);
        }
  }

  LossBreakdown parts;
  parts.mse_component = mse_weight * mse / mse_terms;
  parts.bce_component = bce / bce_terms;
  parts.total = parts.mse_component + parts.bce_component;

  Tensor<T> value({1}, std::vector<T>{static_cast<T>(parts.total)});
  Var<T> loss = ad::make_result<T>(std::move(value), {raw},
                                   [grad = std::move(grad)](ad::Node<T>& self) {
                                     Tensor<T>& g = self.inputs[0]->grad_buffer();
                                     const T seed = self.grad[0];
                                     for (int64_t k = 0; k < g.numel(); ++k) g[k] += seed * grad[k];
                                   });
  return {loss, parts};
}

template <typename T>
DetectionHead<T>::DetectionHead(const ModelConfig& cfg, nn::Rng& rng)
    : fuse_(cfg.nc, cfg.nc, cfg.det_kernel, 1, nn::Activation::kRelu, rng, cfg.bn_momentum,
            cfg.bn_eps),
      predict_(cfg.nc, ModelConfig::kNumAnchors * kValuesPerAnchor, 1, 1, 0, true, rng) {
  const T prior = static_cast<T>(std::log(cfg.objectness_prior / (1.0 - cfg.objectness_prior)));
  Tensor<T>& b = predict_.bias().mutable_value();
  for (int64_t a = 0; a < ModelConfig::kNumAnchors; ++a) b[a * kValuesPerAnchor + 4] = prior;
}

template <typename T>
Var<T> DetectionHead<T>::forward(const Var<T>& f_s_hat, const Var<T>& a_s, bool training) {
  const Shape& fs = f_s_hat.shape();
  const Shape& as = a_s.shape();
  if (fs.size() != 4 || as.size() != 4 || as[0] != fs[0] || as[1] != 1 || as[2] != fs[2] ||
      as[3] != fs[3]) {
    throw ShapeError("detect_head: attention " + shape_str(as) + " does not match features " +
                     shape_str(fs));
  }
  return predict_.forward(fuse_.forward(ops::mul(f_s_hat, a_s), training));
}

template <typename T>
void DetectionHead<T>::state(const std::string& prefix, nn::StateList<T>& out) {
  fuse_.state(nn::join(prefix, "fuse"), out);
  predict_.state(nn::join(prefix, "predict"), out);
}

nlohmann::json prediction_record(const std::string& sample_id, const PredictedBox& p) {
  return {{"sample_id", sample_id},
          {"bbox", {p.box.cx, p.box.cy, p.box.w, p.box.h}},
          {"score", p.score},
          {"grid_cell", {p.cell_row, p.cell_col}},
          {"anchor_index", p.anchor_index}};
}

PredictedBox prediction_from_record(const nlohmann::json& j) {
  PredictedBox p;
  const auto& b = j.at("bbox");
  p.box = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
           b.at(3).get<double>()};
  p.score = j.at("score").get<double>();
  p.cell_row = j.at("grid_cell").at(0).get<int64_t>();
  p.cell_col = j.at("grid_cell").at(1).get<int64_t>();
  p.anchor_index = j.at("anchor_index").get<int64_t>();
  return p;
}

template PredictedBox decode_and_select<float>(const Tensor<float>&, const AnchorTable&, int64_t);
template PredictedBox decode_and_select<double>(const Tensor<double>&, const AnchorTable&,
                                                int64_t);
template Loss<float> compute_loss<float>(const Var<float>&, const std::vector<Box>&,
                                         const AnchorTable&, int64_t, const ImageSize&, double);
template Loss<double> compute_loss<double>(const Var<double>&, const std::vector<Box>&,
                                           const AnchorTable&, int64_t, const ImageSize&, double);
template class DetectionHead<float>;
template class DetectionHead<double>;

}  // namespace ocg::detection

// SPDX-License-Identifier: Apache-2.0
//
// Independent reference computations for tests. Nothing here calls into the
// library's math; inputs and outputs are plain vectors.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ocg/autograd.hpp"
#include "ocg/box.hpp"
#include "ocg/config.hpp"

namespace ocg::testing {

using Rng = std::mt19937_64;

template <typename T>
Tensor<T> random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<T> t(shape);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(d(rng));
  return t;
}

/// Fresh empty directory under the test build tree.
std::filesystem::path temp_dir(const std::string& name);

/// Gaussian click map, one pixel at a time: exp(-d^2 / (2 s^2)) with
/// d = hypot(col - x, row - y) and s = sigma * hypot(H, W).
std::vector<double> gkt_oracle(double x, double y, double sigma, int64_t h, int64_t w);

/// IoU by counting unit pixels of integer-aligned corner boxes.
double raster_iou(int x1a, int y1a, int x2a, int y2a, int x1b, int y1b, int x2b, int y2b);

/// Row-major dense matrix.
struct Mat {
  int64_t rows = 0;
  int64_t cols = 0;
  std::vector<double> v;
  double& operator()(int64_t r, int64_t c) { return v[static_cast<size_t>(r * cols + c)]; }
  double operator()(int64_t r, int64_t c) const { return v[static_cast<size_t>(r * cols + c)]; }
};

Mat mat_from(const Tensor<double>& t, int64_t batch_index);
Mat matmul(const Mat& a, const Mat& b);
Mat columns(const Mat& a, int64_t begin, int64_t count);

/// softmax(Q K^T / sqrt(d_k)) V with explicit loops; weights returned too.
Mat attention_oracle(const Mat& q, const Mat& k, const Mat& v, int64_t d_k, Mat* weights = nullptr);

/// Concat_i attention(Q Wq_i, K Wk_i, V Wv_i) Wo with head i taking column
/// block i of the packed projections.
Mat mhca_oracle(const Mat& q, const Mat& k, const Mat& v, const Mat& wq, const Mat& wk,
                const Mat& wv, const Mat& wo, int64_t heads, int64_t d_k, int64_t d_v);

/// Direct convolution, batch-norm (given statistics) and ReLU composed by hand.
std::vector<double> cbr_oracle(const Tensor<double>& x, const Tensor<double>& w, int64_t stride,
                               int64_t pad, const std::vector<double>& mean,
                               const std::vector<double>& var, const std::vector<double>& gamma,
                               const std::vector<double>& beta, double eps);

/// Detection loss by scalar loops: MSE on the positive anchor's
/// (sigmoid tx, sigmoid ty, tw, th), BCE over every objectness logit.
struct LossOracle {
  double mse = 0.0;
  double bce = 0.0;
};
LossOracle loss_oracle(const Tensor<double>& raw, const std::vector<Box>& gts,
                       const std::vector<Anchor>& anchors, int64_t stride);

/// Compares the backpropagated gradient of `f` against central differences
/// for every listed input (up to `max_per_input` sampled entries each).
struct GradCheck {
  double max_rel_error = 0.0;
  int64_t checked = 0;
  std::string worst;
};
GradCheck check_gradients(const std::function<ad::Var<double>()>& f,
                          const std::vector<std::pair<std::string, ad::Var<double>*>>& inputs,
                          double h = 1e-5, int64_t max_per_input = 24, uint64_t seed = 0);

}  // namespace ocg::testing

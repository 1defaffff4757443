// SPDX-License-Identifier: Apache-2.0
#include "support/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ocg::testing {

std::filesystem::path temp_dir(const std::string& name) {
#ifdef OCG_TEST_TMP
  const std::filesystem::path root = OCG_TEST_TMP;
#else
  const std::filesystem::path root = std::filesystem::temp_directory_path() / "ocg_tests";
#endif
  const auto p = root / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

std::vector<double> gkt_oracle(double x, double y, double sigma, int64_t h, int64_t w) {
  const double s = sigma * std::hypot(static_cast<double>(h), static_cast<double>(w));
  std::vector<double> out;
  out.reserve(static_cast<size_t>(h * w));
  for (int64_t row = 0; row < h; ++row) {
    for (int64_t col = 0; col < w; ++col) {
      const double d = std::hypot(static_cast<double>(col) - x, static_cast<double>(row) - y);
      out.push_back(std::exp(-0.5 * (d / s) * (d / s)));
    }
  }
  return out;
}

double raster_iou(int x1a, int y1a, int x2a, int y2a, int x1b, int y1b, int x2b, int y2b) {
  const int lo_x = std::min(x1a, x1b), hi_x = std::max(x2a, x2b);
  const int lo_y = std::min(y1a, y1b), hi_y = std::max(y2a, y2b);
  int64_t inter = 0, uni = 0;
  for (int py = lo_y; py < hi_y; ++py) {
    for (int px = lo_x; px < hi_x; ++px) {
      const bool in_a = px >= x1a && px < x2a && py >= y1a && py < y2a;
      const bool in_b = px >= x1b && px < x2b && py >= y1b && py < y2b;
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  }
  return static_cast<double>(inter) / static_cast<double>(uni);
}

Mat mat_from(const Tensor<double>& t, int64_t b) {
  const int64_t r = t.size(-2), c = t.size(-1);
  Mat m{r, c, std::vector<double>(static_cast<size_t>(r * c))};
  std::copy_n(t.data() + b * r * c, r * c, m.v.begin());
  return m;
}

Mat matmul(const Mat& a, const Mat& b) {
  Mat c{a.rows, b.cols, std::vector<double>(static_cast<size_t>(a.rows * b.cols), 0.0)};
  for (int64_t i = 0; i < a.rows; ++i)
    for (int64_t j = 0; j < b.cols; ++j) {
      double s = 0.0;
      for (int64_t k = 0; k < a.cols; ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

Mat columns(const Mat& a, int64_t begin, int64_t count) {
  Mat out{a.rows, count, std::vector<double>(static_cast<size_t>(a.rows * count))};
  for (int64_t i = 0; i < a.rows; ++i)
    for (int64_t j = 0; j < count; ++j) out(i, j) = a(i, begin + j);
  return out;
}

Mat attention_oracle(const Mat& q, const Mat& k, const Mat& v, int64_t d_k, Mat* weights) {
  Mat w{q.rows, k.rows, std::vector<double>(static_cast<size_t>(q.rows * k.rows))};
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_k));
  for (int64_t i = 0; i < q.rows; ++i) {
    double mx = -1e300;
    for (int64_t j = 0; j < k.rows; ++j) {
      double s = 0.0;
      for (int64_t c = 0; c < q.cols; ++c) s += q(i, c) * k(j, c);
      w(i, j) = s * scale;
      mx = std::max(mx, w(i, j));
    }
    double z = 0.0;
    for (int64_t j = 0; j < k.rows; ++j) z += (w(i, j) = std::exp(w(i, j) - mx));
    for (int64_t j = 0; j < k.rows; ++j) w(i, j) /= z;
  }
  if (weights) *weights = w;
  return matmul(w, v);
}

Mat mhca_oracle(const Mat& q, const Mat& k, const Mat& v, const Mat& wq, const Mat& wk,
                const Mat& wv, const Mat& wo, int64_t heads, int64_t d_k, int64_t d_v) {
  Mat concat{q.rows, heads * d_v, std::vector<double>(static_cast<size_t>(q.rows * heads * d_v))};
  for (int64_t h = 0; h < heads; ++h) {
    const Mat head = attention_oracle(matmul(q, columns(wq, h * d_k, d_k)),
                                      matmul(k, columns(wk, h * d_k, d_k)),
                                      matmul(v, columns(wv, h * d_v, d_v)), d_k);
    for (int64_t i = 0; i < q.rows; ++i)
      for (int64_t j = 0; j < d_v; ++j) concat(i, h * d_v + j) = head(i, j);
  }
  return matmul(concat, wo);
}

std::vector<double> cbr_oracle(const Tensor<double>& x, const Tensor<double>& w, int64_t stride,
                               int64_t pad, const std::vector<double>& mean,
                               const std::vector<double>& var, const std::vector<double>& gamma,
                               const std::vector<double>& beta, double eps) {
  const int64_t n = x.size(0), cin = x.size(1), hh = x.size(2), ww = x.size(3);
  const int64_t cout = w.size(0), k = w.size(2);
  const int64_t oh = (hh + 2 * pad - k) / stride + 1, ow = (ww + 2 * pad - k) / stride + 1;
  std::vector<double> y;
  for (int64_t b = 0; b < n; ++b)
    for (int64_t o = 0; o < cout; ++o)
      for (int64_t r = 0; r < oh; ++r)
        for (int64_t c = 0; c < ow; ++c) {
          double s = 0.0;
          for (int64_t i = 0; i < cin; ++i)
            for (int64_t kr = 0; kr < k; ++kr)
              for (int64_t kc = 0; kc < k; ++kc) {
                const int64_t ir = r * stride - pad + kr, ic = c * stride - pad + kc;
                if (ir < 0 || ir >= hh || ic < 0 || ic >= ww) continue;
                s += x[((b * cin + i) * hh + ir) * ww + ic] * w[((o * cin + i) * k + kr) * k + kc];
              }
          const auto u = static_cast<size_t>(o);
          const double bn = gamma[u] * (s - mean[u]) / std::sqrt(var[u] + eps) + beta[u];
          y.push_back(std::max(0.0, bn));
        }
  return y;
}

LossOracle loss_oracle(const Tensor<double>& raw, const std::vector<Box>& gts,
                       const std::vector<Anchor>& anchors, int64_t stride) {
  const int64_t n = raw.size(0), na = static_cast<int64_t>(anchors.size());
  const int64_t gh = raw.size(2), gw = raw.size(3);
  auto at = [&](int64_t b, int64_t a, int64_t k, int64_t r, int64_t c) {
    return raw[(((b * na + a) * 5 + k) * gh + r) * gw + c];
  };
  auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  LossOracle out;
  int64_t bce_terms = 0;
  for (int64_t b = 0; b < n; ++b) {
    const Box& g = gts[static_cast<size_t>(b)];
    const double s = static_cast<double>(stride);
    const auto col = static_cast<int64_t>(std::floor(g.cx / s));
    const auto row = static_cast<int64_t>(std::floor(g.cy / s));
    // Best anchor by shape IoU, scanning for the strictly largest.
    int64_t best = 0;
    double best_iou = -1.0;
    for (int64_t a = 0; a < na; ++a) {
      const Anchor& p = anchors[static_cast<size_t>(a)];
      const double inter = std::min(g.w, p.width) * std::min(g.h, p.height);
      const double iou = inter / (g.w * g.h + p.width * p.height - inter);
      if (iou > best_iou) {
        best_iou = iou;
        best = a;
      }
    }
    const Anchor& p = anchors[static_cast<size_t>(best)];
    const double fx = g.cx / s - static_cast<double>(col);
    const double fy = g.cy / s - static_cast<double>(row);
    const double ex = sig(at(b, best, 0, row, col)) - fx;
    const double ey = sig(at(b, best, 1, row, col)) - fy;
    const double ew = at(b, best, 2, row, col) - std::log(g.w / p.width);
    const double eh = at(b, best, 3, row, col) - std::log(g.h / p.height);
    out.mse += ex * ex + ey * ey + ew * ew + eh * eh;
    for (int64_t a = 0; a < na; ++a)
      for (int64_t r = 0; r < gh; ++r)
        for (int64_t c = 0; c < gw; ++c) {
          const double y = (a == best && r == row && c == col) ? 1.0 : 0.0;
          const double pz = sig(at(b, a, 4, r, c));
          out.bce -= y * std::log(pz) + (1.0 - y) * std::log(1.0 - pz);
          ++bce_terms;
        }
  }
  out.mse /= 4.0 * static_cast<double>(n);
  out.bce /= static_cast<double>(bce_terms);
  return out;
}

GradCheck check_gradients(const std::function<ad::Var<double>()>& f,
                          const std::vector<std::pair<std::string, ad::Var<double>*>>& inputs,
                          double h, int64_t max_per_input, uint64_t seed) {
  for (auto& [name, v] : inputs) {
    v->set_requires_grad(true);
    v->zero_grad();
  }
  ad::Var<double> y = f();
  y.backward();
  std::vector<Tensor<double>> analytic;
  for (auto& [name, v] : inputs) analytic.push_back(v->grad());

  Rng rng(seed);
  GradCheck out;
  for (size_t i = 0; i < inputs.size(); ++i) {
    auto& [name, v] = inputs[i];
    std::vector<int64_t> idx(static_cast<size_t>(v->numel()));
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    if (static_cast<int64_t>(idx.size()) > max_per_input) idx.resize(static_cast<size_t>(max_per_input));
    for (int64_t k : idx) {
      double& x = v->mutable_value()[k];
      const double x0 = x;
      double fp, fm;
      {
        ad::NoGradGuard g;
        x = x0 + h;
        fp = f().value()[0];
        x = x0 - h;
        fm = f().value()[0];
        x = x0;
      }
      const double num = (fp - fm) / (2.0 * h);
      const double ana = analytic[i][k];
      const double rel = std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-6});
      ++out.checked;
      if (rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst = name + "[" + std::to_string(k) + "] analytic " + std::to_string(ana) +
                    " numeric " + std::to_string(num);
      }
    }
  }
  return out;
}

}  // namespace ocg::testing

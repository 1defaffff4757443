// SPDX-License-Identifier: Apache-2.0
#include "ocg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ocg/kernels.hpp"

namespace ocg::ops {

using ad::Node;

namespace {

template <typename T>
void require_rank(const Var<T>& x, int64_t rank, const char* op) {
  if (x.value().dim() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(x.shape()));
  }
}

template <typename T>
Tensor<T>& grad_of(Node<T>& self, size_t i) {
  return self.inputs[i]->grad_buffer();
}

template <typename T>
bool wants(const Node<T>& self, size_t i) {
  return self.inputs[i]->requires_grad;
}

// Broadcast bookkeeping for binary elementwise ops.
struct Broadcast {
  Shape out;
  std::vector<int64_t> stride_a;
  std::vector<int64_t> stride_b;
  bool same = false;
};

Broadcast plan_broadcast(const Shape& a, const Shape& b) {
  Broadcast p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  const size_t rank = std::max(a.size(), b.size());
  p.out.assign(rank, 1);
  p.stride_a.assign(rank, 0);
  p.stride_b.assign(rank, 0);
  Shape pa(rank, 1), pb(rank, 1);
  std::copy(a.begin(), a.end(), pa.begin() + static_cast<int64_t>(rank - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + static_cast<int64_t>(rank - b.size()));
  for (size_t i = 0; i < rank; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    p.out[i] = std::max(pa[i], pb[i]);
  }
  int64_t sa = 1, sb = 1;
  for (size_t i = rank; i-- > 0;) {
    p.stride_a[i] = pa[i] == 1 ? 0 : sa;
    p.stride_b[i] = pb[i] == 1 ? 0 : sb;
    sa *= pa[i];
    sb *= pb[i];
  }
  return p;
}

// Calls f(out_index, a_index, b_index) over every output element in order.
template <typename F>
void for_each_broadcast(const Broadcast& p, F&& f) {
  const size_t rank = p.out.size();
  std::vector<int64_t> idx(rank, 0);
  const int64_t total = numel_of(p.out);
  int64_t ia = 0, ib = 0;
  for (int64_t o = 0; o < total; ++o) {
    f(o, ia, ib);
    for (size_t d = rank; d-- > 0;) {
      ++idx[d];
      ia += p.stride_a[d];
      ib += p.stride_b[d];
      if (idx[d] < p.out[d]) break;
      ia -= p.stride_a[d] * idx[d];
      ib -= p.stride_b[d] * idx[d];
      idx[d] = 0;
    }
  }
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>* bias, int64_t stride,
              int64_t pad) {
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d weight");
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  if (xs[1] != ws[1]) {
    throw ShapeError("conv2d: input has " + std::to_string(xs[1]) + " channels, weight expects " +
                     std::to_string(ws[1]));
  }
  if (ws[2] != ws[3]) throw ShapeError("conv2d: only square kernels are supported");
  kernels::ConvGeometry g{xs[1], xs[2], xs[3], ws[0], ws[2], stride, pad};
  if (g.out_height() <= 0 || g.out_width() <= 0) {
    throw ShapeError("conv2d: input " + shape_str(xs) + " too small for kernel");
  }
  if (bias != nullptr && bias->numel() != ws[0]) throw ShapeError("conv2d: bias size mismatch");
  Tensor<T> y({xs[0], ws[0], g.out_height(), g.out_width()});
  kernels::conv2d_forward<T>(g, xs[0], x.value().data(), weight.value().data(),
                             bias != nullptr ? bias->value().data() : nullptr, y.data());

  std::vector<Var<T>> inputs{x, weight};
  if (bias != nullptr) inputs.push_back(*bias);
  const bool has_bias = bias != nullptr;
  const int64_t batch = xs[0];
  return ad::make_result<T>(std::move(y), inputs, [g, batch, has_bias](Node<T>& self) {
    const T* dy = self.grad.data();
    if (wants(self, 0)) {
      Tensor<T> dx(self.inputs[0]->value.shape());
      kernels::conv2d_backward_data<T>(g, batch, dy, self.inputs[1]->value.data(), dx.data());
      Tensor<T>& gx = grad_of(self, 0);
      for (int64_t i = 0; i < dx.numel(); ++i) gx[i] += dx[i];
    }
    const bool need_w = wants(self, 1);
    const bool need_b = has_bias && wants(self, 2);
    if (need_w || need_b) {
      Tensor<T> dw(self.inputs[1]->value.shape());
      Tensor<T> db;
      if (need_b) db = Tensor<T>::zeros({g.out_channels});
      kernels::conv2d_backward_weight<T>(g, batch, self.inputs[0]->value.data(), dy, dw.data(),
                                         need_b ? db.data() : nullptr);
      if (need_w) {
        Tensor<T>& gw = grad_of(self, 1);
        for (int64_t i = 0; i < dw.numel(); ++i) gw[i] += dw[i];
      }
      if (need_b) {
        Tensor<T>& gb = grad_of(self, 2);
        for (int64_t i = 0; i < db.numel(); ++i) gb[i] += db[i];
      }
    }
  });
}

template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  Tensor<T>& running_mean, Tensor<T>& running_var, bool training, T momentum,
                  T eps) {
  require_rank(x, 4, "batch_norm");
  const auto& s = x.shape();
  const int64_t n = s[0], c = s[1], hw = s[2] * s[3];
  if (gamma.numel() != c || beta.numel() != c || running_mean.numel() != c ||
      running_var.numel() != c) {
    throw ShapeError("batch_norm: parameter size does not match " + std::to_string(c) +
                     " channels");
  }
  const int64_t count = n * hw;
  if (training && count < 2) {
    throw ShapeError("batch_norm: training mode needs more than one value per channel");
  }
  const T* xd = x.value().data();
  Tensor<T> y(s);
  Tensor<T> xhat(s);
  Tensor<T> invstd({c});
  const T* gd = gamma.value().data();
  const T* bd = beta.value().data();

#pragma omp parallel for schedule(static)
  for (int64_t ch = 0; ch < c; ++ch) {
    T mu, var;
    if (training) {
      T acc = T(0);
      for (int64_t i = 0; i < n; ++i) {
        const T* p = xd + (i * c + ch) * hw;
        for (int64_t k = 0; k < hw; ++k) acc += p[k];
      }
      mu = acc / T(count);
      T sq = T(0);
      for (int64_t i = 0; i < n; ++i) {
        const T* p = xd + (i * c + ch) * hw;
        for (int64_t k = 0; k < hw; ++k) sq += (p[k] - mu) * (p[k] - mu);
      }
      var = sq / T(count);
      running_mean[ch] = (T(1) - momentum) * running_mean[ch] + momentum * mu;
      running_var[ch] =
          (T(1) - momentum) * running_var[ch] + momentum * var * T(count) / T(count - 1);
    } else {
      mu = running_mean[ch];
      var = running_var[ch];
    }
    const T is = T(1) / std::sqrt(var + eps);
    invstd[ch] = is;
    for (int64_t i = 0; i < n; ++i) {
      const int64_t off = (i * c + ch) * hw;
      for (int64_t k = 0; k < hw; ++k) {
        const T h = (xd[off + k] - mu) * is;
        xhat[off + k] = h;
        y[off + k] = gd[ch] * h + bd[ch];
      }
    }
  }

  return ad::make_result<T>(
      std::move(y), {x, gamma, beta},
      [xhat = std::move(xhat), invstd = std::move(invstd), training, n, c, hw,
       count](Node<T>& self) {
        const T* dy = self.grad.data();
        const T* gd = self.inputs[1]->value.data();
        const bool need_x = wants(self, 0), need_g = wants(self, 1), need_b = wants(self, 2);
        T* gx = need_x ? grad_of(self, 0).data() : nullptr;
        T* gg = need_g ? grad_of(self, 1).data() : nullptr;
        T* gb = need_b ? grad_of(self, 2).data() : nullptr;
#pragma omp parallel for schedule(static)
        for (int64_t ch = 0; ch < c; ++ch) {
          T sum_dy = T(0), sum_dy_xhat = T(0);
          for (int64_t i = 0; i < n; ++i) {
            const int64_t off = (i * c + ch) * hw;
            for (int64_t k = 0; k < hw; ++k) {
              sum_dy += dy[off + k];
              sum_dy_xhat += dy[off + k] * xhat[off + k];
            }
          }
          if (gg) gg[ch] += sum_dy_xhat;
          if (gb) gb[ch] += sum_dy;
          if (!gx) continue;
          const T gscale = gd[ch] * invstd[ch];
          for (int64_t i = 0; i < n; ++i) {
            const int64_t off = (i * c + ch) * hw;
            for (int64_t k = 0; k < hw; ++k) {
              if (training) {
                gx[off + k] += gscale * (dy[off + k] - sum_dy / T(count) -
                                         xhat[off + k] * sum_dy_xhat / T(count));
              } else {
                gx[off + k] += gscale * dy[off + k];
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return leaky_relu(x, T(0));
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  const auto& xv = x.value();
  Tensor<T> y(xv.shape());
  const int64_t total = xv.numel();
  const T* xd = xv.data();
  T* yd = y.data();
#pragma omp parallel for simd schedule(static)
  for (int64_t i = 0; i < total; ++i) yd[i] = xd[i] > T(0) ? xd[i] : slope * xd[i];
  return ad::make_result<T>(std::move(y), {x}, [slope](Node<T>& self) {
    const T* xd = self.inputs[0]->value.data();
    const T* dy = self.grad.data();
    T* gx = grad_of(self, 0).data();
    const int64_t total = self.grad.numel();
#pragma omp parallel for simd schedule(static)
    for (int64_t i = 0; i < total; ++i) gx[i] += xd[i] > T(0) ? dy[i] : slope * dy[i];
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  const auto& xv = x.value();
  Tensor<T> y(xv.shape());
  for (int64_t i = 0; i < xv.numel(); ++i) y[i] = T(1) / (T(1) + std::exp(-xv[i]));
  return ad::make_result<T>(std::move(y), {x}, [](Node<T>& self) {
    const Tensor<T>& yv = self.value;
    Tensor<T>& gx = grad_of(self, 0);
    for (int64_t i = 0; i < yv.numel(); ++i) gx[i] += self.grad[i] * yv[i] * (T(1) - yv[i]);
  });
}

namespace {

template <typename T, bool kMul>
Var<T> binary(const Var<T>& a, const Var<T>& b) {
  Broadcast p = plan_broadcast(a.shape(), b.shape());
  Tensor<T> y(p.out);
  const T* ad_ = a.value().data();
  const T* bd = b.value().data();
  T* yd = y.data();
  if (p.same) {
    const int64_t total = y.numel();
#pragma omp parallel for simd schedule(static)
    for (int64_t i = 0; i < total; ++i) yd[i] = kMul ? ad_[i] * bd[i] : ad_[i] + bd[i];
  } else {
    for_each_broadcast(p, [&](int64_t o, int64_t ia, int64_t ib) {
      yd[o] = kMul ? ad_[ia] * bd[ib] : ad_[ia] + bd[ib];
    });
  }
  return ad::make_result<T>(std::move(y), {a, b}, [p = std::move(p)](Node<T>& self) {
    const T* dy = self.grad.data();
    const T* av = self.inputs[0]->value.data();
    const T* bv = self.inputs[1]->value.data();
    const bool need_a = wants(self, 0), need_b = wants(self, 1);
    T* ga = need_a ? grad_of(self, 0).data() : nullptr;
    T* gb = need_b ? grad_of(self, 1).data() : nullptr;
    if (p.same) {
      const int64_t total = self.grad.numel();
      if (ga) {
#pragma omp parallel for simd schedule(static)
        for (int64_t i = 0; i < total; ++i) ga[i] += kMul ? dy[i] * bv[i] : dy[i];
      }
      if (gb) {
#pragma omp parallel for simd schedule(static)
        for (int64_t i = 0; i < total; ++i) gb[i] += kMul ? dy[i] * av[i] : dy[i];
      }
      return;
    }
    for_each_broadcast(p, [&](int64_t o, int64_t ia, int64_t ib) {
      if (ga) ga[ia] += kMul ? dy[o] * bv[ib] : dy[o];
      if (gb) gb[ib] += kMul ? dy[o] * av[ia] : dy[o];
    });
  });
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return binary<T, false>(a, b);
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return binary<T, true>(a, b);
}

template <typename T>
Var<T> scale(const Var<T>& x, T s) {
  Tensor<T> y(x.shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = x.value()[i] * s;
  return ad::make_result<T>(std::move(y), {x}, [s](Node<T>& self) {
    Tensor<T>& gx = grad_of(self, 0);
    for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += self.grad[i] * s;
  });
}

template <typename T>
Var<T> max_pool2d(const Var<T>& x, int64_t kernel, int64_t stride, int64_t pad) {
  require_rank(x, 4, "max_pool2d");
  const auto& s = x.shape();
  const int64_t oh = (s[2] + 2 * pad - kernel) / stride + 1;
  const int64_t ow = (s[3] + 2 * pad - kernel) / stride + 1;
  if (oh <= 0 || ow <= 0) throw ShapeError("max_pool2d: input too small");
  Tensor<T> y({s[0], s[1], oh, ow});
  std::vector<int64_t> arg(static_cast<size_t>(y.numel()));
  const T* xd = x.value().data();
  const int64_t planes = s[0] * s[1];
#pragma omp parallel for schedule(static)
  for (int64_t pl = 0; pl < planes; ++pl) {
    const T* plane = xd + pl * s[2] * s[3];
    for (int64_t oy = 0; oy < oh; ++oy)
      for (int64_t ox = 0; ox < ow; ++ox) {
        T best = -std::numeric_limits<T>::infinity();
        int64_t best_i = -1;
        for (int64_t ki = 0; ki < kernel; ++ki)
          for (int64_t kj = 0; kj < kernel; ++kj) {
            const int64_t iy = oy * stride - pad + ki, ix = ox * stride - pad + kj;
            if (iy < 0 || iy >= s[2] || ix < 0 || ix >= s[3]) continue;
            const T v = plane[iy * s[3] + ix];
            if (best_i < 0 || v > best) {
              best = v;
              best_i = iy * s[3] + ix;
            }
          }
        const int64_t o = (pl * oh + oy) * ow + ox;
        y[o] = best;
        arg[static_cast<size_t>(o)] = pl * s[2] * s[3] + best_i;
      }
  }
  return ad::make_result<T>(std::move(y), {x}, [arg = std::move(arg)](Node<T>& self) {
    Tensor<T>& gx = grad_of(self, 0);
    for (size_t o = 0; o < arg.size(); ++o) gx[arg[o]] += self.grad[static_cast<int64_t>(o)];
  });
}

template <typename T>
Var<T> adaptive_avg_pool2d(const Var<T>& x, int64_t out_h, int64_t out_w) {
  require_rank(x, 4, "adaptive_avg_pool2d");
  const auto& s = x.shape();
  if (out_h <= 0 || out_w <= 0 || out_h > s[2] || out_w > s[3]) {
    throw ShapeError("adaptive_avg_pool2d: cannot pool " + shape_str(s) + " to " +
                     std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  const int64_t h = s[2], w = s[3];
  auto lo = [](int64_t i, int64_t in, int64_t out) { return (i * in) / out; };
  auto hi = [](int64_t i, int64_t in, int64_t out) { return ((i + 1) * in + out - 1) / out; };
  Tensor<T> y({s[0], s[1], out_h, out_w});
  const T* xd = x.value().data();
  const int64_t planes = s[0] * s[1];
#pragma omp parallel for schedule(static)
  for (int64_t pl = 0; pl < planes; ++pl) {
    for (int64_t oy = 0; oy < out_h; ++oy)
      for (int64_t ox = 0; ox < out_w; ++ox) {
        const int64_t y0 = lo(oy, h, out_h), y1 = hi(oy, h, out_h);
        const int64_t x0 = lo(ox, w, out_w), x1 = hi(ox, w, out_w);
        T acc = T(0);
        for (int64_t iy = y0; iy < y1; ++iy)
          for (int64_t ix = x0; ix < x1; ++ix) acc += xd[(pl * h + iy) * w + ix];
        y[(pl * out_h + oy) * out_w + ox] = acc / T((y1 - y0) * (x1 - x0));
      }
  }
  return ad::make_result<T>(std::move(y), {x}, [=](Node<T>& self) {
    Tensor<T>& gx = grad_of(self, 0);
    for (int64_t pl = 0; pl < planes; ++pl)
      for (int64_t oy = 0; oy < out_h; ++oy)
        for (int64_t ox = 0; ox < out_w; ++ox) {
          const int64_t y0 = lo(oy, h, out_h), y1 = hi(oy, h, out_h);
          const int64_t x0 = lo(ox, w, out_w), x1 = hi(ox, w, out_w);
          const T g = self.grad[(pl * out_h + oy) * out_w + ox] / T((y1 - y0) * (x1 - x0));
          for (int64_t iy = y0; iy < y1; ++iy)
            for (int64_t ix = x0; ix < x1; ++ix) gx[(pl * h + iy) * w + ix] += g;
        }
  });
}

template <typename T>
Var<T> channel_mean(const Var<T>& x) {
  require_rank(x, 4, "channel_mean");
  const auto& s = x.shape();
  const int64_t n = s[0], c = s[1], hw = s[2] * s[3];
  Tensor<T> y({n, 1, s[2], s[3]});
  const T* xd = x.value().data();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t k = 0; k < hw; ++k) {
      T acc = T(0);
      for (int64_t ch = 0; ch < c; ++ch) acc += xd[(i * c + ch) * hw + k];
      y[i * hw + k] = acc / T(c);
    }
  return ad::make_result<T>(std::move(y), {x}, [n, c, hw](Node<T>& self) {
    Tensor<T>& gx = grad_of(self, 0);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t k = 0; k < hw; ++k) gx[(i * c + ch) * hw + k] += self.grad[i * hw + k] / T(c);
  });
}

template <typename T>
Var<T> spatial_mean(const Var<T>& x) {
  require_rank(x, 4, "spatial_mean");
  const auto& s = x.shape();
  const int64_t planes = s[0] * s[1], hw = s[2] * s[3];
  Tensor<T> y({s[0], s[1]});
  for (int64_t pl = 0; pl < planes; ++pl) {
    T acc = T(0);
    for (int64_t k = 0; k < hw; ++k) acc += x.value()[pl * hw + k];
    y[pl] = acc / T(hw);
  }
  return ad::make_result<T>(std::move(y), {x}, [planes, hw](Node<T>& self) {
    Tensor<T>& gx = grad_of(self, 0);
    for (int64_t pl = 0; pl < planes; ++pl)
      for (int64_t k = 0; k < hw; ++k) gx[pl * hw + k] += self.grad[pl] / T(hw);
  });
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& s0 = parts[0].shape();
  if (s0.size() != 4) throw ShapeError("concat_channels: expected NCHW inputs");
  int64_t channels = 0;
  std::vector<int64_t> offsets;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3]) {
      throw ShapeError("concat_channels: " + shape_str(s) + " incompatible with " +
                       shape_str(s0));
    }
    offsets.push_back(channels);
    channels += s[1];
  }
  const int64_t n = s0[0], hw = s0[2] * s0[3];
  Tensor<T> y({n, channels, s0[2], s0[3]});
  for (size_t k = 0; k < parts.size(); ++k) {
    const int64_t c = parts[k].size(1);
    for (int64_t i = 0; i < n; ++i)
      std::copy_n(parts[k].value().data() + i * c * hw, c * hw,
                  y.data() + (i * channels + offsets[k]) * hw);
  }
  return ad::make_result<T>(std::move(y), parts, [offsets, n, hw, channels](Node<T>& self) {
    for (size_t k = 0; k < self.inputs.size(); ++k) {
      if (!wants(self, k)) continue;
      Tensor<T>& g = grad_of(self, k);
      const int64_t c = self.inputs[k]->value.size(1);
      for (int64_t i = 0; i < n; ++i) {
        const T* src = self.grad.data() + (i * channels + offsets[k]) * hw;
        T* dst = g.data() + i * c * hw;
        for (int64_t j = 0; j < c * hw; ++j) dst[j] += src[j];
      }
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> y = x.value().reshaped(std::move(shape));
  return ad::make_result<T>(std::move(y), {x}, [](Node<T>& self) {
    Tensor<T>& gx = grad_of(self, 0);
    for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += self.grad[i];
  });
}

template <typename T>
Var<T> permute(const Var<T>& x, const std::vector<int64_t>& perm) {
  const Shape& s = x.shape();
  const size_t rank = s.size();
  if (perm.size() != rank) throw ShapeError("permute: rank mismatch");
  Shape out(rank);
  std::vector<int64_t> in_stride(rank), src_stride(rank);
  int64_t acc = 1;
  for (size_t i = rank; i-- > 0;) {
    in_stride[i] = acc;
    acc *= s[i];
  }
  for (size_t i = 0; i < rank; ++i) {
    out[i] = s[static_cast<size_t>(perm[i])];
    src_stride[i] = in_stride[static_cast<size_t>(perm[i])];
  }
  // src offset of every output element, in output order.
  const int64_t total = x.numel();
  std::vector<int64_t> src(static_cast<size_t>(total));
  std::vector<int64_t> idx(rank, 0);
  int64_t off = 0;
  for (int64_t o = 0; o < total; ++o) {
    src[static_cast<size_t>(o)] = off;
    for (size_t d = rank; d-- > 0;) {
      ++idx[d];
      off += src_stride[d];
      if (idx[d] < out[d]) break;
      off -= src_stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  Tensor<T> y(out);
  for (int64_t o = 0; o < total; ++o) y[o] = x.value()[src[static_cast<size_t>(o)]];
  return ad::make_result<T>(std::move(y), {x}, [src = std::move(src)](Node<T>& self) {
    Tensor<T>& gx = grad_of(self, 0);
    for (size_t o = 0; o < src.size(); ++o) gx[src[o]] += self.grad[static_cast<int64_t>(o)];
  });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool trans_a, bool trans_b) {
  require_rank(a, 3, "matmul");
  require_rank(b, 3, "matmul");
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as[0] != bs[0]) throw ShapeError("matmul: batch mismatch");
  const int64_t batch = as[0];
  const int64_t m = trans_a ? as[2] : as[1];
  const int64_t k = trans_a ? as[1] : as[2];
  const int64_t kb = trans_b ? bs[2] : bs[1];
  const int64_t n = trans_b ? bs[1] : bs[2];
  if (k != kb) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(as) + " x " +
                     shape_str(bs));
  }
  Tensor<T> y({batch, m, n});
  for (int64_t i = 0; i < batch; ++i) {
    kernels::gemm<T>(trans_a, trans_b, m, n, k, T(1), a.value().data() + i * as[1] * as[2],
                     as[2], b.value().data() + i * bs[1] * bs[2], bs[2], T(0),
                     y.data() + i * m * n, n);
  }
  return ad::make_result<T>(std::move(y), {a, b}, [=](Node<T>& self) {
    const T* dy = self.grad.data();
    const T* av = self.inputs[0]->value.data();
    const T* bv = self.inputs[1]->value.data();
    for (int64_t i = 0; i < batch; ++i) {
      const T* dyi = dy + i * m * n;
      const T* ai = av + i * as[1] * as[2];
      const T* bi = bv + i * bs[1] * bs[2];
      if (wants(self, 0)) {
        T* gai = grad_of(self, 0).data() + i * as[1] * as[2];
        // dA = dY * op(B)^T, stored transposed when trans_a.
        if (!trans_a) {
          kernels::gemm<T>(false, !trans_b, m, k, n, T(1), dyi, n, bi, bs[2], T(1), gai, as[2]);
        } else {
          kernels::gemm<T>(trans_b, true, k, m, n, T(1), bi, bs[2], dyi, n, T(1), gai, as[2]);
        }
      }
      if (wants(self, 1)) {
        T* gbi = grad_of(self, 1).data() + i * bs[1] * bs[2];
        // dB = op(A)^T * dY, stored transposed when trans_b.
        if (!trans_b) {
          kernels::gemm<T>(!trans_a, false, k, n, m, T(1), ai, as[2], dyi, n, T(1), gbi, bs[2]);
        } else {
          kernels::gemm<T>(true, trans_a, n, k, m, T(1), dyi, n, ai, as[2], T(1), gbi, bs[2]);
        }
      }
    }
  });
}

template <typename T>
Var<T> attend(const Var<T>& weights, const Var<T>& values) {
  require_rank(weights, 3, "attend");
  require_rank(values, 3, "attend");
  const auto& ws = weights.shape();
  const auto& vs = values.shape();
  if (ws[0] != vs[0] || ws[2] != vs[1]) {
    throw ShapeError("attend: " + shape_str(ws) + " x " + shape_str(vs));
  }
  const int64_t batch = ws[0], m = ws[1], k = ws[2], n = vs[2];
  Tensor<T> y({batch, m, n});
  kernels::attend<T>(batch, m, k, n, weights.value().data(), values.value().data(), y.data());
  return ad::make_result<T>(std::move(y), {weights, values}, [=](Node<T>& self) {
    const T* dy = self.grad.data();
    const T* wv = self.inputs[0]->value.data();
    const T* vv = self.inputs[1]->value.data();
    for (int64_t i = 0; i < batch; ++i) {
      const T* dyi = dy + i * m * n;
      if (wants(self, 0)) {
        kernels::gemm<T>(false, true, m, k, n, T(1), dyi, n, vv + i * k * n, n, T(1),
                         grad_of(self, 0).data() + i * m * k, k);
      }
      if (wants(self, 1)) {
        kernels::gemm<T>(true, false, k, n, m, T(1), wv + i * m * k, k, dyi, n, T(1),
                         grad_of(self, 1).data() + i * k * n, n);
      }
    }
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>* bias) {
  require_rank(weight, 2, "linear weight");
  const Shape& xs = x.shape();
  if (xs.empty() || xs.back() != weight.size(0)) {
    throw ShapeError("linear: input " + shape_str(xs) + " incompatible with weight " +
                     shape_str(weight.shape()));
  }
  const int64_t in = weight.size(0), out = weight.size(1);
  if (bias != nullptr && bias->numel() != out) throw ShapeError("linear: bias size mismatch");
  const int64_t rows = x.numel() / in;
  Shape ys = xs;
  ys.back() = out;
  Tensor<T> y(ys);
  kernels::gemm<T>(false, false, rows, out, in, T(1), x.value().data(), in, weight.value().data(),
                   out, T(0), y.data(), out);
  if (bias != nullptr) {
    const T* bd = bias->value().data();
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t j = 0; j < out; ++j) y[r * out + j] += bd[j];
  }
  std::vector<Var<T>> inputs{x, weight};
  if (bias != nullptr) inputs.push_back(*bias);
  const bool has_bias = bias != nullptr;
  return ad::make_result<T>(std::move(y), inputs, [=](Node<T>& self) {
    const T* dy = self.grad.data();
    if (wants(self, 0)) {
      kernels::gemm<T>(false, true, rows, in, out, T(1), dy, out, self.inputs[1]->value.data(),
                       out, T(1), grad_of(self, 0).data(), in);
    }
    if (wants(self, 1)) {
      kernels::gemm<T>(true, false, in, out, rows, T(1), self.inputs[0]->value.data(), in, dy,
                       out, T(1), grad_of(self, 1).data(), out);
    }
    if (has_bias && wants(self, 2)) {
      T* gb = grad_of(self, 2).data();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < out; ++j) gb[j] += dy[r * out + j];
    }
  });
}

template <typename T>
Var<T> softmax_lastdim(const Var<T>& x) {
  const Shape& s = x.shape();
  if (s.empty()) throw ShapeError("softmax: scalar input");
  const int64_t cols = s.back();
  const int64_t rows = x.numel() / cols;
  Tensor<T> y(s);
  const T* xd = x.value().data();
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < rows; ++r) {
    const T* in = xd + r * cols;
    T* out = y.data() + r * cols;
    const T mx = *std::max_element(in, in + cols);
    kernels::ExactSum z;
    for (int64_t j = 0; j < cols; ++j) {
      out[j] = std::exp(in[j] - mx);
      z.add(out[j]);
    }
    const T total = static_cast<T>(z.value());
    for (int64_t j = 0; j < cols; ++j) out[j] /= total;
  }
  return ad::make_result<T>(std::move(y), {x}, [rows, cols](Node<T>& self) {
    const T* yv = self.value.data();
    const T* dy = self.grad.data();
    T* gx = grad_of(self, 0).data();
    for (int64_t r = 0; r < rows; ++r) {
      T dot = T(0);
      for (int64_t j = 0; j < cols; ++j) dot += dy[r * cols + j] * yv[r * cols + j];
      for (int64_t j = 0; j < cols; ++j)
        gx[r * cols + j] += yv[r * cols + j] * (dy[r * cols + j] - dot);
    }
  });
}

template <typename T>
Var<T> l2_normalize(const Var<T>& x, int64_t axis, T eps) {
  const Shape& s = x.shape();
  if (axis < 0) axis += static_cast<int64_t>(s.size());
  if (axis < 0 || axis >= static_cast<int64_t>(s.size())) {
    throw ShapeError("l2_normalize: axis out of range");
  }
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
  const int64_t len = s[static_cast<size_t>(axis)];
  Tensor<T> y(s);
  Tensor<T> norms({outer, inner});
  const T* xd = x.value().data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      T sq = T(0);
      for (int64_t k = 0; k < len; ++k) {
        const T v = xd[(o * len + k) * inner + i];
        sq += v * v;
      }
      const T nrm = std::max(std::sqrt(sq), eps);
      norms[o * inner + i] = nrm;
      for (int64_t k = 0; k < len; ++k) y[(o * len + k) * inner + i] = xd[(o * len + k) * inner + i] / nrm;
    }
  return ad::make_result<T>(std::move(y), {x}, [=, norms = std::move(norms)](Node<T>& self) {
    const T* yv = self.value.data();
    const T* dy = self.grad.data();
    T* gx = grad_of(self, 0).data();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t i = 0; i < inner; ++i) {
        const T nrm = norms[o * inner + i];
        if (nrm <= eps) {
          for (int64_t k = 0; k < len; ++k) gx[(o * len + k) * inner + i] += dy[(o * len + k) * inner + i] / eps;
          continue;
        }
        T dot = T(0);
        for (int64_t k = 0; k < len; ++k) {
          const int64_t q = (o * len + k) * inner + i;
          dot += dy[q] * yv[q];
        }
        for (int64_t k = 0; k < len; ++k) {
          const int64_t q = (o * len + k) * inner + i;
          gx[q] += (dy[q] - yv[q] * dot) / nrm;
        }
      }
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T acc = T(0);
  for (int64_t i = 0; i < x.numel(); ++i) acc += x.value()[i];
  return ad::make_result<T>(Tensor<T>({1}, std::vector<T>{acc}), {x}, [](Node<T>& self) {
    Tensor<T>& gx = grad_of(self, 0);
    for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += self.grad[0];
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T(1) / T(x.numel()));
}

#define OCG_INSTANTIATE_OPS(T)                                                                  \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>*, int64_t, int64_t);        \
  template Var<T> batch_norm(const Var<T>&, const Var<T>&, const Var<T>&, Tensor<T>&,           \
                             Tensor<T>&, bool, T, T);                                           \
  template Var<T> relu(const Var<T>&);                                                          \
  template Var<T> leaky_relu(const Var<T>&, T);                                                 \
  template Var<T> sigmoid(const Var<T>&);                                                       \
  template Var<T> add(const Var<T>&, const Var<T>&);                                            \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                            \
  template Var<T> scale(const Var<T>&, T);                                                      \
  template Var<T> max_pool2d(const Var<T>&, int64_t, int64_t, int64_t);                         \
  template Var<T> adaptive_avg_pool2d(const Var<T>&, int64_t, int64_t);                         \
  template Var<T> channel_mean(const Var<T>&);                                                  \
  template Var<T> spatial_mean(const Var<T>&);                                                  \
  template Var<T> concat_channels(const std::vector<Var<T>>&);                                  \
  template Var<T> reshape(const Var<T>&, Shape);                                                \
  template Var<T> permute(const Var<T>&, const std::vector<int64_t>&);                          \
  template Var<T> matmul(const Var<T>&, const Var<T>&, bool, bool);                             \
  template Var<T> attend(const Var<T>&, const Var<T>&);                                         \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>*);                          \
  template Var<T> softmax_lastdim(const Var<T>&);                                               \
  template Var<T> l2_normalize(const Var<T>&, int64_t, T);                                      \
  template Var<T> sum(const Var<T>&);                                                           \
  template Var<T> mean(const Var<T>&);

OCG_INSTANTIATE_OPS(float)
OCG_INSTANTIATE_OPS(double)

}  // namespace ocg::ops

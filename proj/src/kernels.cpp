// SPDX-License-Identifier: Apache-2.0
#include "ocg/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ocg::kernels {

namespace {

template <typename T>
struct Vec;
template <>
struct Vec<float> {
  typedef float type __attribute__((vector_size(64)));
  static constexpr int64_t lanes = 16;
};
template <>
struct Vec<double> {
  typedef double type __attribute__((vector_size(64)));
  static constexpr int64_t lanes = 8;
};

constexpr int64_t kMr = 8;
constexpr int64_t kNrVecs = 2;
constexpr int64_t kKc = 256;
constexpr int64_t kMc = 96;
constexpr int64_t kNc = 2048;

// Below this many multiply-adds the packing overhead dominates.
constexpr int64_t kSmallGemm = 16 * 1024;

// Upper bound on the im2col scratch buffer, in elements.
constexpr int64_t kMaxColElems = int64_t{1} << 22;

template <typename T>
inline T load_a(bool trans, const T* a, int64_t lda, int64_t i, int64_t k) {
  return trans ? a[k * lda + i] : a[i * lda + k];
}

template <typename T>
void scale_c(int64_t m, int64_t n, T beta, T* c, int64_t ldc) {
  if (beta == T(1)) return;
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    T* row = c + i * ldc;
    if (beta == T(0)) {
      std::fill(row, row + n, T(0));
    } else {
      for (int64_t j = 0; j < n; ++j) row[j] *= beta;
    }
  }
}

template <typename T>
void small_gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, T alpha, const T* a,
                int64_t lda, const T* b, int64_t ldb, T* c, int64_t ldc) {
  for (int64_t i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    for (int64_t p = 0; p < k; ++p) {
      const T av = alpha * load_a(trans_a, a, lda, i, p);
      if (trans_b) {
        for (int64_t j = 0; j < n; ++j) crow[j] += av * b[j * ldb + p];
      } else {
        const T* brow = b + p * ldb;
        for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

// C[mr x nr] += packed_a[kc x kMr] * packed_b[kc x nr_full].
template <typename T>
inline void micro_kernel(int64_t kc, const T* pa, const T* pb, T* c, int64_t ldc, int64_t mr,
                         int64_t nr) {
  using V = typename Vec<T>::type;
  constexpr int64_t lanes = Vec<T>::lanes;
  constexpr int64_t nr_full = lanes * kNrVecs;
  V acc[kMr][kNrVecs];
  for (int64_t i = 0; i < kMr; ++i)
    for (int64_t v = 0; v < kNrVecs; ++v) acc[i][v] = V{};

  for (int64_t p = 0; p < kc; ++p) {
    V bv[kNrVecs];
    for (int64_t v = 0; v < kNrVecs; ++v) std::memcpy(&bv[v], pb + p * nr_full + v * lanes, sizeof(V));
    const T* ap = pa + p * kMr;
    for (int64_t i = 0; i < kMr; ++i) {
      const T s = ap[i];
      for (int64_t v = 0; v < kNrVecs; ++v) acc[i][v] += s * bv[v];
    }
  }

  if (mr == kMr && nr == nr_full) {
    for (int64_t i = 0; i < kMr; ++i) {
      T* crow = c + i * ldc;
      for (int64_t v = 0; v < kNrVecs; ++v) {
        V cv;
        std::memcpy(&cv, crow + v * lanes, sizeof(V));
        cv += acc[i][v];
        std::memcpy(crow + v * lanes, &cv, sizeof(V));
      }
    }
  } else {
    alignas(64) T tmp[kMr][nr_full];
    for (int64_t i = 0; i < kMr; ++i)
      for (int64_t v = 0; v < kNrVecs; ++v) std::memcpy(&tmp[i][v * lanes], &acc[i][v], sizeof(V));
    for (int64_t i = 0; i < mr; ++i)
      for (int64_t j = 0; j < nr; ++j) c[i * ldc + j] += tmp[i][j];
  }
}

template <typename T>
void blocked_gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, T alpha,
                  const T* a, int64_t lda, const T* b, int64_t ldb, T* c, int64_t ldc) {
  constexpr int64_t nr_full = Vec<T>::lanes * kNrVecs;
  thread_local std::vector<T> pack_a;
  thread_local std::vector<T> pack_b;
  pack_a.resize(static_cast<size_t>(kMc * kKc));
  pack_b.resize(static_cast<size_t>(kKc * (kNc + nr_full)));
  T* pa_base = pack_a.data();
  T* pb_base = pack_b.data();

#pragma omp parallel
  for (int64_t jc = 0; jc < n; jc += kNc) {
    const int64_t nc = std::min(kNc, n - jc);
    const int64_t n_panels = (nc + nr_full - 1) / nr_full;
    for (int64_t pc = 0; pc < k; pc += kKc) {
      const int64_t kc = std::min(kKc, k - pc);

#pragma omp for schedule(static)
      for (int64_t q = 0; q < n_panels; ++q) {
        T* dst = pb_base + q * kc * nr_full;
        const int64_t j0 = jc + q * nr_full;
        const int64_t nr = std::min(nr_full, jc + nc - j0);
        for (int64_t p = 0; p < kc; ++p) {
          T* d = dst + p * nr_full;
          if (trans_b) {
            for (int64_t j = 0; j < nr; ++j) d[j] = b[(j0 + j) * ldb + pc + p];
          } else {
            std::memcpy(d, b + (pc + p) * ldb + j0, static_cast<size_t>(nr) * sizeof(T));
          }
          for (int64_t j = nr; j < nr_full; ++j) d[j] = T(0);
        }
      }

      for (int64_t ic = 0; ic < m; ic += kMc) {
        const int64_t mc = std::min(kMc, m - ic);
        const int64_t m_panels = (mc + kMr - 1) / kMr;

#pragma omp for schedule(static)
        for (int64_t r = 0; r < m_panels; ++r) {
          T* dst = pa_base + r * kc * kMr;
          const int64_t i0 = ic + r * kMr;
          const int64_t mr = std::min(kMr, ic + mc - i0);
          for (int64_t p = 0; p < kc; ++p) {
            for (int64_t i = 0; i < mr; ++i)
              dst[p * kMr + i] = alpha * load_a(trans_a, a, lda, i0 + i, pc + p);
            for (int64_t i = mr; i < kMr; ++i) dst[p * kMr + i] = T(0);
          }
        }

#pragma omp for schedule(static)
        for (int64_t q = 0; q < n_panels; ++q) {
          const int64_t j0 = jc + q * nr_full;
          const int64_t nr = std::min(nr_full, jc + nc - j0);
          const T* pb = pb_base + q * kc * nr_full;
          for (int64_t r = 0; r < m_panels; ++r) {
            const int64_t i0 = ic + r * kMr;
            const int64_t mr = std::min(kMr, ic + mc - i0);
            micro_kernel<T>(kc, pa_base + r * kc * kMr, pb, c + i0 * ldc + j0, ldc, mr, nr);
          }
        }
      }
    }
  }
}

template <typename T>
int64_t chunk_columns(const ConvGeometry& g) {
  const int64_t total = g.out_height() * g.out_width();
  const int64_t cols = std::max<int64_t>(1, kMaxColElems / std::max<int64_t>(1, g.patch_size()));
  return std::min(total, cols);
}

bool is_pointwise(const ConvGeometry& g) { return g.kernel == 1 && g.stride == 1 && g.pad == 0; }

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, T alpha, const T* a,
          int64_t lda, const T* b, int64_t ldb, T beta, T* c, int64_t ldc) {
  if (m <= 0 || n <= 0) return;
  scale_c(m, n, beta, c, ldc);
  if (k <= 0 || alpha == T(0)) return;
  if (m * n * k <= kSmallGemm) {
    small_gemm(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, c, ldc);
  } else {
    blocked_gemm(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, c, ldc);
  }
}

template <typename T>
void im2col(const ConvGeometry& g, const T* image, int64_t col_begin, int64_t col_end, T* col) {
  const int64_t oh = g.out_height();
  const int64_t ow = g.out_width();
  (void)oh;
  const int64_t width = col_end - col_begin;
  const int64_t rows = g.patch_size();
  const int64_t kk = g.kernel * g.kernel;
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < rows; ++r) {
    const int64_t ch = r / kk;
    const int64_t ki = (r / g.kernel) % g.kernel;
    const int64_t kj = r % g.kernel;
    const T* plane = image + ch * g.in_height * g.in_width;
    T* dst = col + r * width;
    for (int64_t p = col_begin; p < col_end; ++p) {
      const int64_t oy = p / ow;
      const int64_t ox = p % ow;
      const int64_t iy = oy * g.stride - g.pad + ki;
      const int64_t ix = ox * g.stride - g.pad + kj;
      dst[p - col_begin] = (iy >= 0 && iy < g.in_height && ix >= 0 && ix < g.in_width)
                               ? plane[iy * g.in_width + ix]
                               : T(0);
    }
  }
}

template <typename T>
void col2im(const ConvGeometry& g, const T* col, int64_t col_begin, int64_t col_end, T* image) {
  const int64_t ow = g.out_width();
  const int64_t width = col_end - col_begin;
  const int64_t kk = g.kernel * g.kernel;
#pragma omp parallel for schedule(static)
  for (int64_t ch = 0; ch < g.in_channels; ++ch) {
    T* plane = image + ch * g.in_height * g.in_width;
    for (int64_t q = 0; q < kk; ++q) {
      const int64_t ki = q / g.kernel;
      const int64_t kj = q % g.kernel;
      const T* src = col + (ch * kk + q) * width;
      for (int64_t p = col_begin; p < col_end; ++p) {
        const int64_t oy = p / ow;
        const int64_t ox = p % ow;
        const int64_t iy = oy * g.stride - g.pad + ki;
        const int64_t ix = ox * g.stride - g.pad + kj;
        if (iy >= 0 && iy < g.in_height && ix >= 0 && ix < g.in_width)
          plane[iy * g.in_width + ix] += src[p - col_begin];
      }
    }
  }
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, int64_t batch, const T* x, const T* w, const T* bias,
                    T* y) {
  const int64_t hw = g.out_height() * g.out_width();
  const int64_t in_size = g.in_channels * g.in_height * g.in_width;
  const int64_t patch = g.patch_size();
  std::vector<T> col;
  for (int64_t n = 0; n < batch; ++n) {
    const T* xn = x + n * in_size;
    T* yn = y + n * g.out_channels * hw;
    if (is_pointwise(g)) {
      gemm<T>(false, false, g.out_channels, hw, patch, T(1), w, patch, xn, hw, T(0), yn, hw);
    } else {
      const int64_t chunk = chunk_columns<T>(g);
      col.resize(static_cast<size_t>(patch * chunk));
      for (int64_t begin = 0; begin < hw; begin += chunk) {
        const int64_t end = std::min(hw, begin + chunk);
        im2col(g, xn, begin, end, col.data());
        gemm<T>(false, false, g.out_channels, end - begin, patch, T(1), w, patch, col.data(),
                end - begin, T(0), yn + begin, hw);
      }
    }
    if (bias != nullptr) {
#pragma omp parallel for schedule(static)
      for (int64_t co = 0; co < g.out_channels; ++co) {
        T* row = yn + co * hw;
        for (int64_t p = 0; p < hw; ++p) row[p] += bias[co];
      }
    }
  }
}

template <typename T>
void conv2d_backward_data(const ConvGeometry& g, int64_t batch, const T* dy, const T* w, T* dx) {
  const int64_t hw = g.out_height() * g.out_width();
  const int64_t in_size = g.in_channels * g.in_height * g.in_width;
  const int64_t patch = g.patch_size();
  std::vector<T> col;
  for (int64_t n = 0; n < batch; ++n) {
    const T* dyn = dy + n * g.out_channels * hw;
    T* dxn = dx + n * in_size;
    if (is_pointwise(g)) {
      gemm<T>(true, false, patch, hw, g.out_channels, T(1), w, patch, dyn, hw, T(0), dxn, hw);
      continue;
    }
    std::fill(dxn, dxn + in_size, T(0));
    const int64_t chunk = chunk_columns<T>(g);
    col.resize(static_cast<size_t>(patch * chunk));
    for (int64_t begin = 0; begin < hw; begin += chunk) {
      const int64_t end = std::min(hw, begin + chunk);
      gemm<T>(true, false, patch, end - begin, g.out_channels, T(1), w, patch, dyn + begin, hw,
              T(0), col.data(), end - begin);
      col2im(g, col.data(), begin, end, dxn);
    }
  }
}

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, int64_t batch, const T* x, const T* dy, T* dw,
                            T* db) {
  const int64_t hw = g.out_height() * g.out_width();
  const int64_t in_size = g.in_channels * g.in_height * g.in_width;
  const int64_t patch = g.patch_size();
  std::vector<T> col;
  for (int64_t n = 0; n < batch; ++n) {
    const T* xn = x + n * in_size;
    const T* dyn = dy + n * g.out_channels * hw;
    if (is_pointwise(g)) {
      gemm<T>(false, true, g.out_channels, patch, hw, T(1), dyn, hw, xn, hw, T(1), dw, patch);
    } else {
      const int64_t chunk = chunk_columns<T>(g);
      col.resize(static_cast<size_t>(patch * chunk));
      for (int64_t begin = 0; begin < hw; begin += chunk) {
        const int64_t end = std::min(hw, begin + chunk);
        im2col(g, xn, begin, end, col.data());
        gemm<T>(false, true, g.out_channels, patch, end - begin, T(1), dyn + begin, hw,
                col.data(), end - begin, T(1), dw, patch);
      }
    }
    if (db != nullptr) {
#pragma omp parallel for schedule(static)
      for (int64_t co = 0; co < g.out_channels; ++co) {
        const T* row = dyn + co * hw;
        T s = T(0);
        for (int64_t p = 0; p < hw; ++p) s += row[p];
        db[co] += s;
      }
    }
  }
}

namespace reference {

template <typename T>
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, T alpha, const T* a,
          int64_t lda, const T* b, int64_t ldb, T beta, T* c, int64_t ldc) {
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      T s = T(0);
      for (int64_t p = 0; p < k; ++p) {
        const T av = trans_a ? a[p * lda + i] : a[i * lda + p];
        const T bv = trans_b ? b[j * ldb + p] : b[p * ldb + j];
        s += av * bv;
      }
      T& out = c[i * ldc + j];
      out = alpha * s + (beta == T(0) ? T(0) : beta * out);
    }
  }
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, int64_t batch, const T* x, const T* w, const T* bias,
                    T* y) {
  const int64_t oh = g.out_height(), ow = g.out_width();
  for (int64_t n = 0; n < batch; ++n)
    for (int64_t co = 0; co < g.out_channels; ++co)
      for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox) {
          T s = bias != nullptr ? bias[co] : T(0);
          for (int64_t ci = 0; ci < g.in_channels; ++ci)
            for (int64_t ki = 0; ki < g.kernel; ++ki)
              for (int64_t kj = 0; kj < g.kernel; ++kj) {
                const int64_t iy = oy * g.stride - g.pad + ki;
                const int64_t ix = ox * g.stride - g.pad + kj;
                if (iy < 0 || iy >= g.in_height || ix < 0 || ix >= g.in_width) continue;
                s += w[((co * g.in_channels + ci) * g.kernel + ki) * g.kernel + kj] *
                     x[((n * g.in_channels + ci) * g.in_height + iy) * g.in_width + ix];
              }
          y[((n * g.out_channels + co) * oh + oy) * ow + ox] = s;
        }
}

template <typename T>
void conv2d_backward_data(const ConvGeometry& g, int64_t batch, const T* dy, const T* w, T* dx) {
  const int64_t oh = g.out_height(), ow = g.out_width();
  std::fill(dx, dx + batch * g.in_channels * g.in_height * g.in_width, T(0));
  for (int64_t n = 0; n < batch; ++n)
    for (int64_t co = 0; co < g.out_channels; ++co)
      for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox) {
          const T d = dy[((n * g.out_channels + co) * oh + oy) * ow + ox];
          for (int64_t ci = 0; ci < g.in_channels; ++ci)
            for (int64_t ki = 0; ki < g.kernel; ++ki)
              for (int64_t kj = 0; kj < g.kernel; ++kj) {
                const int64_t iy = oy * g.stride - g.pad + ki;
                const int64_t ix = ox * g.stride - g.pad + kj;
                if (iy < 0 || iy >= g.in_height || ix < 0 || ix >= g.in_width) continue;
                dx[((n * g.in_channels + ci) * g.in_height + iy) * g.in_width + ix] +=
                    d * w[((co * g.in_channels + ci) * g.kernel + ki) * g.kernel + kj];
              }
        }
}

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, int64_t batch, const T* x, const T* dy, T* dw,
                            T* db) {
  const int64_t oh = g.out_height(), ow = g.out_width();
  for (int64_t n = 0; n < batch; ++n)
    for (int64_t co = 0; co < g.out_channels; ++co)
      for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox) {
          const T d = dy[((n * g.out_channels + co) * oh + oy) * ow + ox];
          if (db != nullptr) db[co] += d;
          for (int64_t ci = 0; ci < g.in_channels; ++ci)
            for (int64_t ki = 0; ki < g.kernel; ++ki)
              for (int64_t kj = 0; kj < g.kernel; ++kj) {
                const int64_t iy = oy * g.stride - g.pad + ki;
                const int64_t ix = ox * g.stride - g.pad + kj;
                if (iy < 0 || iy >= g.in_height || ix < 0 || ix >= g.in_width) continue;
                dw[((co * g.in_channels + ci) * g.kernel + ki) * g.kernel + kj] +=
                    d * x[((n * g.in_channels + ci) * g.in_height + iy) * g.in_width + ix];
              }
        }
}

}  // namespace reference

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void ExactSum::add(double x) {
  if (!std::isfinite(x)) {
    special_ += x;
    return;
  }
  size_t used = 0;
  for (double y : partials_) {
    if (std::abs(x) < std::abs(y)) std::swap(x, y);
    const double hi = x + y;
    const double lo = y - (hi - x);
    if (lo != 0.0) partials_[used++] = lo;
    x = hi;
  }
  partials_.resize(used);
  partials_.push_back(x);
}

double ExactSum::value() const {
  if (special_ != 0.0 || std::isnan(special_)) return special_;
  size_t n = partials_.size();
  if (n == 0) return 0.0;
  double hi = partials_[--n];
  double lo = 0.0;
  while (n > 0) {
    const double x = hi;
    const double y = partials_[--n];
    hi = x + y;
    lo = y - (hi - x);
    if (lo != 0.0) break;
  }
  // Ties between the two nearest doubles are decided by the remaining
  // partials, giving round-half-even on the exact sum.
  if (n > 0 && ((lo < 0.0 && partials_[n - 1] < 0.0) || (lo > 0.0 && partials_[n - 1] > 0.0))) {
    const double y = lo * 2.0;
    const double x = hi + y;
    if (y == x - hi) hi = x;
  }
  return hi;
}

template <typename T>
void attend(int64_t batch, int64_t m, int64_t k, int64_t n, const T* w, const T* v, T* out) {
#pragma omp parallel
  {
    ExactSum acc;
#pragma omp for schedule(static)
    for (int64_t row = 0; row < batch * m; ++row) {
      const int64_t b = row / m;
      const T* wr = w + row * k;
      const T* vb = v + b * k * n;
      for (int64_t j = 0; j < n; ++j) {
        acc.clear();
        for (int64_t t = 0; t < k; ++t) {
          acc.add(static_cast<double>(wr[t]) * static_cast<double>(vb[t * n + j]));
        }
        out[row * n + j] = static_cast<T>(acc.value());
      }
    }
  }
}

void set_num_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

#define OCG_INSTANTIATE_KERNELS(T)                                                             \
  template void gemm<T>(bool, bool, int64_t, int64_t, int64_t, T, const T*, int64_t, const T*, \
                        int64_t, T, T*, int64_t);                                              \
  template void attend<T>(int64_t, int64_t, int64_t, int64_t, const T*, const T*, T*);         \
  template void im2col<T>(const ConvGeometry&, const T*, int64_t, int64_t, T*);                \
  template void col2im<T>(const ConvGeometry&, const T*, int64_t, int64_t, T*);                \
  template void conv2d_forward<T>(const ConvGeometry&, int64_t, const T*, const T*, const T*,  \
                                  T*);                                                         \
  template void conv2d_backward_data<T>(const ConvGeometry&, int64_t, const T*, const T*, T*); \
  template void conv2d_backward_weight<T>(const ConvGeometry&, int64_t, const T*, const T*,    \
                                          T*, T*);                                             \
  template void reference::gemm<T>(bool, bool, int64_t, int64_t, int64_t, T, const T*,         \
                                   int64_t, const T*, int64_t, T, T*, int64_t);                \
  template void reference::conv2d_forward<T>(const ConvGeometry&, int64_t, const T*,          \
                                             const T*, const T*, T*);                          \
  template void reference::conv2d_backward_data<T>(const ConvGeometry&, int64_t, const T*,    \
                                                   const T*, T*);                              \
  template void reference::conv2d_backward_weight<T>(const ConvGeometry&, int64_t, const T*,  \
                                                     const T*, T*, T*);

OCG_INSTANTIATE_KERNELS(float)
OCG_INSTANTIATE_KERNELS(double)

}  // namespace ocg::kernels

// SPDX-License-Identifier: Apache-2.0
//
// Dense compute kernels. The default namespace holds the OpenMP-parallel,
// cache-blocked versions used by the network; `reference` holds the naive
// serial loops the tests and benchmarks compare against.
//
// Every parallel kernel assigns each output element to exactly one thread
// and reduces in a fixed order, so results do not depend on the thread count.
#pragma once

#include <cstdint>
#include <vector>

namespace ocg::kernels {

/// Geometry of a square-kernel 2-D convolution over NCHW data.
struct ConvGeometry {
  int64_t in_channels = 0;
  int64_t in_height = 0;
  int64_t in_width = 0;
  int64_t out_channels = 0;
  int64_t kernel = 1;
  int64_t stride = 1;
  int64_t pad = 0;

  int64_t out_height() const { return (in_height + 2 * pad - kernel) / stride + 1; }
  int64_t out_width() const { return (in_width + 2 * pad - kernel) / stride + 1; }
  int64_t patch_size() const { return in_channels * kernel * kernel; }
};

/// C = alpha * op(A) * op(B) + beta * C, all row-major.
/// op(A) is M x K, op(B) is K x N.
template <typename T>
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, T alpha, const T* a,
          int64_t lda, const T* b, int64_t ldb, T beta, T* c, int64_t ldc);

/// Unfolds output columns [col_begin, col_end) of one image into a
/// (patch_size x (col_end - col_begin)) matrix.
template <typename T>
void im2col(const ConvGeometry& g, const T* image, int64_t col_begin, int64_t col_end, T* col);

/// Scatter-adds a column chunk produced by im2col back into `image`.
template <typename T>
void col2im(const ConvGeometry& g, const T* col, int64_t col_begin, int64_t col_end, T* image);

/// y[n] = w * x[n] + bias. bias may be null.
template <typename T>
void conv2d_forward(const ConvGeometry& g, int64_t batch, const T* x, const T* w, const T* bias,
                    T* y);

/// dx = conv^T(dy). dx is overwritten.
template <typename T>
void conv2d_backward_data(const ConvGeometry& g, int64_t batch, const T* dy, const T* w, T* dx);

/// dw += dy (x) x, db += sum(dy). db may be null.
template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, int64_t batch, const T* x, const T* dy, T* dw,
                            T* db);

/// Sum of doubles rounded once at the end (Shewchuk partials with a
/// round-half-even fix-up), so the result does not depend on the order in
/// which terms are added.
class ExactSum {
 public:
  void add(double x);
  double value() const;
  void clear() {
    partials_.clear();
    special_ = 0.0;
  }

 private:
  std::vector<double> partials_;
  double special_ = 0.0;  // running sum of non-finite terms
};

/// out[b] = w[b] (M x K) * v[b] (K x N), each entry an ExactSum over K.
template <typename T>
void attend(int64_t batch, int64_t m, int64_t k, int64_t n, const T* w, const T* v, T* out);

namespace reference {

template <typename T>
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, T alpha, const T* a,
          int64_t lda, const T* b, int64_t ldb, T beta, T* c, int64_t ldc);

template <typename T>
void conv2d_forward(const ConvGeometry& g, int64_t batch, const T* x, const T* w, const T* bias,
                    T* y);

template <typename T>
void conv2d_backward_data(const ConvGeometry& g, int64_t batch, const T* dy, const T* w, T* dx);

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, int64_t batch, const T* x, const T* dy, T* dw,
                            T* db);

}  // namespace reference

/// Number of OpenMP threads the parallel kernels will use (1 without OpenMP).
int max_threads();
void set_num_threads(int n);

}  // namespace ocg::kernels

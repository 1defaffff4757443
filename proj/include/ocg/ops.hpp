// SPDX-License-Identifier: Apache-2.0
//
// Differentiable tensor operations. Image tensors are NCHW; token tensors are
// [batch, tokens, features]. All functions throw ShapeError on incompatible
// inputs.
#pragma once

#include <vector>

#include "ocg/autograd.hpp"

namespace ocg::ops {

template <typename T>
using Var = ad::Var<T>;

/// 2-D convolution, weight [Cout, Cin, k, k], optional bias [Cout].
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>* bias, int64_t stride,
              int64_t pad);

/// Batch normalization over (N, H, W) per channel. In training mode the
/// batch statistics are used and the running buffers are updated in place.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  Tensor<T>& running_mean, Tensor<T>& running_var, bool training, T momentum,
                  T eps);

template <typename T>
Var<T> relu(const Var<T>& x);
template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope);
template <typename T>
Var<T> sigmoid(const Var<T>& x);

/// Elementwise with numpy-style trailing-dimension broadcasting.
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& x, T s);

template <typename T>
Var<T> max_pool2d(const Var<T>& x, int64_t kernel, int64_t stride, int64_t pad);

/// Area-average pooling to a fixed output grid. Bin i covers
/// [floor(i*H/oh), ceil((i+1)*H/oh)), so divisible sizes give exact blocks.
template <typename T>
Var<T> adaptive_avg_pool2d(const Var<T>& x, int64_t out_h, int64_t out_w);

/// Mean over channels: [N, C, H, W] -> [N, 1, H, W].
template <typename T>
Var<T> channel_mean(const Var<T>& x);

/// Mean over spatial positions: [N, C, H, W] -> [N, C].
template <typename T>
Var<T> spatial_mean(const Var<T>& x);

/// Concatenation along the channel axis of NCHW tensors.
template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts);

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);

/// General axis permutation: out.shape[i] = x.shape[perm[i]].
template <typename T>
Var<T> permute(const Var<T>& x, const std::vector<int64_t>& perm);

/// Batched matrix product of rank-3 tensors.
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool trans_a = false, bool trans_b = false);

/// Batched weights [B, M, K] times values [B, K, N]. Each output is rounded
/// once from the exact sum over K, so reordering K leaves it bit-identical.
template <typename T>
Var<T> attend(const Var<T>& weights, const Var<T>& values);

/// x[..., in] * w[in, out] + b[out]. bias may be null.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>* bias);

template <typename T>
Var<T> softmax_lastdim(const Var<T>& x);

/// x / max(||x||_2, eps) along `axis`.
template <typename T>
Var<T> l2_normalize(const Var<T>& x, int64_t axis, T eps = T(1e-12));

template <typename T>
Var<T> sum(const Var<T>& x);
template <typename T>
Var<T> mean(const Var<T>& x);

}  // namespace ocg::ops

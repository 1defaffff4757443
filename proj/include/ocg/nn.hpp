// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ocg/ops.hpp"

namespace ocg::nn {

template <typename T>
using Var = ad::Var<T>;

/// Named reference to a learnable parameter or a persistent buffer.
template <typename T>
struct StateRef {
  std::string name;
  Var<T>* param = nullptr;
  Tensor<T>* buffer = nullptr;
};

template <typename T>
using StateList = std::vector<StateRef<T>>;

inline std::string join(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

/// Counts learnable scalars (buffers excluded).
template <typename T>
int64_t count_parameters(const StateList<T>& state) {
  int64_t n = 0;
  for (const auto& s : state)
    if (s.param != nullptr) n += s.param->numel();
  return n;
}

using Rng = std::mt19937_64;

template <typename T>
Var<T> uniform_param(Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(dist(rng));
  return Var<T>(std::move(t), true);
}

template <typename T>
Var<T> constant_param(Shape shape, T value) {
  return Var<T>(Tensor<T>(std::move(shape), value), true);
}

enum class Activation { kNone, kRelu, kLeaky };

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int64_t in, int64_t out, int64_t kernel, int64_t stride, int64_t pad, bool bias,
         Rng& rng);

  Var<T> forward(const Var<T>& x) const;
  void state(const std::string& prefix, StateList<T>& out);

  int64_t in_channels() const { return weight_.size(1); }
  int64_t out_channels() const { return weight_.size(0); }
  Var<T>& weight() { return weight_; }
  Var<T>& bias() { return bias_; }

 private:
  Var<T> weight_;
  Var<T> bias_;
  bool has_bias_ = false;
  int64_t stride_ = 1;
  int64_t pad_ = 0;
};

template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(int64_t channels, double momentum, double eps);

  Var<T> forward(const Var<T>& x, bool training);
  void state(const std::string& prefix, StateList<T>& out);

  Var<T>& gamma() { return gamma_; }
  Var<T>& beta() { return beta_; }
  Tensor<T>& running_mean() { return running_mean_; }
  Tensor<T>& running_var() { return running_var_; }

 private:
  Var<T> gamma_;
  Var<T> beta_;
  Tensor<T> running_mean_;
  Tensor<T> running_var_;
  T momentum_ = T(0.1);
  T eps_ = T(1e-5);
};

/// Convolution -> batch norm -> activation. With kRelu this is the CBR block.
template <typename T>
class ConvBnAct {
 public:
  ConvBnAct() = default;
  ConvBnAct(int64_t in, int64_t out, int64_t kernel, int64_t stride, Activation act, Rng& rng,
            double bn_momentum = 0.1, double bn_eps = 1e-5);

  Var<T> forward(const Var<T>& x, bool training);
  void state(const std::string& prefix, StateList<T>& out);

  Conv2d<T>& conv() { return conv_; }
  BatchNorm2d<T>& bn() { return bn_; }

 private:
  Conv2d<T> conv_;
  BatchNorm2d<T> bn_;
  Activation act_ = Activation::kRelu;
};

/// y = x W + b with W stored [in, out].
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(int64_t in, int64_t out, bool bias, Rng& rng);

  Var<T> forward(const Var<T>& x) const;
  void state(const std::string& prefix, StateList<T>& out);

  Var<T>& weight() { return weight_; }
  Var<T>& bias() { return bias_; }

 private:
  Var<T> weight_;
  Var<T> bias_;
  bool has_bias_ = false;
};

}  // namespace ocg::nn

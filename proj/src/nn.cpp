// SPDX-License-Identifier: Apache-2.0
#include "ocg/nn.hpp"

#include <cmath>

namespace ocg::nn {

template <typename T>
Conv2d<T>::Conv2d(int64_t in, int64_t out, int64_t kernel, int64_t stride, int64_t pad,
                  bool bias, Rng& rng)
    : has_bias_(bias), stride_(stride), pad_(pad) {
  const double fan_in = static_cast<double>(in * kernel * kernel);
  // Kaiming-uniform for ReLU-family activations.
  weight_ = uniform_param<T>({out, in, kernel, kernel}, std::sqrt(6.0 / fan_in), rng);
  if (bias) bias_ = uniform_param<T>({out}, 1.0 / std::sqrt(fan_in), rng);
}

template <typename T>
Var<T> Conv2d<T>::forward(const Var<T>& x) const {
  return ops::conv2d(x, weight_, has_bias_ ? &bias_ : nullptr, stride_, pad_);
}

template <typename T>
void Conv2d<T>::state(const std::string& prefix, StateList<T>& out) {
  out.push_back({join(prefix, "weight"), &weight_, nullptr});
  if (has_bias_) out.push_back({join(prefix, "bias"), &bias_, nullptr});
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(int64_t channels, double momentum, double eps)
    : gamma_(constant_param<T>({channels}, T(1))),
      beta_(constant_param<T>({channels}, T(0))),
      running_mean_(Tensor<T>::zeros({channels})),
      running_var_(Tensor<T>::ones({channels})),
      momentum_(static_cast<T>(momentum)),
      eps_(static_cast<T>(eps)) {}

template <typename T>
Var<T> BatchNorm2d<T>::forward(const Var<T>& x, bool training) {
  return ops::batch_norm(x, gamma_, beta_, running_mean_, running_var_, training, momentum_,
                         eps_);
}

template <typename T>
void BatchNorm2d<T>::state(const std::string& prefix, StateList<T>& out) {
  out.push_back({join(prefix, "gamma"), &gamma_, nullptr});
  out.push_back({join(prefix, "beta"), &beta_, nullptr});
  out.push_back({join(prefix, "running_mean"), nullptr, &running_mean_});
  out.push_back({join(prefix, "running_var"), nullptr, &running_var_});
}

template <typename T>
ConvBnAct<T>::ConvBnAct(int64_t in, int64_t out, int64_t kernel, int64_t stride, Activation act,
                        Rng& rng, double bn_momentum, double bn_eps)
    : conv_(in, out, kernel, stride, kernel / 2, false, rng),
      bn_(out, bn_momentum, bn_eps),
      act_(act) {}

template <typename T>
Var<T> ConvBnAct<T>::forward(const Var<T>& x, bool training) {
  Var<T> y = bn_.forward(conv_.forward(x), training);
  switch (act_) {
    case Activation::kRelu:
      return ops::relu(y);
    case Activation::kLeaky:
      return ops::leaky_relu(y, T(0.1));
    case Activation::kNone:
      break;
  }
  return y;
}

template <typename T>
void ConvBnAct<T>::state(const std::string& prefix, StateList<T>& out) {
  conv_.state(join(prefix, "conv"), out);
  bn_.state(join(prefix, "bn"), out);
}

template <typename T>
Linear<T>::Linear(int64_t in, int64_t out, bool bias, Rng& rng) : has_bias_(bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight_ = uniform_param<T>({in, out}, bound, rng);
  if (bias) bias_ = uniform_param<T>({out}, bound, rng);
}

template <typename T>
Var<T> Linear<T>::forward(const Var<T>& x) const {
  return ops::linear(x, weight_, has_bias_ ? &bias_ : nullptr);
}

template <typename T>
void Linear<T>::state(const std::string& prefix, StateList<T>& out) {
  out.push_back({join(prefix, "weight"), &weight_, nullptr});
  if (has_bias_) out.push_back({join(prefix, "bias"), &bias_, nullptr});
}

template class Conv2d<float>;
template class Conv2d<double>;
template class BatchNorm2d<float>;
template class BatchNorm2d<double>;
template class ConvBnAct<float>;
template class ConvBnAct<double>;
template class Linear<float>;
template class Linear<double>;

}  // namespace ocg::nn

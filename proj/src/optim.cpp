// SPDX-License-Identifier: Apache-2.0
#include "ocg/optim.hpp"

#include <cmath>

namespace ocg::optim {

void to_json(nlohmann::json& j, const AdamConfig& c) {
  j = {{"name", "adam"},
       {"learning_rate", c.learning_rate},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"eps", c.eps},
       {"weight_decay", c.weight_decay}};
}

template <typename T>
Adam<T>::Adam(nn::StateList<T> params, AdamConfig cfg) : cfg_(cfg) {
  if (!(cfg_.learning_rate >= 0.0)) throw InvalidConfig("learning rate must be >= 0");
  for (auto& p : params) {
    if (p.param == nullptr) continue;
    params_.push_back(p);
    m_.emplace_back(static_cast<size_t>(p.param->numel()), 0.0);
    v_.emplace_back(static_cast<size_t>(p.param->numel()), 0.0);
  }
}

template <typename T>
void Adam<T>::step() {
  ++t_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double lr = cfg_.learning_rate;
  for (size_t i = 0; i < params_.size(); ++i) {
    ad::Var<T>& p = *params_[i].param;
    const Tensor<T>& g = p.grad();
    Tensor<T>& w = p.mutable_value();
    auto& m = m_[i];
    auto& v = v_[i];
    for (int64_t k = 0; k < w.numel(); ++k) {
      const size_t s = static_cast<size_t>(k);
      const double gk = static_cast<double>(g[k]) + cfg_.weight_decay * static_cast<double>(w[k]);
      m[s] = b1 * m[s] + (1.0 - b1) * gk;
      v[s] = b2 * v[s] + (1.0 - b2) * gk * gk;
      if (lr == 0.0) continue;
      w[k] = static_cast<T>(static_cast<double>(w[k]) -
                            lr * (m[s] / c1) / (std::sqrt(v[s] / c2) + cfg_.eps));
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.param->zero_grad();
}

template class Adam<float>;
template class Adam<double>;

}  // namespace ocg::optim

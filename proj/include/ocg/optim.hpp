// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <nlohmann/json.hpp>

#include "ocg/nn.hpp"

namespace ocg::optim {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

void to_json(nlohmann::json& j, const AdamConfig& c);

/// Adam with bias correction. Moments are kept in double.
template <typename T>
class Adam {
 public:
  Adam(nn::StateList<T> params, AdamConfig cfg);

  void step();
  void zero_grad();
  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }
  int64_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  nn::StateList<T> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  int64_t t_ = 0;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace ocg::optim

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>

#include "ocg/detection.hpp"
#include "ocg/encoders.hpp"
#include "ocg/matching.hpp"

namespace ocg {

template <typename T>
struct ModelOutput {
  ad::Var<T> raw;  // [N, 45, Hs/32, Ws/32]
  matching::MatchArtifacts<T> match;
};

/// Query encoder, reference encoder, matching block and detection head.
template <typename T>
class OcgNet {
 public:
  explicit OcgNet(const ModelConfig& cfg, uint64_t seed = 0);

  /// query: [N, 3, Hq, Wq], heatmap: [N, 1, Hq, Wq], satellite: [N, 3, Hs, Ws].
  ModelOutput<T> forward(const ad::Var<T>& query, const ad::Var<T>& heatmap,
                         const ad::Var<T>& satellite, bool training);

  /// Every parameter and buffer, keyed by module path. Order is stable.
  nn::StateList<T> state();
  nn::StateList<T> parameters();
  int64_t parameter_count();
  /// Learnable scalars per top-level module.
  std::map<std::string, int64_t> parameter_breakdown();

  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  nn::Rng rng_;
  encoders::QueryEncoder<T> query_;
  encoders::ReferenceEncoder<T> reference_;
  matching::MatchingBlock<T> matching_;
  detection::DetectionHead<T> head_;
};

extern template class OcgNet<float>;
extern template class OcgNet<double>;

}  // namespace ocg

// SPDX-License-Identifier: Apache-2.0
//
// Feature encoders for the two views.
//
// Query: the RGB image and the click heatmap are stacked into four channels,
// squeezed back to three by a CBR block, and fed to a ResNet-18 style
// backbone with the pooling/classifier removed. The stride-16 stage output
// (C2) and the stride-32 output aligned to Nc channels (C3) are returned.
//
// Reference: a DarkNet-53 style backbone, optionally followed by the
// stride-32 convolution set of the YOLOv3 head, then a CBR aligning the
// result to Nc channels.
#pragma once

#include <vector>

#include "ocg/config.hpp"
#include "ocg/nn.hpp"

namespace ocg::encoders {

template <typename T>
using Var = ad::Var<T>;

/// ReLU(BatchNorm(Conv(x))).
template <typename T>
Var<T> cbr(const Var<T>& x, nn::ConvBnAct<T>& block, bool training) {
  return block.forward(x, training);
}

template <typename T>
class BasicBlock {
 public:
  BasicBlock(int64_t in, int64_t out, int64_t stride, const ModelConfig& cfg, nn::Rng& rng);
  Var<T> forward(const Var<T>& x, bool training);
  void state(const std::string& prefix, nn::StateList<T>& out);

 private:
  nn::ConvBnAct<T> conv1_;
  nn::ConvBnAct<T> conv2_;
  bool has_down_ = false;
  nn::ConvBnAct<T> down_;
};

template <typename T>
class ResNetBackbone {
 public:
  struct Output {
    Var<T> c2;
    Var<T> c3;
  };

  ResNetBackbone(int64_t in_channels, const ModelConfig& cfg, nn::Rng& rng);
  Output forward(const Var<T>& x, bool training);
  void state(const std::string& prefix, nn::StateList<T>& out);

  int64_t c2_channels() const { return width_ * 4; }
  int64_t c3_channels() const { return width_ * 8; }

 private:
  int64_t width_;
  nn::ConvBnAct<T> stem_;
  std::vector<std::vector<BasicBlock<T>>> stages_;
};

template <typename T>
class DarkResidual {
 public:
  DarkResidual(int64_t channels, const ModelConfig& cfg, nn::Rng& rng);
  Var<T> forward(const Var<T>& x, bool training);
  void state(const std::string& prefix, nn::StateList<T>& out);

 private:
  nn::ConvBnAct<T> reduce_;
  nn::ConvBnAct<T> expand_;
};

template <typename T>
class DarkNetBackbone {
 public:
  DarkNetBackbone(const ModelConfig& cfg, nn::Rng& rng);
  Var<T> forward(const Var<T>& x, bool training);
  void state(const std::string& prefix, nn::StateList<T>& out);
  int64_t out_channels() const { return width_ * 32; }

 private:
  int64_t width_;
  nn::ConvBnAct<T> stem_;
  std::vector<nn::ConvBnAct<T>> downs_;
  std::vector<std::vector<DarkResidual<T>>> stages_;
  std::vector<nn::ConvBnAct<T>> neck_;
};

template <typename T>
class QueryEncoder {
 public:
  struct Output {
    Var<T> f_u_c2;
    Var<T> f_u_c3;
  };

  QueryEncoder(const ModelConfig& cfg, nn::Rng& rng);
  /// u: [N, 3, H, W], heatmap: [N, 1, H, W].
  Output forward(const Var<T>& u, const Var<T>& heatmap, bool training);
  void state(const std::string& prefix, nn::StateList<T>& out);

 private:
  nn::ConvBnAct<T> stem_;
  ResNetBackbone<T> backbone_;
  nn::ConvBnAct<T> align_;
};

template <typename T>
class ReferenceEncoder {
 public:
  ReferenceEncoder(const ModelConfig& cfg, nn::Rng& rng);
  /// s: [N, 3, H, W] -> [N, Nc, H/32, W/32].
  Var<T> forward(const Var<T>& s, bool training);
  void state(const std::string& prefix, nn::StateList<T>& out);

 private:
  DarkNetBackbone<T> backbone_;
  nn::ConvBnAct<T> align_;
};

}  // namespace ocg::encoders

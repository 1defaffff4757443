// SPDX-License-Identifier: Apache-2.0
#include "ocg/encoders.hpp"

namespace ocg::encoders {

using nn::Activation;

namespace {

template <typename T>
nn::ConvBnAct<T> make_cba(int64_t in, int64_t out, int64_t k, int64_t s, Activation act,
                          const ModelConfig& cfg, nn::Rng& rng) {
  return nn::ConvBnAct<T>(in, out, k, s, act, rng, cfg.bn_momentum, cfg.bn_eps);
}

}  // namespace

template <typename T>
BasicBlock<T>::BasicBlock(int64_t in, int64_t out, int64_t stride, const ModelConfig& cfg,
                          nn::Rng& rng)
    : conv1_(make_cba<T>(in, out, 3, stride, Activation::kRelu, cfg, rng)),
      conv2_(make_cba<T>(out, out, 3, 1, Activation::kNone, cfg, rng)),
      has_down_(stride != 1 || in != out) {
  if (has_down_) down_ = make_cba<T>(in, out, 1, stride, Activation::kNone, cfg, rng);
}

template <typename T>
Var<T> BasicBlock<T>::forward(const Var<T>& x, bool training) {
  Var<T> y = conv2_.forward(conv1_.forward(x, training), training);
  Var<T> skip = has_down_ ? down_.forward(x, training) : x;
  return ops::relu(ops::add(y, skip));
}

template <typename T>
void BasicBlock<T>::state(const std::string& prefix, nn::StateList<T>& out) {
  conv1_.state(nn::join(prefix, "conv1"), out);
  conv2_.state(nn::join(prefix, "conv2"), out);
  if (has_down_) down_.state(nn::join(prefix, "downsample"), out);
}

template <typename T>
ResNetBackbone<T>::ResNetBackbone(int64_t in_channels, const ModelConfig& cfg, nn::Rng& rng)
    : width_(cfg.resnet_width),
      stem_(make_cba<T>(in_channels, cfg.resnet_width, 7, 2, Activation::kRelu, cfg, rng)) {
  int64_t ch = width_;
  for (size_t s = 0; s < cfg.resnet_blocks.size(); ++s) {
    const int64_t out = width_ << s;
    std::vector<BasicBlock<T>> blocks;
    for (int64_t b = 0; b < cfg.resnet_blocks[s]; ++b) {
      const int64_t stride = (b == 0 && s > 0) ? 2 : 1;
      blocks.emplace_back(ch, out, stride, cfg, rng);
      ch = out;
    }
    stages_.push_back(std::move(blocks));
  }
}

template <typename T>
typename ResNetBackbone<T>::Output ResNetBackbone<T>::forward(const Var<T>& x, bool training) {
  Var<T> y = ops::max_pool2d(stem_.forward(x, training), 3, 2, 1);
  Output out;
  for (size_t s = 0; s < stages_.size(); ++s) {
    for (auto& b : stages_[s]) y = b.forward(y, training);
    if (s == 2) out.c2 = y;
  }
  out.c3 = y;
  return out;
}

template <typename T>
void ResNetBackbone<T>::state(const std::string& prefix, nn::StateList<T>& out) {
  stem_.state(nn::join(prefix, "stem"), out);
  for (size_t s = 0; s < stages_.size(); ++s)
    for (size_t b = 0; b < stages_[s].size(); ++b)
      stages_[s][b].state(nn::join(prefix, "layer" + std::to_string(s + 1) + "." + std::to_string(b)),
                          out);
}

template <typename T>
DarkResidual<T>::DarkResidual(int64_t channels, const ModelConfig& cfg, nn::Rng& rng)
    : reduce_(make_cba<T>(channels, channels / 2, 1, 1, Activation::kLeaky, cfg, rng)),
      expand_(make_cba<T>(channels / 2, channels, 3, 1, Activation::kLeaky, cfg, rng)) {}

template <typename T>
Var<T> DarkResidual<T>::forward(const Var<T>& x, bool training) {
  return ops::add(x, expand_.forward(reduce_.forward(x, training), training));
}

template <typename T>
void DarkResidual<T>::state(const std::string& prefix, nn::StateList<T>& out) {
  reduce_.state(nn::join(prefix, "reduce"), out);
  expand_.state(nn::join(prefix, "expand"), out);
}

template <typename T>
DarkNetBackbone<T>::DarkNetBackbone(const ModelConfig& cfg, nn::Rng& rng)
    : width_(cfg.darknet_width),
      stem_(make_cba<T>(3, cfg.darknet_width, 3, 1, Activation::kLeaky, cfg, rng)) {
  int64_t ch = width_;
  for (size_t s = 0; s < cfg.darknet_blocks.size(); ++s) {
    const int64_t out = ch * 2;
    downs_.push_back(make_cba<T>(ch, out, 3, 2, Activation::kLeaky, cfg, rng));
    std::vector<DarkResidual<T>> blocks;
    for (int64_t b = 0; b < cfg.darknet_blocks[s]; ++b) blocks.emplace_back(out, cfg, rng);
    stages_.push_back(std::move(blocks));
    ch = out;
  }
  if (cfg.darknet_neck) {
    const int64_t half = ch / 2;
    for (int i = 0; i < 3; ++i) {
      neck_.push_back(make_cba<T>(ch, half, 1, 1, Activation::kLeaky, cfg, rng));
      neck_.push_back(make_cba<T>(half, ch, 3, 1, Activation::kLeaky, cfg, rng));
    }
  }
}

template <typename T>
Var<T> DarkNetBackbone<T>::forward(const Var<T>& x, bool training) {
  Var<T> y = stem_.forward(x, training);
  for (size_t s = 0; s < stages_.size(); ++s) {
    y = downs_[s].forward(y, training);
    for (auto& b : stages_[s]) y = b.forward(y, training);
  }
  for (auto& n : neck_) y = n.forward(y, training);
  return y;
}

template <typename T>
void DarkNetBackbone<T>::state(const std::string& prefix, nn::StateList<T>& out) {
  stem_.state(nn::join(prefix, "stem"), out);
  for (size_t s = 0; s < stages_.size(); ++s) {
    const std::string stage = nn::join(prefix, "stage" + std::to_string(s + 1));
    downs_[s].state(nn::join(stage, "down"), out);
    for (size_t b = 0; b < stages_[s].size(); ++b)
      stages_[s][b].state(nn::join(stage, "res" + std::to_string(b)), out);
  }
  for (size_t i = 0; i < neck_.size(); ++i)
    neck_[i].state(nn::join(prefix, "neck" + std::to_string(i)), out);
}

template <typename T>
QueryEncoder<T>::QueryEncoder(const ModelConfig& cfg, nn::Rng& rng)
    : stem_(make_cba<T>(4, 3, 3, 1, Activation::kRelu, cfg, rng)),
      backbone_(3, cfg, rng),
      align_(make_cba<T>(cfg.resnet_width * 8, cfg.nc, 1, 1, Activation::kRelu, cfg, rng)) {}

template <typename T>
typename QueryEncoder<T>::Output QueryEncoder<T>::forward(const Var<T>& u, const Var<T>& heatmap,
                                                         bool training) {
  const Shape& us = u.shape();
  const Shape& ms = heatmap.shape();
  if (us.size() != 4 || us[1] != 3) {
    throw ShapeError("encode_query: query image must be [N,3,H,W], got " + shape_str(us));
  }
  if (ms.size() != 4 || ms[0] != us[0] || ms[1] != 1 || ms[2] != us[2] || ms[3] != us[3]) {
    throw ShapeError("encode_query: heatmap " + shape_str(ms) + " does not match query " +
                     shape_str(us));
  }
  Var<T> x = cbr(ops::concat_channels<T>({u, heatmap}), stem_, training);
  auto feats = backbone_.forward(x, training);
  return {feats.c2, cbr(feats.c3, align_, training)};
}

template <typename T>
void QueryEncoder<T>::state(const std::string& prefix, nn::StateList<T>& out) {
  stem_.state(nn::join(prefix, "stem"), out);
  backbone_.state(nn::join(prefix, "resnet"), out);
  align_.state(nn::join(prefix, "align"), out);
}

template <typename T>
ReferenceEncoder<T>::ReferenceEncoder(const ModelConfig& cfg, nn::Rng& rng)
    : backbone_(cfg, rng),
      align_(make_cba<T>(cfg.darknet_width * 32, cfg.nc, 1, 1, Activation::kRelu, cfg, rng)) {}

template <typename T>
Var<T> ReferenceEncoder<T>::forward(const Var<T>& s, bool training) {
  const Shape& ss = s.shape();
  if (ss.size() != 4 || ss[1] != 3) {
    throw ShapeError("encode_reference: satellite image must be [N,3,H,W], got " +
                     shape_str(ss));
  }
  return cbr(backbone_.forward(s, training), align_, training);
}

template <typename T>
void ReferenceEncoder<T>::state(const std::string& prefix, nn::StateList<T>& out) {
  backbone_.state(nn::join(prefix, "darknet"), out);
  align_.state(nn::join(prefix, "align"), out);
}

template class BasicBlock<float>;
template class BasicBlock<double>;
template class ResNetBackbone<float>;
template class ResNetBackbone<double>;
template class DarkResidual<float>;
template class DarkResidual<double>;
template class DarkNetBackbone<float>;
template class DarkNetBackbone<double>;
template class QueryEncoder<float>;
template class QueryEncoder<double>;
template class ReferenceEncoder<float>;
template class ReferenceEncoder<double>;

}  // namespace ocg::encoders

// SPDX-License-Identifier: Apache-2.0
#include "ocg/model.hpp"

namespace ocg {

template <typename T>
OcgNet<T>::OcgNet(const ModelConfig& cfg, uint64_t seed)
    : cfg_((cfg.validate(), cfg)),
      rng_(seed),
      query_(cfg_, rng_),
      reference_(cfg_, rng_),
      matching_(cfg_, rng_),
      head_(cfg_, rng_) {}

template <typename T>
ModelOutput<T> OcgNet<T>::forward(const ad::Var<T>& query, const ad::Var<T>& heatmap,
                                  const ad::Var<T>& satellite, bool training) {
  if (query.shape().size() != 4 || satellite.shape().size() != 4 ||
      query.size(0) != satellite.size(0)) {
    throw ShapeError("forward: query " + shape_str(query.shape()) + " and satellite " +
                     shape_str(satellite.shape()) + " must be batched NCHW of equal batch size");
  }
  auto q = query_.forward(query, heatmap, training);
  ad::Var<T> s = reference_.forward(satellite, training);
  ModelOutput<T> out;
  out.match = matching_.forward(heatmap, q.f_u_c2, q.f_u_c3, s, training);
  out.raw = head_.forward(out.match.f_s_hat, out.match.a_s, training);
  return out;
}

template <typename T>
nn::StateList<T> OcgNet<T>::state() {
  nn::StateList<T> out;
  query_.state("query_encoder", out);
  reference_.state("reference_encoder", out);
  matching_.state("matching", out);
  head_.state("detection", out);
  return out;
}

template <typename T>
nn::StateList<T> OcgNet<T>::parameters() {
  nn::StateList<T> out;
  for (auto& s : state())
    if (s.param != nullptr) out.push_back(s);
  return out;
}

template <typename T>
int64_t OcgNet<T>::parameter_count() {
  return nn::count_parameters(state());
}

template <typename T>
std::map<std::string, int64_t> OcgNet<T>::parameter_breakdown() {
  std::map<std::string, int64_t> out;
  for (const auto& s : state()) {
    if (s.param == nullptr) continue;
    out[s.name.substr(0, s.name.find('.'))] += s.param->numel();
  }
  return out;
}

template class OcgNet<float>;
template class OcgNet<double>;

}  // namespace ocg

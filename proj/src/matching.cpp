// SPDX-License-Identifier: Apache-2.0
#include "ocg/matching.hpp"

#include <cmath>

namespace ocg::matching {

void MhcaConfig::validate() const {
  if (nc < 1 || heads < 1 || d_k < 1 || d_v < 1 || pooled_h < 1 || pooled_w < 1) {
    throw InvalidConfig("mhca: nc, heads, d_k, d_v and pooled grid must all be >= 1");
  }
}

template <typename T>
QkvProjection<T>::QkvProjection(int64_t nc, nn::Rng& rng)
    : q(nc, nc, true, rng), k(nc, nc, true, rng), v(nc, nc, true, rng) {}

template <typename T>
void QkvProjection<T>::state(const std::string& prefix, nn::StateList<T>& out) {
  q.state(nn::join(prefix, "q"), out);
  k.state(nn::join(prefix, "k"), out);
  v.state(nn::join(prefix, "v"), out);
}

template <typename T>
MhcaWeights<T>::MhcaWeights(const MhcaConfig& cfg, nn::Rng& rng) {
  cfg.validate();
  const double b_in = 1.0 / std::sqrt(static_cast<double>(cfg.nc));
  const double b_out = 1.0 / std::sqrt(static_cast<double>(cfg.heads * cfg.d_v));
  w_q = nn::uniform_param<T>({cfg.nc, cfg.heads * cfg.d_k}, b_in, rng);
  w_k = nn::uniform_param<T>({cfg.nc, cfg.heads * cfg.d_k}, b_in, rng);
  w_v = nn::uniform_param<T>({cfg.nc, cfg.heads * cfg.d_v}, b_in, rng);
  w_o = nn::uniform_param<T>({cfg.heads * cfg.d_v, cfg.nc}, b_out, rng);
}

template <typename T>
void MhcaWeights<T>::state(const std::string& prefix, nn::StateList<T>& out) {
  out.push_back({nn::join(prefix, "w_q"), &w_q, nullptr});
  out.push_back({nn::join(prefix, "w_k"), &w_k, nullptr});
  out.push_back({nn::join(prefix, "w_v"), &w_v, nullptr});
  out.push_back({nn::join(prefix, "w_o"), &w_o, nullptr});
}

template <typename T>
Var<T> to_tokens(const Var<T>& map) {
  const Shape& s = map.shape();
  if (s.size() != 4) throw ShapeError("to_tokens: expected NCHW, got " + shape_str(s));
  return ops::permute(ops::reshape(map, {s[0], s[1], s[2] * s[3]}), {0, 2, 1});
}

template <typename T>
Var<T> from_tokens(const Var<T>& tokens, int64_t h, int64_t w) {
  const Shape& s = tokens.shape();
  if (s.size() != 3 || s[1] != h * w) {
    throw ShapeError("from_tokens: " + shape_str(s) + " is not " + std::to_string(h * w) +
                     " tokens");
  }
  return ops::reshape(ops::permute(tokens, {0, 2, 1}), {s[0], s[2], h, w});
}

template <typename T>
QkvTokens<T> project_qkv(const Var<T>& f_u_c3, const Var<T>& f_s_c3, QkvProjection<T>& proj,
                         int64_t pooled_h, int64_t pooled_w) {
  const Shape& us = f_u_c3.shape();
  const Shape& ss = f_s_c3.shape();
  if (us.size() != 4 || ss.size() != 4 || us[0] != ss[0]) {
    throw ShapeError("project_qkv: expected matching NCHW batches, got " + shape_str(us) +
                     " and " + shape_str(ss));
  }
  const int64_t nc = proj.q.weight().size(0);
  if (us[1] != nc || ss[1] != nc) {
    throw ShapeError("project_qkv: feature channels " + std::to_string(us[1]) + "/" +
                     std::to_string(ss[1]) + " differ from Nc=" + std::to_string(nc));
  }
  Var<T> pooled = ops::adaptive_avg_pool2d(f_s_c3, pooled_h, pooled_w);
  Var<T> ref_tokens = to_tokens(pooled);
  return {proj.q.forward(to_tokens(f_u_c3)), proj.k.forward(ref_tokens),
          proj.v.forward(ref_tokens)};
}

template <typename T>
Attention<T> scaled_dot_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                                  int64_t d_k) {
  const Shape& qs = q.shape();
  const Shape& ks = k.shape();
  const Shape& vs = v.shape();
  if (qs.size() != 3 || ks.size() != 3 || vs.size() != 3) {
    throw ShapeError("attention: Q, K, V must be rank 3");
  }
  if (qs[2] != ks[2] || qs[2] != d_k) {
    throw ShapeError("attention: inner dimension mismatch, Q " + shape_str(qs) + ", K " +
                     shape_str(ks) + ", d_k=" + std::to_string(d_k));
  }
  if (ks[1] != vs[1] || qs[0] != ks[0] || ks[0] != vs[0]) {
    throw ShapeError("attention: K " + shape_str(ks) + " and V " + shape_str(vs) +
                     " disagree on tokens");
  }
  Var<T> logits = ops::scale(ops::matmul(q, k, false, true), T(1) / std::sqrt(T(d_k)));
  Var<T> weights = ops::softmax_lastdim(logits);
  return {ops::attend(weights, v), weights};
}

namespace {

// [N, T, heads * d] -> [N * heads, T, d]
template <typename T>
Var<T> split_heads(const Var<T>& x, int64_t heads) {
  const Shape& s = x.shape();
  const int64_t d = s[2] / heads;
  return ops::reshape(ops::permute(ops::reshape(x, {s[0], s[1], heads, d}), {0, 2, 1, 3}),
                      {s[0] * heads, s[1], d});
}

// [N * heads, T, d] -> [N, T, heads * d]
template <typename T>
Var<T> merge_heads(const Var<T>& x, int64_t heads) {
  const Shape& s = x.shape();
  const int64_t n = s[0] / heads;
  return ops::reshape(ops::permute(ops::reshape(x, {n, heads, s[1], s[2]}), {0, 2, 1, 3}),
                      {n, s[1], heads * s[2]});
}

}  // namespace

template <typename T>
Attention<T> mhca_tokens(const Var<T>& q_u, const Var<T>& k_s, const Var<T>& v_s,
                         const MhcaConfig& cfg, const MhcaWeights<T>& w) {
  cfg.validate();
  const Shape expect_qk{cfg.nc, cfg.heads * cfg.d_k};
  const Shape expect_v{cfg.nc, cfg.heads * cfg.d_v};
  const Shape expect_o{cfg.heads * cfg.d_v, cfg.nc};
  if (w.w_q.shape() != expect_qk || w.w_k.shape() != expect_qk || w.w_v.shape() != expect_v ||
      w.w_o.shape() != expect_o) {
    throw ShapeError("mhca: weights do not match config (heads=" + std::to_string(cfg.heads) +
                     ", d_k=" + std::to_string(cfg.d_k) + ", d_v=" + std::to_string(cfg.d_v) +
                     ", Nc=" + std::to_string(cfg.nc) + ")");
  }
  const Var<T>* no_bias = nullptr;
  Var<T> qh = split_heads(ops::linear(q_u, w.w_q, no_bias), cfg.heads);
  Var<T> kh = split_heads(ops::linear(k_s, w.w_k, no_bias), cfg.heads);
  Var<T> vh = split_heads(ops::linear(v_s, w.w_v, no_bias), cfg.heads);
  Attention<T> att = scaled_dot_attention(qh, kh, vh, cfg.d_k);
  Var<T> concat = merge_heads(att.out, cfg.heads);
  return {ops::linear(concat, w.w_o, no_bias), att.weights};
}

template <typename T>
Attention<T> mhca(const Var<T>& f_u_c3, const Var<T>& f_s_c3, const MhcaConfig& cfg,
                  QkvProjection<T>& proj, const MhcaWeights<T>& w) {
  QkvTokens<T> t = project_qkv(f_u_c3, f_s_c3, proj, cfg.pooled_h, cfg.pooled_w);
  Attention<T> att = mhca_tokens(t.q, t.k, t.v, cfg, w);
  return {from_tokens(att.out, f_u_c3.size(2), f_u_c3.size(3)), att.weights};
}

template <typename T>
Var<T> enhance_query(const Var<T>& f_mhca, const Var<T>& f_u_c3) {
  if (f_mhca.shape() != f_u_c3.shape()) {
    throw ShapeError("enhance_query: " + shape_str(f_mhca.shape()) + " vs " +
                     shape_str(f_u_c3.shape()));
  }
  return ops::mul(f_mhca, f_u_c3);
}

template <typename T>
Var<T> location_enhance(const Var<T>& heatmap, const Var<T>& f_u_c2, nn::ConvBnAct<T>& le_cbr,
                        bool training) {
  const Shape& ms = heatmap.shape();
  const Shape& cs = f_u_c2.shape();
  if (ms.size() != 4 || cs.size() != 4 || ms[1] != 1 || ms[0] != cs[0] ||
      ms[2] != cs[2] * ModelConfig::kStrideC2 || ms[3] != cs[3] * ModelConfig::kStrideC2) {
    throw ShapeError("location_enhance: heatmap " + shape_str(ms) +
                     " is not 16x the C2 grid of " + shape_str(cs));
  }
  if (cs[2] % 2 != 0 || cs[3] % 2 != 0) {
    throw ShapeError("location_enhance: C2 grid must be even, got " + shape_str(cs));
  }
  Var<T> pooled = ops::adaptive_avg_pool2d(heatmap, cs[2], cs[3]);
  Var<T> collapsed = ops::channel_mean(f_u_c2);
  return le_cbr.forward(ops::concat_channels<T>({pooled, collapsed}), training);
}

template <typename T>
Var<T> fuse_le(const Var<T>& f_u_l, const Var<T>& f_u_e) {
  const Shape& ls = f_u_l.shape();
  const Shape& es = f_u_e.shape();
  if (ls.size() != 4 || es.size() != 4 || ls[0] != es[0] || ls[1] != 1 || ls[2] != es[2] ||
      ls[3] != es[3]) {
    throw ShapeError("fuse_le: gate " + shape_str(ls) + " does not match features " +
                     shape_str(es));
  }
  return ops::mul(f_u_l, f_u_e);
}

template <typename T>
Var<T> normalize_reference(const Var<T>& f_s_c3) {
  if (f_s_c3.shape().size() != 4) throw ShapeError("normalize_reference: expected NCHW");
  return ops::l2_normalize(f_s_c3, 1);
}

template <typename T>
Var<T> spatial_attention(const Var<T>& f_u_le, const Var<T>& f_s_hat, const Var<T>& scale) {
  const Shape& qs = f_u_le.shape();
  const Shape& rs = f_s_hat.shape();
  if (qs.size() != 4 || rs.size() != 4 || qs[0] != rs[0] || qs[1] != rs[1]) {
    throw ShapeError("spatial_attention: query " + shape_str(qs) + " and reference " +
                     shape_str(rs) + " disagree on batch or channels");
  }
  if (scale.numel() != 1) throw ShapeError("spatial_attention: scale must be a scalar");
  const int64_t n = rs[0], c = rs[1], hs = rs[2], ws = rs[3];
  Var<T> desc = ops::l2_normalize(ops::spatial_mean(f_u_le), 1);
  Var<T> cos = ops::matmul(ops::reshape(desc, {n, 1, c}), ops::reshape(f_s_hat, {n, c, hs * ws}));
  Var<T> logits = ops::mul(cos, scale);
  return ops::reshape(ops::sigmoid(logits), {n, 1, hs, ws});
}

template <typename T>
MatchingBlock<T>::MatchingBlock(const ModelConfig& cfg, nn::Rng& rng)
    : nc_(cfg.nc),
      heads_(cfg.heads),
      d_k_(cfg.d_k),
      d_v_(cfg.d_v),
      proj_(cfg.nc, rng),
      weights_(mhca_config(1, 1), rng),
      le_cbr_(2, 1, 3, 2, nn::Activation::kRelu, rng, cfg.bn_momentum, cfg.bn_eps),
      sa_scale_(nn::constant_param<T>({1}, static_cast<T>(cfg.sa_init_scale))) {}

template <typename T>
MhcaConfig MatchingBlock<T>::mhca_config(int64_t pooled_h, int64_t pooled_w) const {
  return MhcaConfig{nc_, heads_, d_k_, d_v_, pooled_h, pooled_w};
}

template <typename T>
MatchArtifacts<T> MatchingBlock<T>::forward(const Var<T>& heatmap, const Var<T>& f_u_c2,
                                            const Var<T>& f_u_c3, const Var<T>& f_s_c3,
                                            bool training) {
  MatchArtifacts<T> a;
  const MhcaConfig cfg = mhca_config(f_u_c3.size(2), f_u_c3.size(3));
  Attention<T> att = mhca(f_u_c3, f_s_c3, cfg, proj_, weights_);
  a.f_mhca = att.out;
  a.attention = att.weights;
  a.f_u_e = enhance_query(a.f_mhca, f_u_c3);
  a.f_u_l = location_enhance(heatmap, f_u_c2, le_cbr_, training);
  a.f_u_le = fuse_le(a.f_u_l, a.f_u_e);
  a.f_s_hat = normalize_reference(f_s_c3);
  a.a_s = spatial_attention(a.f_u_le, a.f_s_hat, sa_scale_);
  return a;
}

template <typename T>
void MatchingBlock<T>::state(const std::string& prefix, nn::StateList<T>& out) {
  proj_.state(nn::join(prefix, "proj"), out);
  weights_.state(nn::join(prefix, "mhca"), out);
  le_cbr_.state(nn::join(prefix, "le"), out);
  out.push_back({nn::join(prefix, "sa_scale"), &sa_scale_, nullptr});
}

#define OCG_INSTANTIATE_MATCHING(T)                                                           \
  template struct QkvProjection<T>;                                                           \
  template struct MhcaWeights<T>;                                                             \
  template class MatchingBlock<T>;                                                            \
  template Var<T> to_tokens(const Var<T>&);                                                   \
  template Var<T> from_tokens(const Var<T>&, int64_t, int64_t);                               \
  template QkvTokens<T> project_qkv(const Var<T>&, const Var<T>&, QkvProjection<T>&, int64_t, \
                                    int64_t);                                                 \
  template Attention<T> scaled_dot_attention(const Var<T>&, const Var<T>&, const Var<T>&,     \
                                             int64_t);                                        \
  template Attention<T> mhca_tokens(const Var<T>&, const Var<T>&, const Var<T>&,              \
                                    const MhcaConfig&, const MhcaWeights<T>&);                \
  template Attention<T> mhca(const Var<T>&, const Var<T>&, const MhcaConfig&,                 \
                             QkvProjection<T>&, const MhcaWeights<T>&);                       \
  template Var<T> enhance_query(const Var<T>&, const Var<T>&);                                \
  template Var<T> location_enhance(const Var<T>&, const Var<T>&, nn::ConvBnAct<T>&, bool);    \
  template Var<T> fuse_le(const Var<T>&, const Var<T>&);                                      \
  template Var<T> normalize_reference(const Var<T>&);                                         \
  template Var<T> spatial_attention(const Var<T>&, const Var<T>&, const Var<T>&);

OCG_INSTANTIATE_MATCHING(float)
OCG_INSTANTIATE_MATCHING(double)

}  // namespace ocg::matching

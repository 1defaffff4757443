// SPDX-License-Identifier: Apache-2.0
//
// Cross-view matching: multi-head cross attention from query tokens onto
// pooled reference tokens, a late re-injection of the click heatmap
// (location enhancement), and a similarity map over the reference grid.
//
// Token convention: spatial positions are tokens, channels are features, so
// a [N, Nc, H, W] map becomes [N, H*W, Nc] in row-major cell order.
#pragma once

#include "ocg/config.hpp"
#include "ocg/nn.hpp"

namespace ocg::matching {

template <typename T>
using Var = ad::Var<T>;

struct MhcaConfig {
  int64_t nc = 512;
  int64_t heads = 8;
  int64_t d_k = 64;
  int64_t d_v = 64;
  /// Reference grid after area pooling; equal to the query C3 grid.
  int64_t pooled_h = 8;
  int64_t pooled_w = 8;

  void validate() const;
};

/// Learnable token projectors applied before the per-head projections.
template <typename T>
struct QkvProjection {
  nn::Linear<T> q;
  nn::Linear<T> k;
  nn::Linear<T> v;

  QkvProjection() = default;
  QkvProjection(int64_t nc, nn::Rng& rng);
  void state(const std::string& prefix, nn::StateList<T>& out);
};

/// Per-head projections packed column-wise: column block i of w_q is W_i^Q
/// ([Nc, d_k]); w_o is [heads * d_v, Nc].
template <typename T>
struct MhcaWeights {
  Var<T> w_q;
  Var<T> w_k;
  Var<T> w_v;
  Var<T> w_o;

  MhcaWeights() = default;
  MhcaWeights(const MhcaConfig& cfg, nn::Rng& rng);
  void state(const std::string& prefix, nn::StateList<T>& out);
};

template <typename T>
struct QkvTokens {
  Var<T> q;  // [N, Hu*Wu, Nc]
  Var<T> k;  // [N, Hs'*Ws', Nc]
  Var<T> v;  // [N, Hs'*Ws', Nc]
};

template <typename T>
struct Attention {
  Var<T> out;      // [B, Tq, d_v]
  Var<T> weights;  // [B, Tq, Tk], rows sum to 1
};

/// [N, C, H, W] -> [N, H*W, C].
template <typename T>
Var<T> to_tokens(const Var<T>& map);

/// [N, H*W, C] -> [N, C, H, W].
template <typename T>
Var<T> from_tokens(const Var<T>& tokens, int64_t h, int64_t w);

/// Pools the reference map to (pooled_h, pooled_w), flattens both maps to
/// tokens and applies the learnable projectors.
template <typename T>
QkvTokens<T> project_qkv(const Var<T>& f_u_c3, const Var<T>& f_s_c3, QkvProjection<T>& proj,
                         int64_t pooled_h, int64_t pooled_w);

/// softmax(Q K^T / sqrt(d_k)) V over rank-3 [B, T, d] inputs.
template <typename T>
Attention<T> scaled_dot_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                                  int64_t d_k);

/// Concat(head_1..head_n) W^O on token inputs. Returns [N, Tq, Nc] and the
/// per-head attention weights as [N * heads, Tq, Tk].
template <typename T>
Attention<T> mhca_tokens(const Var<T>& q_u, const Var<T>& k_s, const Var<T>& v_s,
                         const MhcaConfig& cfg, const MhcaWeights<T>& w);

/// Full cross attention on feature maps; output reshaped to [N, Nc, Hu, Wu].
template <typename T>
Attention<T> mhca(const Var<T>& f_u_c3, const Var<T>& f_s_c3, const MhcaConfig& cfg,
                  QkvProjection<T>& proj, const MhcaWeights<T>& w);

/// F^MHCA (.) F_u^C3.
template <typename T>
Var<T> enhance_query(const Var<T>& f_mhca, const Var<T>& f_u_c3);

/// CBR(AvgPool(M) (+) ChannelMean(F_u^C2)) with a stride-2 CBR producing a
/// single-channel gate on the C3 grid. heatmap: [N, 1, Hq, Wq].
template <typename T>
Var<T> location_enhance(const Var<T>& heatmap, const Var<T>& f_u_c2, nn::ConvBnAct<T>& le_cbr,
                        bool training);

/// Channel-broadcast product of the [N, 1, H, W] gate with [N, C, H, W].
template <typename T>
Var<T> fuse_le(const Var<T>& f_u_l, const Var<T>& f_u_e);

/// Per-cell L2 normalization over channels.
template <typename T>
Var<T> normalize_reference(const Var<T>& f_s_c3);

/// sigmoid(scale * cos(GAP(F_u^LE), F_hat_s(cell))) over the reference grid,
/// returned as [N, 1, Hs, Ws] in [0, 1].
template <typename T>
Var<T> spatial_attention(const Var<T>& f_u_le, const Var<T>& f_s_hat, const Var<T>& scale);

template <typename T>
struct MatchArtifacts {
  Var<T> f_mhca;
  Var<T> f_u_e;
  Var<T> f_u_l;
  Var<T> f_u_le;
  Var<T> f_s_hat;
  Var<T> a_s;
  Var<T> attention;
};

template <typename T>
class MatchingBlock {
 public:
  MatchingBlock(const ModelConfig& cfg, nn::Rng& rng);

  MatchArtifacts<T> forward(const Var<T>& heatmap, const Var<T>& f_u_c2, const Var<T>& f_u_c3,
                            const Var<T>& f_s_c3, bool training);
  void state(const std::string& prefix, nn::StateList<T>& out);

  MhcaConfig mhca_config(int64_t pooled_h, int64_t pooled_w) const;
  QkvProjection<T>& projection() { return proj_; }
  MhcaWeights<T>& mhca_weights() { return weights_; }
  nn::ConvBnAct<T>& le_cbr() { return le_cbr_; }
  Var<T>& sa_scale() { return sa_scale_; }

 private:
  int64_t nc_, heads_, d_k_, d_v_;
  QkvProjection<T> proj_;
  MhcaWeights<T> weights_;
  nn::ConvBnAct<T> le_cbr_;
  Var<T> sa_scale_;
};

}  // namespace ocg::matching

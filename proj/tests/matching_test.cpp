// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "ocg/matching.hpp"
#include "support/criteria.hpp"
#include "support/oracles.hpp"

namespace ocg::matching {
namespace {

using testing::random_tensor;
using testing::Rng;
using V = ad::Var<double>;

V probe(const V& y, uint64_t seed) {
  Rng rng(seed);
  return ops::sum(ops::mul(y, V(random_tensor<double>(y.shape(), rng))));
}

TEST(Tokens, RoundTripAndOrder) {
  Tensor<double> t({1, 2, 2, 3});
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<double>(i);
  const V tok = to_tokens(V(t));
  EXPECT_EQ(tok.shape(), (Shape{1, 6, 2}));
  // Token 4 is row 1, col 1; channel c sits at c * 6 + 4.
  EXPECT_EQ(tok.value()[4 * 2 + 0], 4.0);
  EXPECT_EQ(tok.value()[4 * 2 + 1], 10.0);
  EXPECT_EQ(from_tokens(tok, 2, 3).value().storage(), t.storage());
}

TEST(Attention, UniformWhenQueryIsZero) {
  Rng rng(1);
  const V q(Tensor<double>({1, 2, 4}));
  const V k(random_tensor<double>({1, 5, 4}, rng));
  const V v(random_tensor<double>({1, 5, 3}, rng));
  const auto att = scaled_dot_attention(q, k, v, 4);
  for (int64_t i = 0; i < att.weights.numel(); ++i) EXPECT_NEAR(att.weights.value()[i], 0.2, 1e-15);
  for (int64_t c = 0; c < 3; ++c) {
    double mean = 0.0;
    for (int64_t j = 0; j < 5; ++j) mean += v.value()[j * 3 + c] / 5.0;
    EXPECT_NEAR(att.out.value()[c], mean, 1e-14);
  }
}

TEST(Attention, MatchesLoopOracle) {
  Rng rng(2);
  const V q(random_tensor<double>({2, 3, 4}, rng));
  const V k(random_tensor<double>({2, 6, 4}, rng));
  const V v(random_tensor<double>({2, 6, 5}, rng));
  const auto att = scaled_dot_attention(q, k, v, 4);
  for (int64_t b = 0; b < 2; ++b) {
    testing::Mat w;
    const auto expect = testing::attention_oracle(testing::mat_from(q.value(), b),
                                                  testing::mat_from(k.value(), b),
                                                  testing::mat_from(v.value(), b), 4, &w);
    const auto got = testing::mat_from(att.out.value(), b);
    const auto gw = testing::mat_from(att.weights.value(), b);
    for (size_t i = 0; i < got.v.size(); ++i) EXPECT_NEAR(got.v[i], expect.v[i], 1e-14);
    for (size_t i = 0; i < gw.v.size(); ++i) EXPECT_NEAR(gw.v[i], w.v[i], 1e-15);
  }
}

TEST(Attention, ShapeErrors) {
  const V a(Tensor<double>({1, 2, 4})), b(Tensor<double>({1, 3, 5})), c(Tensor<double>({1, 4, 4}));
  EXPECT_THROW(scaled_dot_attention(a, b, b, 4), ShapeError);
  EXPECT_THROW(scaled_dot_attention(a, c, V(Tensor<double>({1, 3, 4})), 4), ShapeError);
}

TEST(Mhca, AlgebraSuite) {
  const auto r = testing::attention_algebra(40);
  EXPECT_EQ(r.outcome, testing::Outcome::kPass) << r.detail;
}

TEST(Mhca, WeightsAreReturnedPerHead) {
  MhcaConfig cfg{8, 4, 2, 3, 2, 2};
  nn::Rng wr(3);
  MhcaWeights<double> w(cfg, wr);
  Rng rng(4);
  const auto att = mhca_tokens(V(random_tensor<double>({2, 5, 8}, rng)),
                               V(random_tensor<double>({2, 4, 8}, rng)),
                               V(random_tensor<double>({2, 4, 8}, rng)), cfg, w);
  EXPECT_EQ(att.out.shape(), (Shape{2, 5, 8}));
  EXPECT_EQ(att.weights.shape(), (Shape{8, 5, 4}));
}

TEST(Mhca, FirstQueryProjectionGradient) {
  // Two-token toy, derivative of sum(output) w.r.t. W^Q of head 1.
  MhcaConfig cfg{3, 2, 2, 2, 1, 2};
  nn::Rng wr(5);
  MhcaWeights<double> w(cfg, wr);
  Rng rng(6);
  const V q(random_tensor<double>({1, 2, 3}, rng));
  const V k(random_tensor<double>({1, 2, 3}, rng));
  const V v(random_tensor<double>({1, 2, 3}, rng));
  auto f = [&] { return ops::sum(mhca_tokens(q, k, v, cfg, w).out); };
  w.w_q.zero_grad();
  f().backward();
  const double h = 1e-6;
  for (int64_t r = 0; r < 3; ++r) {
    for (int64_t c = 0; c < cfg.d_k; ++c) {
      const int64_t idx = r * cfg.heads * cfg.d_k + c;
      double& x = w.w_q.mutable_value()[idx];
      const double x0 = x;
      ad::NoGradGuard g;
      x = x0 + h;
      const double fp = f().value()[0];
      x = x0 - h;
      const double fm = f().value()[0];
      x = x0;
      const double num = (fp - fm) / (2 * h), ana = w.w_q.grad()[idx];
      EXPECT_LT(std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-8}), 1e-5)
          << r << "," << c;
    }
  }
}

TEST(Mhca, GradientCheck) {
  MhcaConfig cfg{6, 3, 2, 2, 2, 2};
  nn::Rng wr(7);
  MhcaWeights<double> w(cfg, wr);
  QkvProjection<double> proj(6, wr);
  Rng rng(8);
  V fu(random_tensor<double>({2, 6, 2, 3}, rng), true);
  V fs(random_tensor<double>({2, 6, 4, 4}, rng), true);
  const auto r = testing::check_gradients(
      [&] { return probe(mhca(fu, fs, cfg, proj, w).out, 9); },
      {{"f_u", &fu}, {"f_s", &fs}, {"proj.q", &proj.q.weight()}, {"proj.k", &proj.k.weight()},
       {"w_o", &w.w_o}});
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(Mhca, MapOutputHasQueryGrid) {
  MhcaConfig cfg{4, 2, 2, 2, 2, 2};
  nn::Rng wr(10);
  MhcaWeights<double> w(cfg, wr);
  QkvProjection<double> proj(4, wr);
  Rng rng(11);
  const auto att = mhca(V(random_tensor<double>({1, 4, 2, 4}, rng)),
                        V(random_tensor<double>({1, 4, 8, 8}, rng)), cfg, proj, w);
  EXPECT_EQ(att.out.shape(), (Shape{1, 4, 2, 4}));
  EXPECT_EQ(att.weights.shape(), (Shape{2, 8, 4}));
}

TEST(ProjectQkv, PoolsReferenceToQueryGrid) {
  nn::Rng wr(12);
  QkvProjection<double> proj(3, wr);
  Rng rng(13);
  const auto t = project_qkv(V(random_tensor<double>({2, 3, 2, 2}, rng)),
                             V(random_tensor<double>({2, 3, 8, 8}, rng)), proj, 2, 2);
  EXPECT_EQ(t.q.shape(), (Shape{2, 4, 3}));
  EXPECT_EQ(t.k.shape(), (Shape{2, 4, 3}));
  EXPECT_EQ(t.v.shape(), (Shape{2, 4, 3}));
}

TEST(LocationEnhance, ConstantHeatmapOutputShape) {
  nn::Rng wr(14);
  nn::ConvBnAct<double> cbr(2, 1, 3, 2, nn::Activation::kRelu, wr);
  Rng rng(15);
  const V out = location_enhance(V(Tensor<double>({2, 1, 64, 64}, 1.0)),
                                 V(random_tensor<double>({2, 8, 4, 4}, rng)), cbr, true);
  EXPECT_EQ(out.shape(), (Shape{2, 1, 2, 2}));
  for (int64_t i = 0; i < out.numel(); ++i) EXPECT_GE(out.value()[i], 0.0);
}

TEST(LocationEnhance, RejectsMisalignedHeatmap) {
  nn::Rng wr(16);
  nn::ConvBnAct<double> cbr(2, 1, 3, 2, nn::Activation::kRelu, wr);
  EXPECT_THROW(location_enhance(V(Tensor<double>({1, 1, 60, 64})), V(Tensor<double>({1, 8, 4, 4})),
                                cbr, false),
               ShapeError);
}

TEST(LocationEnhance, GradientCheck) {
  nn::Rng wr(17);
  nn::ConvBnAct<double> cbr(2, 1, 3, 2, nn::Activation::kRelu, wr);
  Rng rng(18);
  V heat(random_tensor<double>({2, 1, 64, 64}, rng, 0, 1), true);
  V c2(random_tensor<double>({2, 3, 4, 4}, rng), true);
  const auto r = testing::check_gradients(
      [&] { return probe(location_enhance(heat, c2, cbr, true), 19); },
      {{"heatmap", &heat}, {"f_u_c2", &c2}, {"w", &cbr.conv().weight()}});
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(FuseLe, BroadcastsGateOverChannels) {
  Tensor<double> gate({1, 1, 1, 2}, std::vector<double>{2.0, 0.0});
  Tensor<double> f({1, 2, 1, 2}, std::vector<double>{1, 2, 3, 4});
  EXPECT_EQ(fuse_le(V(gate), V(f)).value().storage(), (std::vector<double>{2, 0, 6, 0}));
}

TEST(Products, MatchLoopOracleAndCommute) {
  Rng rng(30);
  const auto a = random_tensor<double>({2, 3, 4, 5}, rng), b = random_tensor<double>({2, 3, 4, 5}, rng);
  const auto ab = enhance_query(V(a), V(b)).value(), ba = enhance_query(V(b), V(a)).value();
  for (int64_t i = 0; i < a.numel(); ++i) ASSERT_EQ(ab[i], a[i] * b[i]);
  EXPECT_EQ(ab, ba);

  const auto gate = random_tensor<double>({2, 1, 4, 5}, rng);
  const auto g = fuse_le(V(gate), V(a)).value();
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t p = 0; p < 20; ++p)
        ASSERT_EQ(g[(n * 3 + c) * 20 + p], gate[n * 20 + p] * a[(n * 3 + c) * 20 + p]);
  // (gate * mhca) * c3 == gate * (mhca * c3) as elementwise products of reals.
  const auto c3 = random_tensor<double>({2, 3, 4, 5}, rng);
  const auto left = fuse_le(V(gate), enhance_query(V(a), V(c3))).value();
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t p = 0; p < 20; ++p) {
        const int64_t i = (n * 3 + c) * 20 + p;
        EXPECT_NEAR(left[i], (gate[n * 20 + p] * c3[i]) * a[i], 1e-15);
      }
}

TEST(NormalizeReference, UnitNormCells) {
  Rng rng(20);
  const auto y = normalize_reference(V(random_tensor<double>({1, 5, 3, 3}, rng))).value();
  for (int64_t cell = 0; cell < 9; ++cell) {
    double n = 0.0;
    for (int64_t c = 0; c < 5; ++c) n += y[c * 9 + cell] * y[c * 9 + cell];
    EXPECT_NEAR(n, 1.0, 1e-12);
  }
}

TEST(SpatialAttention, AlignedCellScoresHighest) {
  // Reference cell 2 points the same way as the query descriptor.
  Tensor<double> q({1, 2, 1, 1}, std::vector<double>{3.0, 4.0});
  Tensor<double> s({1, 2, 1, 3}, std::vector<double>{0.0, -0.6, 0.6, 1.0, -0.8, 0.8});
  const V a = spatial_attention(V(q), normalize_reference(V(s)), V(Tensor<double>({1}, 10.0)));
  EXPECT_EQ(a.shape(), (Shape{1, 1, 1, 3}));
  EXPECT_NEAR(a.value()[2], 1.0 / (1.0 + std::exp(-10.0)), 1e-12);
  EXPECT_NEAR(a.value()[0], 1.0 / (1.0 + std::exp(-8.0)), 1e-12);
  EXPECT_NEAR(a.value()[1], 1.0 / (1.0 + std::exp(10.0)), 1e-12);
}

TEST(SpatialAttention, ValuesInUnitInterval) {
  Rng rng(21);
  const V a = spatial_attention(V(random_tensor<double>({2, 4, 2, 2}, rng)),
                                normalize_reference(V(random_tensor<double>({2, 4, 5, 5}, rng))),
                                V(Tensor<double>({1}, 10.0)));
  for (int64_t i = 0; i < a.numel(); ++i) {
    EXPECT_GE(a.value()[i], 0.0);
    EXPECT_LE(a.value()[i], 1.0);
  }
}

TEST(SpatialAttention, ReferenceScaleIsAbsorbed) {
  Rng rng(26);
  const auto q = random_tensor<double>({1, 6, 2, 2}, rng);
  const auto s = random_tensor<double>({1, 6, 5, 4}, rng);
  const V scale(Tensor<double>({1}, 10.0));
  const auto base = spatial_attention(V(q), normalize_reference(V(s)), scale).value();
  auto scaled = [&](double k) {
    Tensor<double> t = s;
    for (int64_t i = 0; i < t.numel(); ++i) t[i] *= k;
    return spatial_attention(V(q), normalize_reference(V(t)), scale).value();
  };
  auto argmax = [](const Tensor<double>& t) {
    return std::max_element(t.storage().begin(), t.storage().end()) - t.storage().begin();
  };
  // A power of two scales exactly; a factor of 10 rounds in the norm.
  EXPECT_EQ(scaled(8.0), base);
  const auto ten = scaled(10.0);
  EXPECT_EQ(argmax(ten), argmax(base));
  for (int64_t i = 0; i < base.numel(); ++i) EXPECT_NEAR(ten[i], base[i], 1e-14);
}

TEST(SpatialAttention, GradientCheck) {
  Rng rng(22);
  V q(random_tensor<double>({2, 4, 2, 2}, rng), true);
  V s(random_tensor<double>({2, 4, 3, 3}, rng), true);
  V scale(Tensor<double>({1}, 2.5), true);
  const auto r = testing::check_gradients(
      [&] { return probe(spatial_attention(q, normalize_reference(s), scale), 23); },
      {{"q", &q}, {"s", &s}, {"scale", &scale}});
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(MatchingBlock, ArtifactShapesTiny) {
  const ModelConfig cfg = ModelConfig::tiny();
  nn::Rng wr(24);
  MatchingBlock<float> block(cfg, wr);
  Rng rng(25);
  const auto a = block.forward(ad::Var<float>(random_tensor<float>({2, 1, 128, 128}, rng, 0, 1)),
                               ad::Var<float>(random_tensor<float>({2, cfg.resnet_width * 4, 8, 8}, rng)),
                               ad::Var<float>(random_tensor<float>({2, cfg.nc, 4, 4}, rng)),
                               ad::Var<float>(random_tensor<float>({2, cfg.nc, 8, 8}, rng)), true);
  EXPECT_EQ(a.f_mhca.shape(), (Shape{2, cfg.nc, 4, 4}));
  EXPECT_EQ(a.f_u_l.shape(), (Shape{2, 1, 4, 4}));
  EXPECT_EQ(a.f_u_le.shape(), (Shape{2, cfg.nc, 4, 4}));
  EXPECT_EQ(a.f_s_hat.shape(), (Shape{2, cfg.nc, 8, 8}));
  EXPECT_EQ(a.a_s.shape(), (Shape{2, 1, 8, 8}));
  EXPECT_EQ(a.attention.shape(), (Shape{2 * cfg.heads, 16, 16}));
  EXPECT_FLOAT_EQ(block.sa_scale().value()[0], 10.0f);
}

TEST(MatchingBlock, EndToEndGradientCheck) {
  ModelConfig cfg = ModelConfig::tiny();
  cfg.nc = 8;
  cfg.heads = 2;
  cfg.d_k = 4;
  cfg.d_v = 4;
  cfg.sa_init_scale = 2.0;
  nn::Rng wr(27);
  MatchingBlock<double> block(cfg, wr);
  Rng rng(28);
  // Query C3 grid 2x2, C2 grid 4x4, reference grid 4x4.
  V heat(random_tensor<double>({1, 1, 64, 64}, rng, 0, 1));
  V c2(random_tensor<double>({1, cfg.resnet_width * 4, 4, 4}, rng), true);
  V c3(random_tensor<double>({1, 8, 2, 2}, rng), true);
  V s3(random_tensor<double>({1, 8, 4, 4}, rng), true);
  std::vector<std::pair<std::string, V*>> inputs{{"f_u_c2", &c2}, {"f_u_c3", &c3}, {"f_s_c3", &s3}};
  nn::StateList<double> st;
  block.state("", st);
  for (auto& s : st)
    if (s.param) inputs.emplace_back(s.name, s.param);
  const auto r = testing::check_gradients(
      [&] {
        const auto a = block.forward(heat, c2, c3, s3, false);
        return ops::add(probe(a.a_s, 29), probe(a.f_u_le, 30));
      },
      inputs, 1e-5, 12);
  EXPECT_GT(r.checked, 100);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

}  // namespace
}  // namespace ocg::matching

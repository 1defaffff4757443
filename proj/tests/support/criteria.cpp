// SPDX-License-Identifier: Apache-2.0
#include "support/criteria.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ocg/gkt.hpp"
#include "ocg/matching.hpp"
#include "ocg/metrics.hpp"
#include "ocg/model.hpp"
#include "ocg/pipeline.hpp"
#include "support/oracles.hpp"

namespace ocg::testing {
namespace {

using V = ad::Var<double>;

CriterionResult verdict(std::string name, bool ok, std::string detail, double limit) {
  CriterionResult r;
  r.name = std::move(name);
  r.outcome = ok ? Outcome::kPass : Outcome::kFail;
  r.detail = std::move(detail);
  r.time_limit = limit;
  return r;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

int64_t pick(Rng& rng, int64_t lo, int64_t hi) {
  return std::uniform_int_distribution<int64_t>(lo, hi)(rng);
}

double pickd(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

V probe(const V& y, uint64_t seed) {
  Rng rng(seed);
  return ops::sum(ops::mul(y, V(random_tensor<double>(y.shape(), rng))));
}

}  // namespace

CriterionResult timed(const std::function<CriterionResult()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  CriterionResult r;
  try {
    r = body();
  } catch (const std::exception& e) {
    r.outcome = Outcome::kFail;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (r.time_limit > 0.0 && r.seconds > r.time_limit && r.outcome == Outcome::kPass) {
    r.outcome = Outcome::kFail;
    r.detail += "; over time limit " + fmt(r.time_limit) + " s";
  }
  return r;
}

CriterionResult gkt_suite(int configs) {
  Rng rng(20240601);
  int passed = 0;
  std::string first_failure;
  for (int i = 0; i < configs; ++i) {
    gkt::GktConfig cfg{pickd(rng, 0.01, 0.3), pick(rng, 1, 96), pick(rng, 1, 96)};
    const int64_t h = cfg.height, w = cfg.width;
    const gkt::ClickPoint click{static_cast<double>(pick(rng, 0, w - 1)),
                                static_cast<double>(pick(rng, 0, h - 1))};
    const auto m = gkt::gkt_map<double>(click, cfg);
    std::vector<std::string> fails;

    const auto cx = static_cast<int64_t>(click.x), cy = static_cast<int64_t>(click.y);
    if (m[cy * w + cx] != 1.0) fails.push_back("peak != 1");

    // Radial monotonicity and isotropy: order pixels by integer squared
    // distance; values must not increase and must tie on equal distance.
    std::vector<std::pair<int64_t, double>> by_dist;
    by_dist.reserve(static_cast<size_t>(h * w));
    double oracle_err = 0.0;
    const auto ref = gkt_oracle(click.x, click.y, cfg.sigma, h, w);
    for (int64_t r = 0; r < h; ++r)
      for (int64_t c = 0; c < w; ++c) {
        by_dist.emplace_back((r - cy) * (r - cy) + (c - cx) * (c - cx), m[r * w + c]);
        oracle_err = std::max(oracle_err, std::abs(m[r * w + c] - ref[static_cast<size_t>(r * w + c)]));
      }
    std::sort(by_dist.begin(), by_dist.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (size_t k = 1; k < by_dist.size(); ++k) {
      if (by_dist[k].first == by_dist[k - 1].first && by_dist[k].second != by_dist[k - 1].second) {
        fails.push_back("anisotropic");
        break;
      }
      if (by_dist[k].second > by_dist[k - 1].second) {
        fails.push_back("not radially monotone");
        break;
      }
    }
    if (oracle_err > 1e-12) fails.push_back("oracle mismatch " + fmt(oracle_err));

    // A pixel exactly sigma_n away from a fractional click.
    const double sn = cfg.normalized_sigma();
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      const int64_t r = attempt < 199 ? pick(rng, 0, h - 1) : 0;
      const int64_t c = attempt < 199 ? pick(rng, 0, w - 1) : 0;
      const double theta =
          attempt < 199 ? pickd(rng, 0.0, 2.0 * M_PI) : std::atan2(double(h), double(w));
      const gkt::ClickPoint off{static_cast<double>(c) + sn * std::cos(theta),
                                static_cast<double>(r) + sn * std::sin(theta)};
      if (!(off.x >= 0.0 && off.y >= 0.0 && off.x < double(w) && off.y < double(h))) continue;
      placed = true;
      const auto mo = gkt::gkt_map<double>(off, cfg);
      if (std::abs(mo[r * w + c] - std::exp(-0.5)) > 1e-9) fails.push_back("value at sigma_n");
    }
    if (!placed) fails.push_back("no pixel at sigma_n");

    gkt::GktConfig wider = cfg;
    wider.sigma = cfg.sigma * pickd(rng, 1.0001, 3.0);
    const auto mw = gkt::gkt_map<double>(click, wider);
    for (int64_t k = 0; k < m.numel(); ++k) {
      if (mw[k] < m[k]) {
        fails.push_back("not monotone in sigma");
        break;
      }
    }

    if (fails.empty()) {
      ++passed;
    } else if (first_failure.empty()) {
      first_failure = "config " + std::to_string(i) + ": " + fails.front();
    }
  }
  return verdict("GKT suite", passed == configs,
                 std::to_string(passed) + "/" + std::to_string(configs) + " configs" +
                     (first_failure.empty() ? "" : "; " + first_failure),
                 5.0);
}

CriterionResult attention_algebra(int shapes) {
  Rng rng(7);
  double worst_row = 0.0, worst_single = 0.0, worst_multi = 0.0, worst_perm = 0.0;
  for (int i = 0; i < shapes; ++i) {
    const int64_t b = pick(rng, 1, 3), tq = pick(rng, 1, 10), tk = pick(rng, 1, 10);
    matching::MhcaConfig cfg;
    cfg.nc = pick(rng, 1, 12);
    cfg.heads = pick(rng, 1, 4);
    cfg.d_k = pick(rng, 1, 8);
    cfg.d_v = pick(rng, 1, 8);
    nn::Rng wr(static_cast<uint64_t>(i));
    matching::MhcaWeights<double> w(cfg, wr);
    const V q(random_tensor<double>({b, tq, cfg.nc}, rng));
    const V k(random_tensor<double>({b, tk, cfg.nc}, rng, -3, 3));
    const V v(random_tensor<double>({b, tk, cfg.nc}, rng));
    const auto att = matching::mhca_tokens(q, k, v, cfg, w);

    // Row sums, checked at float precision where rounding is coarser.
    matching::MhcaWeights<float> wf;
    auto to_f = [](const Tensor<double>& t) {
      Tensor<float> f(t.shape());
      for (int64_t j = 0; j < t.numel(); ++j) f[j] = static_cast<float>(t[j]);
      return ad::Var<float>(f);
    };
    wf.w_q = to_f(w.w_q.value());
    wf.w_k = to_f(w.w_k.value());
    wf.w_v = to_f(w.w_v.value());
    wf.w_o = to_f(w.w_o.value());
    const auto attf = matching::mhca_tokens(to_f(q.value()), to_f(k.value()), to_f(v.value()), cfg, wf);
    const auto& wt = attf.weights.value();
    for (int64_t r = 0; r < wt.numel() / tk; ++r) {
      double s = 0.0;
      for (int64_t c = 0; c < tk; ++c) s += wt[r * tk + c];
      worst_row = std::max(worst_row, std::abs(s - 1.0));
    }

    // Multi-head against the loop oracle.
    const Mat wq = mat_from(w.w_q.value(), 0), wk = mat_from(w.w_k.value(), 0);
    const Mat wv = mat_from(w.w_v.value(), 0), wo = mat_from(w.w_o.value(), 0);
    for (int64_t n = 0; n < b; ++n) {
      const Mat expect = mhca_oracle(mat_from(q.value(), n), mat_from(k.value(), n),
                                     mat_from(v.value(), n), wq, wk, wv, wo, cfg.heads, cfg.d_k,
                                     cfg.d_v);
      const Mat got = mat_from(att.out.value(), n);
      for (size_t j = 0; j < got.v.size(); ++j)
        worst_multi = std::max(worst_multi, std::abs(got.v[j] - expect.v[j]));
    }

    // One head against a single attention with the same projections.
    matching::MhcaConfig one = cfg;
    one.heads = 1;
    nn::Rng wr1(static_cast<uint64_t>(i) + 1000);
    matching::MhcaWeights<double> w1(one, wr1);
    const auto att1 = matching::mhca_tokens(q, k, v, one, w1);
    for (int64_t n = 0; n < b; ++n) {
      const Mat single =
          matmul(attention_oracle(matmul(mat_from(q.value(), n), mat_from(w1.w_q.value(), 0)),
                                  matmul(mat_from(k.value(), n), mat_from(w1.w_k.value(), 0)),
                                  matmul(mat_from(v.value(), n), mat_from(w1.w_v.value(), 0)),
                                  one.d_k),
                 mat_from(w1.w_o.value(), 0));
      const Mat got = mat_from(att1.out.value(), n);
      for (size_t j = 0; j < got.v.size(); ++j)
        worst_single = std::max(worst_single, std::abs(got.v[j] - single.v[j]));
    }

    // Permute reference tokens (K and V rows together).
    std::vector<int64_t> perm(static_cast<size_t>(tk));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor<double> kp(k.shape()), vp(v.shape());
    for (int64_t n = 0; n < b; ++n)
      for (int64_t t = 0; t < tk; ++t)
        for (int64_t c = 0; c < cfg.nc; ++c) {
          const int64_t src = (n * tk + perm[static_cast<size_t>(t)]) * cfg.nc + c;
          kp[(n * tk + t) * cfg.nc + c] = k.value()[src];
          vp[(n * tk + t) * cfg.nc + c] = v.value()[src];
        }
    const auto attp = matching::mhca_tokens(q, V(kp), V(vp), cfg, w);
    for (int64_t j = 0; j < att.out.numel(); ++j)
      worst_perm = std::max(worst_perm, std::abs(attp.out.value()[j] - att.out.value()[j]));
  }
  const bool ok = worst_row <= 1e-6 && worst_single <= 1e-10 && worst_multi <= 1e-10 &&
                  worst_perm == 0.0;
  return verdict("Attention algebra", ok,
                 "row-sum err " + fmt(worst_row) + ", 1-head err " + fmt(worst_single) +
                     ", multi-head err " + fmt(worst_multi) + ", key-permutation diff " +
                     fmt(worst_perm) + " over " + std::to_string(shapes) + " shapes",
                 10.0);
}

CriterionResult gradient_checks() {
  std::vector<std::pair<std::string, GradCheck>> runs;

  {
    Rng rng(31);
    matching::MhcaConfig cfg{6, 2, 3, 2, 2, 2};
    nn::Rng wr(32);
    matching::MhcaWeights<double> w(cfg, wr);
    V q(random_tensor<double>({2, 3, 6}, rng), true);
    V k(random_tensor<double>({2, 4, 6}, rng), true);
    V v(random_tensor<double>({2, 4, 6}, rng), true);
    runs.emplace_back("MHCA", check_gradients(
                                  [&] { return probe(matching::mhca_tokens(q, k, v, cfg, w).out, 1); },
                                  {{"q", &q}, {"k", &k}, {"v", &v}, {"w_q", &w.w_q},
                                   {"w_k", &w.w_k}, {"w_v", &w.w_v}, {"w_o", &w.w_o}}));
  }
  {
    Rng rng(41);
    nn::Rng wr(42);
    nn::ConvBnAct<double> cbr(2, 1, 3, 2, nn::Activation::kRelu, wr);
    V heat(random_tensor<double>({2, 1, 64, 64}, rng, 0.0, 1.0), true);
    V c2(random_tensor<double>({2, 4, 4, 4}, rng), true);
    runs.emplace_back(
        "LE", check_gradients(
                  [&] { return probe(matching::location_enhance(heat, c2, cbr, true), 2); },
                  {{"heatmap", &heat}, {"f_u_c2", &c2}, {"conv", &cbr.conv().weight()},
                   {"gamma", &cbr.bn().gamma()}, {"beta", &cbr.bn().beta()}}));
  }
  {
    Rng rng(51);
    V q(random_tensor<double>({2, 5, 3, 3}, rng), true);
    V s(random_tensor<double>({2, 5, 4, 4}, rng), true);
    V scale(Tensor<double>({1}, 3.0), true);
    runs.emplace_back("SA", check_gradients(
                                [&] {
                                  return probe(matching::spatial_attention(
                                                   q, matching::normalize_reference(s), scale),
                                               3);
                                },
                                {{"f_u_le", &q}, {"f_s", &s}, {"scale", &scale}}));
  }
  {
    Rng rng(61);
    const auto anchors = default_anchors();
    V raw(random_tensor<double>({2, 45, 3, 3}, rng, -2, 2), true);
    const std::vector<Box> gts{{40.0, 70.0, 30.0, 50.0}, {60.5, 12.25, 60.0, 20.0}};
    runs.emplace_back("detection loss",
                      check_gradients(
                          [&] {
                            return detection::compute_loss(raw, gts, anchors, 32, {96, 96}).value;
                          },
                          {{"raw", &raw}}, 1e-5, 200));
  }

  bool ok = true;
  std::string detail;
  for (const auto& [name, r] : runs) {
    const bool pass = r.checked > 0 && r.max_rel_error < 1e-4;
    ok = ok && pass;
    if (!detail.empty()) detail += ", ";
    detail += name + " " + fmt(r.max_rel_error) + " (" + std::to_string(r.checked) + ")";
    if (!pass) detail += " worst " + r.worst;
  }
  return verdict("Gradient checks", ok, "max rel err " + detail, 60.0);
}

CriterionResult iou_oracle(int pairs) {
  Rng rng(71);
  int exact = 0;
  auto corner = [&](int& lo, int& hi) {
    lo = static_cast<int>(pick(rng, 0, 63));
    hi = static_cast<int>(pick(rng, lo + 1, 64));
  };
  for (int i = 0; i < pairs; ++i) {
    int ax1, ax2, ay1, ay2, bx1, bx2, by1, by2;
    corner(ax1, ax2);
    corner(ay1, ay2);
    corner(bx1, bx2);
    corner(by1, by2);
    const double analytic = metrics::iou(Box::from_corners(ax1, ay1, ax2, ay2),
                                         Box::from_corners(bx1, by1, bx2, by2));
    exact += analytic == raster_iou(ax1, ay1, ax2, ay2, bx1, by1, bx2, by2);
  }

  // Hand-counted: IoU values 1, 0.5, 0.49, 0.25, 0.
  const Box unit = Box::from_corners(0, 0, 1, 1);
  const std::vector<metrics::EvalPair> fixture{
      {unit, unit, "a"},
      {Box::from_corners(0, 0, 2, 1), unit, "a"},
      {Box::from_corners(0, 0, 100, 1), Box::from_corners(0, 0, 49, 1), "b"},
      {Box::from_corners(0, 0, 4, 1), unit, "b"},
      {Box::from_corners(5, 5, 6, 6), unit, "b"}};
  const double a25 = metrics::acc_at_t(fixture, 0.25);
  const double a50 = metrics::acc_at_t(fixture, 0.50);
  const double a49 = metrics::acc_at_t(fixture, 0.49);
  const bool fixtures_ok = a25 == 80.0 && a50 == 40.0 && a49 == 60.0;
  return verdict("IoU oracle", exact == pairs && fixtures_ok,
                 std::to_string(exact) + "/" + std::to_string(pairs) +
                     " exact; acc@0.25/0.49/0.50 = " + fmt(a25) + "/" + fmt(a49) + "/" + fmt(a50) +
                     " (expect 80/60/40)",
                 10.0);
}

CriterionResult shape_contract() {
  const ModelConfig cfg = ModelConfig::standard();
  OcgNet<float> net(cfg, 0);
  ad::NoGradGuard guard;
  Rng rng(81);
  std::vector<std::string> fails;

  const auto sat = ad::Var<float>(random_tensor<float>({1, 3, 1024, 1024}, rng));
  const auto drone = net.forward(ad::Var<float>(random_tensor<float>({1, 3, 256, 256}, rng)),
                                 ad::Var<float>(random_tensor<float>({1, 1, 256, 256}, rng, 0, 1)),
                                 sat, false);
  if (drone.raw.shape() != Shape{1, 45, 32, 32})
    fails.push_back("drone head " + shape_str(drone.raw.shape()));
  if (drone.match.a_s.shape() != Shape{1, 1, 32, 32})
    fails.push_back("drone a_s " + shape_str(drone.match.a_s.shape()));

  const auto ground = net.forward(ad::Var<float>(random_tensor<float>({1, 3, 256, 512}, rng)),
                                  ad::Var<float>(random_tensor<float>({1, 1, 256, 512}, rng, 0, 1)),
                                  sat, false);
  const Shape& gw = ground.match.attention.shape();
  if (gw.size() != 3 || gw[1] != 128) fails.push_back("ground query tokens " + shape_str(gw));
  if (ground.raw.shape() != Shape{1, 45, 32, 32})
    fails.push_back("ground head " + shape_str(ground.raw.shape()));

  return verdict("Shape contract", fails.empty(),
                 fails.empty() ? "head 45x32x32, a_s 1x32x32, ground 128 query tokens"
                               : fails.front(),
                 30.0);
}

CriterionResult decode_encode_identity(int boxes) {
  Rng rng(91);
  const auto anchors = default_anchors();
  double worst = 0.0;
  for (int i = 0; i < boxes; ++i) {
    const Box b{pickd(rng, 0.0, 1024.0), pickd(rng, 0.0, 1024.0), pickd(rng, 2.0, 700.0),
                pickd(rng, 2.0, 700.0)};
    const Box d = detection::decode_box(detection::encode_box(b, anchors, 32, 32, 32), anchors, 32);
    worst = std::max({worst, std::abs(d.cx - b.cx), std::abs(d.cy - b.cy), std::abs(d.w - b.w),
                      std::abs(d.h - b.h)});
  }
  return verdict("Decode/encode identity", worst <= 1e-5,
                 "max error " + fmt(worst) + " px over " + std::to_string(boxes) + " boxes", 0.0);
}

CriterionResult overfit_sanity() {
  const auto dir = temp_dir("acceptance_overfit");
  data::FixtureOptions fx;
  fx.seed = 3;
  fx.n = 8;
  fx.all_train = true;
  const auto manifest = data::load_manifest(data::make_synthetic_fixture(dir / "data", fx));

  pipeline::TrainConfig cfg;
  cfg.model = ModelConfig::tiny();
  cfg.batch_size = 8;
  cfg.learning_rate = 3e-3;
  cfg.epochs = 200;
  cfg.max_steps = 200;
  cfg.seed = 1;
  cfg.eval_split = data::Split::kTrain;
  cfg.eval_every = 0;
  cfg.checkpoint_dir = dir / "run";
  const auto result = pipeline::train(cfg, manifest);

  const auto& e = result.epochs;
  double mean_delta = 0.0;
  for (size_t i = 1; i < e.size(); ++i) mean_delta += e[i].loss.total - e[i - 1].loss.total;
  mean_delta /= static_cast<double>(std::max<size_t>(1, e.size() - 1));
  const double acc = e.empty() || !e.back().eval ? 0.0 : e.back().eval->acc_at_50;
  const bool ok = result.steps <= 200 && acc >= 90.0 && mean_delta < 0.0;
  return verdict("Overfit sanity", ok,
                 "train acc@0.50 " + fmt(acc) + "% after " + std::to_string(result.steps) +
                     " steps, mean epoch loss change " + fmt(mean_delta) + " (" +
                     fmt(e.empty() ? 0.0 : e.front().loss.total) + " -> " +
                     fmt(e.empty() ? 0.0 : e.back().loss.total) + ")",
                 15.0 * 60.0);
}

CriterionResult parameter_budget() {
  OcgNet<float> net(ModelConfig::standard(), 0);
  const double total = static_cast<double>(net.parameter_count());
  const double target = 74.8e6;
  std::string breakdown;
  for (const auto& [name, n] : net.parameter_breakdown())
    breakdown += (breakdown.empty() ? "" : ", ") + name + " " + fmt(static_cast<double>(n) / 1e6) + "M";
  CriterionResult r = verdict("Parameter budget", std::abs(total - target) <= 0.1 * target,
                              fmt(total / 1e6) + "M vs 74.8M +-10% [" + breakdown + "]", 0.0);
  if (r.outcome == Outcome::kFail) r.outcome = Outcome::kWarn;
  return r;
}

CriterionResult protocol_defaults() {
  std::vector<std::string> fails;
  const pipeline::TrainConfig base;
  if (base.batch_size != 12 || base.learning_rate != 1e-4 || base.epochs != 25)
    fails.push_back("train defaults");
  const auto few = pipeline::default_fewshot_config();
  if (few.batch_size != 6 || few.epochs != 20) fails.push_back("few-shot defaults");
  const auto grid = pipeline::SweepConfig{}.values();
  const std::vector<double> expect{0.025, 0.05, 0.075, 0.1, 0.125, 0.15, 0.175, 0.2};
  bool grid_ok = grid.size() == expect.size();
  for (size_t i = 0; grid_ok && i < grid.size(); ++i) grid_ok = std::abs(grid[i] - expect[i]) < 1e-12;
  if (!grid_ok) fails.push_back("sweep grid");
  const ModelConfig m = ModelConfig::standard();
  if (m.sigma_drone != 0.075 || m.sigma_ground != 0.15) fails.push_back("sigma defaults");
  return verdict("Protocol defaults", fails.empty(),
                 fails.empty() ? "(12, 1e-4, 25), few-shot (6, 20), 8 sigma values 0.025..0.20"
                               : fails.front(),
                 0.0);
}

CriterionResult determinism() {
  const auto dir = temp_dir("acceptance_determinism");
  data::FixtureOptions fx;
  fx.seed = 11;
  fx.n = 8;
  fx.query_kind = "mixed";
  const auto manifest = data::load_manifest(data::make_synthetic_fixture(dir / "data", fx));

  auto run = [&](const std::string& name) {
    pipeline::TrainConfig cfg;
    cfg.model = ModelConfig::tiny();
    cfg.batch_size = 2;
    cfg.epochs = 2;
    cfg.seed = 5;
    cfg.deterministic = true;
    cfg.learning_rate = 1e-3;
    cfg.checkpoint_dir = dir / name;
    cfg.log_path = dir / (name + ".jsonl");
    const auto result = pipeline::train(cfg, manifest);
    std::ifstream in(cfg.log_path);
    std::stringstream ss;
    // The start row names the run directory; compare epoch rows only.
    std::string line;
    std::getline(in, line);
    ss << in.rdbuf();
    return std::make_pair(ss.str(), result.final_checkpoint);
  };
  const auto [log_a, ckpt_a] = run("a");
  const auto [log_b, ckpt_b] = run("b");
  const auto eval_a = pipeline::evaluate_checkpoint(ckpt_a, manifest, data::Split::kValidation);
  const auto eval_b = pipeline::evaluate_checkpoint(ckpt_a, manifest, data::Split::kValidation);
  const bool logs_equal = !log_a.empty() && log_a == log_b;
  const bool reports_equal =
      eval_a.report == eval_b.report && eval_a.predictions == eval_b.predictions;
  return verdict("Determinism", logs_equal && reports_equal,
                 std::string("training logs ") + (logs_equal ? "identical" : "differ") +
                     ", eval reports " + (reports_equal ? "identical" : "differ"),
                 0.0);
}

std::vector<Criterion> all_criteria() {
  return {{"gkt", [] { return gkt_suite(); }},
          {"attention", [] { return attention_algebra(); }},
          {"gradients", [] { return gradient_checks(); }},
          {"iou", [] { return iou_oracle(); }},
          {"shapes", [] { return shape_contract(); }},
          {"decode", [] { return decode_encode_identity(); }},
          {"overfit", [] { return overfit_sanity(); }},
          {"params", [] { return parameter_budget(); }},
          {"protocol", [] { return protocol_defaults(); }},
          {"determinism", [] { return determinism(); }}};
}

}  // namespace ocg::testing

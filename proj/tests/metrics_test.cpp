// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>

#include "ocg/metrics.hpp"
#include "support/criteria.hpp"
#include "support/oracles.hpp"

namespace ocg::metrics {
namespace {

const Box kUnit = Box::from_corners(0, 0, 1, 1);

// Prediction sharing the unit box's left edge, stretched to give IoU = 1 / len.
Box stretched(double len) { return Box::from_corners(0, 0, len, 1); }

TEST(Iou, Examples) {
  EXPECT_EQ(iou(kUnit, kUnit), 1.0);
  EXPECT_EQ(iou(kUnit, Box::from_corners(2, 2, 3, 3)), 0.0);
  EXPECT_NEAR(iou(Box::from_corners(0, 0, 2, 2), Box::from_corners(1, 1, 3, 3)), 1.0 / 7.0, 1e-15);
  EXPECT_EQ(testing::raster_iou(0, 0, 2, 2, 1, 1, 3, 3), 1.0 / 7.0);
}

TEST(Iou, TouchingEdgesHaveZeroOverlap) {
  EXPECT_EQ(iou(kUnit, Box::from_corners(1, 0, 2, 1)), 0.0);
}

TEST(Iou, RejectsDegenerateBoxes) {
  EXPECT_THROW(iou(kUnit, {0, 0, 0, 1}), InvalidInput);
  EXPECT_THROW(iou({0, 0, 1, -1}, kUnit), InvalidInput);
}

TEST(Iou, SymmetricExactly) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> d(0.1, 50.0);
  for (int i = 0; i < 2000; ++i) {
    const Box a{d(rng), d(rng), d(rng), d(rng)}, b{d(rng), d(rng), d(rng), d(rng)};
    EXPECT_EQ(iou(a, b), iou(b, a));
  }
}

TEST(Iou, TranslationAndScaleInvariant) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> d(0.5, 20.0), t(-100.0, 100.0), s(0.1, 10.0);
  for (int i = 0; i < 2000; ++i) {
    const Box a{d(rng), d(rng), d(rng), d(rng)}, b{d(rng), d(rng), d(rng), d(rng)};
    const double dx = t(rng), dy = t(rng), k = s(rng);
    const Box at{(a.cx + dx) * k, (a.cy + dy) * k, a.w * k, a.h * k};
    const Box bt{(b.cx + dx) * k, (b.cy + dy) * k, b.w * k, b.h * k};
    EXPECT_NEAR(iou(at, bt), iou(a, b), 1e-9);
  }
}

TEST(Iou, RasterOracleSuite) {
  const auto r = testing::iou_oracle(1000);
  EXPECT_EQ(r.outcome, testing::Outcome::kPass) << r.detail;
}

TEST(AccAtT, HandCountedExample) {
  const std::vector<EvalPair> pairs{{stretched(1 / 0.3), kUnit, "a"},
                                    {stretched(1 / 0.3), kUnit, "a"},
                                    {stretched(1 / 0.6), kUnit, "a"},
                                    {stretched(10.0), kUnit, "a"}};
  EXPECT_DOUBLE_EQ(acc_at_t(pairs, 0.25), 75.0);
  EXPECT_DOUBLE_EQ(acc_at_t(pairs, 0.50), 25.0);
}

TEST(AccAtT, BoundaryCountsAsCorrect) {
  const std::vector<EvalPair> pairs{{stretched(2.0), kUnit, "a"}};
  EXPECT_EQ(iou(pairs[0].pred, pairs[0].gt), 0.5);
  EXPECT_DOUBLE_EQ(acc_at_t(pairs, 0.50), 100.0);
}

TEST(AccAtT, IdenticalBoxesAnyThreshold) {
  const std::vector<EvalPair> pairs(3, {kUnit, kUnit, "a"});
  for (double t : {0.01, 0.25, 0.5, 0.99}) EXPECT_DOUBLE_EQ(acc_at_t(pairs, t), 100.0);
}

TEST(AccAtT, MonotoneInThreshold) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> len(1.0, 8.0);
  std::vector<EvalPair> pairs;
  for (int i = 0; i < 200; ++i) pairs.push_back({stretched(len(rng)), kUnit, "a"});
  double prev = 101.0;
  for (double t = 0.01; t < 1.0; t += 0.01) {
    const double a = acc_at_t(pairs, t);
    EXPECT_LE(a, prev);
    prev = a;
  }
}

TEST(AccAtT, RejectsEmptyAndBadThreshold) {
  EXPECT_THROW(acc_at_t({}, 0.5), InvalidInput);
  const std::vector<EvalPair> pairs{{kUnit, kUnit, "a"}};
  EXPECT_THROW(acc_at_t(pairs, 0.0), InvalidInput);
  EXPECT_THROW(acc_at_t(pairs, 1.0), InvalidInput);
}

TEST(Report, SingleClassEqualsOverall) {
  const std::vector<EvalPair> pairs{{kUnit, kUnit, "car"}, {stretched(3.0), kUnit, "car"}};
  const auto r = per_class_report(pairs);
  ASSERT_EQ(r.per_class.size(), 1u);
  const auto& c = r.per_class.at("car");
  EXPECT_EQ(c.acc_at_25, r.acc_at_25);
  EXPECT_EQ(c.acc_at_50, r.acc_at_50);
  EXPECT_EQ(c.count, r.n);
  EXPECT_DOUBLE_EQ(r.mean_iou, 100.0 * (1.0 + 1.0 / 3.0) / 2.0);
}

TEST(Report, DisjointCorrectness) {
  const std::vector<EvalPair> pairs{{kUnit, kUnit, "b"},
                                    {kUnit, kUnit, "b"},
                                    {Box::from_corners(4, 4, 5, 5), kUnit, "a"},
                                    {Box::from_corners(4, 4, 5, 5), kUnit, "a"}};
  const auto r = per_class_report(pairs);
  EXPECT_EQ(r.per_class.at("b").acc_at_50, 100.0);
  EXPECT_EQ(r.per_class.at("a").acc_at_50, 0.0);
  EXPECT_EQ(r.acc_at_50, 50.0);
  EXPECT_EQ(r.per_class.begin()->first, "a");
}

TEST(Report, UnknownLabelsGoToOtherWithWarning) {
  const std::vector<EvalPair> pairs{{kUnit, kUnit, "car"}, {kUnit, kUnit, "boat"}};
  const auto r = per_class_report(pairs, std::vector<std::string>{"car", "house"});
  EXPECT_EQ(r.per_class.count("boat"), 0u);
  EXPECT_EQ(r.per_class.at(kOtherClass).count, 1);
  EXPECT_FALSE(r.warnings.empty());
  EXPECT_EQ(r.empty_classes, (std::vector<std::string>{"house"}));
}

TEST(Report, Invariants) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> len(1.0, 6.0);
  std::vector<EvalPair> pairs;
  const char* labels[] = {"x", "y", "z"};
  for (int i = 0; i < 60; ++i) pairs.push_back({stretched(len(rng)), kUnit, labels[i % 3]});
  const auto r = per_class_report(pairs);
  EXPECT_LE(r.acc_at_50, r.acc_at_25);
  EXPECT_LE(r.acc_at_25, 100.0);
  int64_t total = 0;
  for (const auto& [name, s] : r.per_class) total += s.count;
  EXPECT_EQ(total, r.n);
}

TEST(Report, JsonRoundTrip) {
  const std::vector<EvalPair> pairs{{kUnit, kUnit, "car"}, {stretched(3.0), kUnit, "boat"}};
  const auto r = per_class_report(pairs, std::vector<std::string>{"car", "boat", "house"});
  const auto j = to_json(r);
  EXPECT_EQ(j.at("n"), 2);
  EXPECT_EQ(report_from_json(j), r);
}

TEST(Table, ColumnLayout) {
  EvalReport v;
  v.acc_at_25 = 68.35;
  v.acc_at_50 = 61.2;
  const std::vector<TableRow> rows{{"ours", v, std::nullopt}};
  const auto text = format_table(rows);
  EXPECT_NE(text.find("Validation"), std::string::npos);
  EXPECT_NE(text.find("Test"), std::string::npos);
  EXPECT_NE(text.find("acc@0.25"), std::string::npos);
  EXPECT_NE(text.find("68.35"), std::string::npos);
  EXPECT_NE(text.find("-"), std::string::npos);
  // Every line has the same two column separators.
  std::istringstream in(text);
  std::string line;
  size_t first_bar = std::string::npos;
  while (std::getline(in, line)) {
    const auto bar = line.find_first_of("|+");
    if (first_bar == std::string::npos) first_bar = bar;
    EXPECT_EQ(bar, first_bar) << line;
  }
}

TEST(Table, ClassListing) {
  const std::vector<EvalPair> pairs{{kUnit, kUnit, "car"}};
  const auto text = format_class_table(per_class_report(pairs, std::vector<std::string>{"car", "bus"}));
  EXPECT_NE(text.find("car"), std::string::npos);
  EXPECT_NE(text.find("bus"), std::string::npos);
  EXPECT_NE(text.find("all"), std::string::npos);
}

}  // namespace
}  // namespace ocg::metrics

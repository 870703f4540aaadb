#include <gtest/gtest.h>

#include <cmath>

#include "cliptta/metrics.hpp"
#include <set>

#include "cliptta/datagen.hpp"
#include "oracles.hpp"

using namespace cliptta;

TEST(Accuracy, Examples) {
  EXPECT_EQ(accuracy({0, 1, 2}, {0, 1, 2}, {true, true, true}), 1.0);
  EXPECT_EQ(accuracy({0, 1, 2, 3}, {0, 1, 0, 0}, {true, true, true, true}), 0.5);
  EXPECT_EQ(accuracy({0, 1, 5, 5}, {0, 0, kUnknownLabel, kUnknownLabel}, {true, true, false, false}), 0.5);
  EXPECT_THROW(accuracy({0, 1}, {0, 1}, {false, false}), std::invalid_argument);
  EXPECT_THROW(accuracy({0}, {0, 1}, {true, true}), std::invalid_argument);
}

TEST(PredictionEntropy, Examples) {
  EXPECT_EQ(prediction_entropy(std::vector<std::size_t>(7, 3), 5), 0.0);
  std::vector<std::size_t> uniform;
  for (std::size_t k = 0; k < 30; ++k) uniform.push_back(k % 10);
  EXPECT_NEAR(prediction_entropy(uniform, 10), std::log(10.0), 1e-12);
  EXPECT_NEAR(prediction_entropy({0, 0, 0, 1}, 2), 0.75 * std::log(4.0 / 3.0) + 0.25 * std::log(4.0), 1e-12);
  EXPECT_NEAR(prediction_entropy({0, 0, 0, 1}, 2), 0.5623, 1e-4);
  const ProbMatrix q{Matrix::from_rows({{0.9, 0.1}, {0.2, 0.8}})};
  EXPECT_NEAR(prediction_entropy(q), std::log(2.0), 1e-12);
}

TEST(PredictionEntropy, ZeroIffSingleClass) {
  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    std::vector<std::size_t> pred(1 + rng.uniform_index(10));
    for (auto& p : pred) p = rng.uniform_index(3);
    const bool single = unique_classes(pred) == 1;
    EXPECT_EQ(prediction_entropy(pred, 3) == 0.0, single);
  }
}

TEST(ChangeRatios, Examples) {
  const ChangeRatios same = improvement_deterioration({0, 1, 1, 0}, {0, 1, 1, 0}, {0, 1, 0, 1});
  EXPECT_EQ(same.improvement, 0.0);
  EXPECT_EQ(same.deterioration, 0.0);
  const ChangeRatios fixed = improvement_deterioration({1, 1}, {0, 0}, {0, 0});
  EXPECT_EQ(fixed.improvement, 1.0);
  EXPECT_FALSE(fixed.deterioration.has_value());
  // 2 fixed, 1 broken, 3 unchanged (one wrong, two right)
  const ChangeRatios mixed = improvement_deterioration({1, 1, 0, 0, 1, 0}, {0, 0, 1, 0, 1, 0}, {0, 0, 0, 0, 0, 0});
  EXPECT_NEAR(*mixed.improvement, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(*mixed.deterioration, 1.0 / 3.0, 1e-15);
}

TEST(ChangeRatios, MatchBruteForceSetCounting) {
  Rng rng(12);
  for (int t = 0; t < 300; ++t) {
    const std::size_t n = 1 + rng.uniform_index(20);
    std::vector<std::size_t> before(n), after(n), truth(n);
    std::set<std::size_t> wrong_before, right_before, fixed, broken;
    for (std::size_t i = 0; i < n; ++i) {
      before[i] = rng.uniform_index(3);
      after[i] = rng.uniform_index(3);
      truth[i] = rng.uniform_index(3);
      (before[i] == truth[i] ? right_before : wrong_before).insert(i);
    }
    for (std::size_t i : wrong_before)
      if (after[i] == truth[i]) fixed.insert(i);
    for (std::size_t i : right_before)
      if (after[i] != truth[i]) broken.insert(i);
    const ChangeRatios r = improvement_deterioration(before, after, truth);
    ASSERT_EQ(r.improvement.has_value(), !wrong_before.empty());
    ASSERT_EQ(r.deterioration.has_value(), !right_before.empty());
    EXPECT_EQ(r.improvement.value_or(-1.0),
              wrong_before.empty() ? -1.0 : double(fixed.size()) / double(wrong_before.size()));
    EXPECT_EQ(r.deterioration.value_or(-1.0),
              right_before.empty() ? -1.0 : double(broken.size()) / double(right_before.size()));
  }
}

TEST(Auroc, Examples) {
  const OodDetection sep = auroc_fpr95({0.9, 0.8}, {0.3, 0.1, 0.2});
  EXPECT_EQ(sep.auroc, 1.0);
  EXPECT_EQ(sep.fpr95, 0.0);
  EXPECT_EQ(auroc_fpr95({0.4, 0.7, 0.7}, {0.7, 0.4, 0.7}).auroc, 0.5);
  // Five of six pairs favour the ID score and none tie.
  const OodDetection d = auroc_fpr95({0.9, 0.8, 0.7}, {0.75, 0.2});
  EXPECT_EQ(d.auroc, oracle::auroc({0.9, 0.8, 0.7}, {0.75, 0.2}));
  EXPECT_NEAR(d.auroc, 5.0 / 6.0, 1e-15);
  EXPECT_EQ(d.fpr95, 0.5);
  EXPECT_THROW(auroc_fpr95({}, {0.1}), std::invalid_argument);
  EXPECT_THROW(auroc_fpr95({0.1}, {}), std::invalid_argument);
}

TEST(Auroc, MatchesBruteForceExactly) {
  Rng rng(77);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> id(1 + rng.uniform_index(50)), ood(1 + rng.uniform_index(50));
    // Coarse grid so ties are frequent.
    for (double& v : id) v = std::round(rng.uniform() * 30.0) / 30.0;
    for (double& v : ood) v = std::round(rng.uniform() * 30.0) / 30.0 - 0.1;
    EXPECT_EQ(auroc_fpr95(id, ood).auroc, oracle::auroc(id, ood));
  }
}

TEST(Auroc, ComplementAndMonotoneInvariance) {
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> id(2 + rng.uniform_index(30)), ood(2 + rng.uniform_index(30));
    for (double& v : id) v = rng.normal() + 0.5;
    for (double& v : ood) v = rng.normal();
    const double a = auroc_fpr95(id, ood).auroc;
    EXPECT_NEAR(a + auroc_fpr95(ood, id).auroc, 1.0, 1e-12);
    std::vector<double> tid = id, tood = ood;
    for (double& v : tid) v = std::exp(3.0 * v) + 2.0;
    for (double& v : tood) v = std::exp(3.0 * v) + 2.0;
    EXPECT_EQ(auroc_fpr95(tid, tood).auroc, a);
    EXPECT_EQ(auroc_fpr95(tid, tood).fpr95, auroc_fpr95(id, ood).fpr95);
  }
}

TEST(Fpr95, ThresholdIsLowerInterpolatedFifthPercentile) {
  std::vector<double> id;
  for (int k = 0; k < 100; ++k) id.push_back(k / 100.0);
  // floor(0.05 * 99) = 4 -> threshold 0.04
  const OodDetection d = auroc_fpr95(id, {0.03, 0.04, 0.5, 0.01});
  EXPECT_EQ(d.fpr95, 0.5);
}

TEST(SeedSummary, MeanAndHalfWidth) {
  const SeedSummary one = summarize_seeds({0.7});
  EXPECT_EQ(one.mean, 0.7);
  EXPECT_EQ(one.half_width, 0.0);
  const SeedSummary three = summarize_seeds({1.0, 2.0, 3.0});
  EXPECT_DOUBLE_EQ(three.mean, 2.0);
  EXPECT_NEAR(three.half_width, 1.96 * 1.0 / std::sqrt(3.0), 1e-12);
  EXPECT_THROW(summarize_seeds({}), std::invalid_argument);
}

TEST(SameMetrics, IgnoresLossDiagnostics) {
  MetricRecord a;
  a.accuracy = 0.5;
  a.auroc = 0.7;
  MetricRecord b = a;
  b.losses.l_total = 42.0;
  EXPECT_TRUE(same_metrics(a, b));
  b.auroc.reset();
  EXPECT_FALSE(same_metrics(a, b));
}

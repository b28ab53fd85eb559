/*
 * Copyright 2026 The speccal Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "speccal/imax.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "gtest/gtest.h"
#include "oracles.h"
#include "speccal/calibrator.h"
#include "speccal/error.h"

namespace speccal {
namespace {

double entropy(double p) {
  return p <= 0.0 || p >= 1.0 ? 0.0 : -(p * std::log(p) + (1 - p) * std::log(1 - p));
}

TEST(MutualInformationTest, MatchesJointTableOracle) {
  std::mt19937_64 gen(1);
  std::normal_distribution<double> normal;
  std::vector<double> s;
  std::vector<std::uint8_t> t;
  for (int i = 0; i < 200; ++i) {
    s.push_back(normal(gen));
    t.push_back(normal(gen) + s.back() > 0.0);
  }
  const std::vector<double> boundaries{-0.5, 0.1, 0.7};
  EXPECT_NEAR(binned_mutual_information(s, t, boundaries),
              testing::reference_mutual_information(s, t, boundaries), 1e-12);
}

TEST(FitMiBinningTest, SeparableDataSaturates) {
  const std::vector<double> s{-3, -2.5, -2, -1, 1, 2, 2.5, 4};
  const std::vector<std::uint8_t> t{0, 0, 0, 0, 1, 1, 1, 1};
  const MiBinning b = fit_mi_binning(s, t, 2);
  ASSERT_EQ(b.boundaries.size(), 1u);
  EXPECT_GT(b.boundaries[0], -1.0);
  EXPECT_LT(b.boundaries[0], 1.0);
  EXPECT_NEAR(b.mutual_information, entropy(0.5), 1e-9);
}

TEST(FitMiBinningTest, MatchesExhaustiveSearchOnThirtySamples) {
  std::mt19937_64 gen(30);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> s;
    std::vector<std::uint8_t> t;
    for (int i = 0; i < 30; ++i) {
      s.push_back(normal(gen));
      t.push_back(normal(gen) + 1.5 * s.back() > 0.3);
    }
    const MiBinning b = fit_mi_binning(s, t, 3);
    EXPECT_NEAR(b.mutual_information, testing::exhaustive_max_mutual_information(s, t, 3), 1e-9)
        << "trial " << trial;
    EXPECT_NEAR(b.mutual_information, testing::reference_mutual_information(s, t, b.boundaries),
                1e-12);
  }
}

TEST(FitMiBinningTest, ConstantTargetsCarryNoInformation) {
  const std::vector<double> s{0.1, 0.5, 0.2, 0.9, 0.3, 0.7, 0.4, 0.8, 0.6};
  const std::vector<std::uint8_t> t(s.size(), 0);
  const MiBinning b = fit_mi_binning(s, t, 3);
  EXPECT_NEAR(b.mutual_information, 0.0, 1e-15);
  // Equal-mass boundaries: three values per bin.
  ASSERT_EQ(b.boundaries.size(), 2u);
  EXPECT_GT(b.boundaries[0], 0.3);
  EXPECT_LT(b.boundaries[0], 0.4);
  EXPECT_GT(b.boundaries[1], 0.6);
  EXPECT_LT(b.boundaries[1], 0.7);
  // Laplace-smoothed rate (0 + 1) / (3 + 2) in every bin.
  for (double r : b.representatives) EXPECT_DOUBLE_EQ(r, 0.2);
}

TEST(FitMiBinningTest, SweepsNeverDecreaseInformation) {
  std::mt19937_64 gen(8);
  std::normal_distribution<double> normal;
  std::vector<double> s;
  std::vector<std::uint8_t> t;
  for (int i = 0; i < 2000; ++i) {
    s.push_back(normal(gen));
    t.push_back(normal(gen) + std::sin(3.0 * s.back()) > 0.0);
  }
  const MiBinning b = fit_mi_binning(s, t, 15);
  ASSERT_GE(b.sweep_history.size(), 2u);
  for (std::size_t i = 1; i < b.sweep_history.size(); ++i) {
    EXPECT_GE(b.sweep_history[i], b.sweep_history[i - 1]);
  }
  EXPECT_DOUBLE_EQ(b.sweep_history.back(), b.mutual_information);
  EXPECT_TRUE(std::is_sorted(b.boundaries.begin(), b.boundaries.end()));
  EXPECT_TRUE(std::is_sorted(b.representatives.begin(), b.representatives.end()));
  for (double r : b.representatives) {
    EXPECT_GT(r, 0.0);
    EXPECT_LT(r, 1.0);
  }
}

TEST(FitMiBinningTest, ReducesBinsWhenScoresRunOut) {
  const std::vector<double> s{1.0, 1.0, 2.0, 2.0, 3.0};
  const std::vector<std::uint8_t> t{0, 1, 0, 1, 1};
  const MiBinning b = fit_mi_binning(s, t, 5);
  EXPECT_TRUE(b.reduced);
  EXPECT_EQ(b.boundaries.size(), 2u);
}

TEST(OneVsRestTest, LogOdds) {
  const std::vector<double> z{1.0, 0.0, -1.0};
  const std::vector<double> s = one_vs_rest_log_odds(z);
  EXPECT_NEAR(s[0], 1.0 - std::log(std::exp(0.0) + std::exp(-1.0)), 1e-12);
  EXPECT_NEAR(s[2], -1.0 - std::log(std::exp(1.0) + std::exp(0.0)), 1e-12);
  // Equivalent to log(p / (1 - p)) of the softmax.
  const ProbVector p = softmax(z);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(s[k], std::log(p[k] / (1.0 - p[k])), 1e-12);
}

IMaxBins hand_bins() {
  IMaxBins bins;
  bins.num_classes = 3;
  bins.requested_bins = 2;
  bins.binning = ImaxBinning::kPerClass;
  bins.classes = {MiBinning{{0.0}, {0.1, 0.8}, 0.0, {}, false},
                  MiBinning{{-1.0}, {0.2, 0.6}, 0.0, {}, false},
                  MiBinning{{1.0}, {0.3, 0.9}, 0.0, {}, false}};
  return bins;
}

TEST(ApplyImaxTest, HandEvaluatedLookups) {
  const IMaxBins bins = hand_bins();
  const std::vector<std::vector<double>> inputs{
      {0.0, 0.0, 0.0}, {3.0, 0.0, -3.0}, {-3.0, 3.0, 0.0}, {0.0, 0.0, 5.0}, {1.0, 1.0, 1.0}};
  for (const auto& z : inputs) {
    const std::vector<double> s = one_vs_rest_log_odds(z);
    double reps[3];
    reps[0] = s[0] >= 0.0 ? 0.8 : 0.1;
    reps[1] = s[1] >= -1.0 ? 0.6 : 0.2;
    reps[2] = s[2] >= 1.0 ? 0.9 : 0.3;
    const double total = reps[0] + reps[1] + reps[2];
    const ProbVector p = apply_imax(bins, z);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(p[k], reps[k] / total, 1e-15);
  }
}

TEST(ApplyImaxTest, EqualRepresentativesGiveUniform) {
  IMaxBins bins = hand_bins();
  for (auto& c : bins.classes) c.representatives = {0.4, 0.4};
  const std::vector<double> z{2.0, -1.0, 0.5};
  const ProbVector p = apply_imax(bins, z);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(p[k], 1.0 / 3.0, 1e-15);
}

TEST(ApplyImaxTest, RejectsNonFiniteInput) {
  const std::vector<double> z{std::nan(""), 0.0, 0.0};
  try {
    apply_imax(hand_bins(), z, "roi-7");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("roi-7"), std::string::npos);
  }
}

TEST(FitImaxTest, PiecewiseConstantOnValidationBins) {
  for (ImaxBinning mode : {ImaxBinning::kShared, ImaxBinning::kPerClass}) {
    const LogitDataset val = testing::synthetic_logits(600, 4, 2.0, 2.0, 17);
    const IMaxBins bins = fit_imax(val, 15, mode);
    ASSERT_EQ(bins.classes.size(), 4u);
    // Nudging every logit by far less than the bin widths keeps each class in
    // its bin, so the output must not change.
    const std::vector<double>& z = val.records[3].logits;
    std::vector<double> nudged(z);
    const std::vector<double> s = one_vs_rest_log_odds(z);
    bool near_edge = false;
    for (int k = 0; k < 4; ++k) {
      for (double b : bins.classes[k].boundaries) near_edge |= std::abs(b - s[k]) < 1e-6;
    }
    if (near_edge) continue;
    for (auto& v : nudged) v += 1e-9;
    EXPECT_EQ(apply_imax(bins, nudged), apply_imax(bins, z));
    if (mode == ImaxBinning::kShared) {
      for (int k = 1; k < 4; ++k) EXPECT_EQ(bins.classes[k], bins.classes[0]);
    }
  }
}

TEST(FitImaxTest, SmallClassGetsReducedBinsAndWarning) {
  LogitDataset val = testing::synthetic_logits(6, 2, 1.0, 1.0, 3);
  for (auto& r : val.records) r.logits = {0.5, 0.0};
  val.records[0].logits = {1.0, 0.0};
  val.records[0].label = 0;
  val.records[1].label = 1;
  const IMaxBins bins = fit_imax(val, 15, ImaxBinning::kPerClass);
  EXPECT_FALSE(bins.warnings.empty());
  for (const auto& c : bins.classes) EXPECT_TRUE(c.reduced);
}

TEST(ImaxBinningTest, NamesRoundTrip) {
  for (ImaxBinning m : {ImaxBinning::kShared, ImaxBinning::kPerClass}) {
    EXPECT_EQ(parse_imax_binning(to_string(m)), m);
  }
  EXPECT_THROW(parse_imax_binning("global"), ValidationError);
}

}  // namespace
}  // namespace speccal

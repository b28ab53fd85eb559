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

#include "speccal/gp_scaling.h"

#include <cmath>
#include <vector>

#include "gtest/gtest.h"
#include "oracles.h"
#include "speccal/calibrator.h"
#include "speccal/error.h"
#include "speccal/temperature.h"

namespace speccal {
namespace {

TEST(GpScalingTest, PriorOnlyMapIsSoftmaxInExpectation) {
  const LogitDataset val = testing::synthetic_logits(300, 4, 2.0, 1.0, 5);
  GpFitOptions opts;
  opts.steps = 0;
  GpFitDiagnostics diag;
  GpScalingMap map = fit_gp_scaling(val, opts, &diag);
  EXPECT_TRUE(diag.warnings.empty());
  map.samples = 1000;
  for (std::size_t i = 0; i < 20; ++i) {
    const auto& z = val.records[i].logits;
    const ProbVector p = apply_gp_scaling(map, z);
    const ProbVector q = softmax(z);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(p[k], q[k], 0.01);
  }
}

TEST(GpScalingTest, MatchesTemperatureSolutionOnScaledLogits) {
  const LogitDataset val = testing::synthetic_logits(1500, 5, 2.0, 3.0, 202);
  const double ts_nll = temperature_nll(val, fit_temperature(val).temperature);
  GpFitDiagnostics diag;
  const GpScalingMap map = fit_gp_scaling(val, {}, &diag);
  EXPECT_LE(diag.best_nll, ts_nll * 1.02);
  EXPECT_LE(diag.best_nll, ts_nll + 1e-3);
  EXPECT_LT(diag.best_nll, diag.initial_nll);
}

TEST(GpScalingTest, PreservesArgmax) {
  const LogitDataset val = testing::synthetic_logits(400, 6, 2.5, 2.0, 31);
  GpFitOptions opts;
  opts.steps = 300;
  const GpScalingMap map = fit_gp_scaling(val, opts);
  const LogitDataset probe = testing::synthetic_logits(2000, 6, 6.0, 1.0, 32);
  for (const auto& r : probe.records) {
    EXPECT_EQ(apply_gp_scaling(map, r.logits).argmax(), argmax(r.logits));
  }
}

TEST(GpScalingTest, MeanFunctionIsStrictlyIncreasing) {
  const LogitDataset val = testing::synthetic_logits(400, 3, 2.0, 2.0, 2);
  GpFitOptions opts;
  opts.steps = 200;
  const GpScalingMap map = fit_gp_scaling(val, opts);
  double prev = gp_mean_function(map, -10.0);
  for (double u = -9.9; u <= 10.0; u += 0.1) {
    const double g = gp_mean_function(map, u);
    EXPECT_GT(g, prev);
    prev = g;
  }
}

TEST(GpScalingTest, DegeneratePosteriorIsDeterministicSinglePass) {
  const LogitDataset val = testing::synthetic_logits(200, 3, 2.0, 2.0, 9);
  GpFitOptions opts;
  opts.steps = 100;
  GpScalingMap map = fit_gp_scaling(val, opts);
  map.samples = 1;
  std::fill(map.variance.begin(), map.variance.end(), 0.0);
  const std::vector<double> z{1.0, -0.5, 0.3};
  const ProbVector p = apply_gp_scaling(map, z);
  std::vector<double> g(3);
  for (int k = 0; k < 3; ++k) {
    g[k] = map.logit_scale * gp_mean_function(map, (z[k] - map.logit_mean) / map.logit_scale);
  }
  const ProbVector q = softmax(g);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(p[k], q[k], 1e-12);
  map.seed ^= 0xabc;
  EXPECT_EQ(apply_gp_scaling(map, z), p);
}

TEST(GpScalingTest, FitIsDeterministic) {
  const LogitDataset val = testing::synthetic_logits(200, 3, 2.0, 2.0, 9);
  GpFitOptions opts;
  opts.steps = 100;
  EXPECT_EQ(fit_gp_scaling(val, opts), fit_gp_scaling(val, opts));
}

TEST(GpScalingTest, WarnsWhenBudgetRunsOut) {
  const LogitDataset val = testing::synthetic_logits(300, 3, 2.0, 3.0, 4);
  GpFitOptions opts;
  opts.steps = 5;
  opts.eval_every = 1;
  GpFitDiagnostics diag;
  fit_gp_scaling(val, opts, &diag);
  EXPECT_FALSE(diag.converged);
  EXPECT_FALSE(diag.warnings.empty());
}

TEST(GpScalingTest, RejectsTooFewDistinctLogits) {
  LogitDataset val = testing::synthetic_logits(3, 2, 1.0, 1.0, 1);
  val.records[0].label = 0;
  val.records[1].label = 1;
  EXPECT_THROW(fit_gp_scaling(val), ValidationError);
  EXPECT_THROW(fit_gp_scaling(testing::synthetic_logits(50, 3, 1.0, 1.0, 1,
                                                       SplitTag::env2_test())),
               ProtocolError);
}

}  // namespace
}  // namespace speccal

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

#include "speccal/temperature.h"

#include <cmath>
#include <vector>

#include "gtest/gtest.h"
#include "oracles.h"
#include "speccal/calibrator.h"
#include "speccal/error.h"

namespace speccal {
namespace {

TEST(FitTemperatureTest, CalibratedLogitsGiveUnitTemperature) {
  const LogitDataset ds = testing::synthetic_logits(4000, 5, 2.0, 1.0, 101);
  const double t = fit_temperature(ds).temperature;
  EXPECT_NEAR(t, 1.0, 0.1);
  EXPECT_NEAR(t, testing::grid_search_temperature(ds), 2e-3 * t);
}

TEST(FitTemperatureTest, RecoversInjectedScale) {
  const LogitDataset ds = testing::synthetic_logits(4000, 5, 2.0, 3.0, 202);
  const double t = fit_temperature(ds).temperature;
  EXPECT_NEAR(t, 3.0, 0.3);
  EXPECT_NEAR(t, testing::grid_search_temperature(ds), 2e-3 * t);
}

TEST(FitTemperatureTest, NeverWorseThanIdentity) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const LogitDataset ds = testing::synthetic_logits(50, 3, 1.5, 0.5 + 0.4 * seed, seed);
    const double t = fit_temperature(ds).temperature;
    EXPECT_LE(temperature_nll(ds, t), temperature_nll(ds, 1.0) + 1e-15);
    EXPECT_NEAR(temperature_nll(ds, t), testing::reference_temperature_nll(ds, t), 1e-12);
  }
}

TEST(FitTemperatureTest, RejectsSingleClassAndWrongSplit) {
  LogitDataset ds = testing::synthetic_logits(30, 3, 1.0, 1.0, 4);
  LogitDataset single = ds;
  for (auto& r : single.records) r.label = 1;
  EXPECT_THROW(fit_temperature(single), ValidationError);

  LogitDataset test = ds;
  test.split = SplitTag::env1_test();
  EXPECT_THROW(fit_temperature(test), ProtocolError);
  LogitDataset corrupted = ds;
  corrupted.split = SplitTag::corrupted("speckle", 1);
  EXPECT_THROW(fit_temperature(corrupted), ProtocolError);
  EXPECT_THROW(fit_temperature(LogitDataset{}), ProtocolError);
}

TEST(ApplyTemperatureTest, ClosedForm) {
  const std::vector<double> z{2.0, 0.0};
  const ProbVector p = apply_temperature({2.0}, z);
  EXPECT_NEAR(p[0], 0.73106, 1e-5);
  EXPECT_NEAR(p[1], 0.26894, 1e-5);
}

TEST(ApplyTemperatureTest, UnitTemperatureIsSoftmax) {
  const std::vector<double> z{0.3, -1.2, 4.0, 0.0};
  EXPECT_EQ(apply_temperature({1.0}, z), softmax(z));
}

TEST(ApplyTemperatureTest, HighTemperatureApproachesUniform) {
  const std::vector<double> z{5.0, -3.0, 1.0, 0.0, 2.0};
  const ProbVector p = apply_temperature({1e4}, z);
  for (std::size_t k = 0; k < p.size(); ++k) EXPECT_NEAR(p[k], 0.2, 1e-3);
}

TEST(ApplyTemperatureTest, RejectsNonPositiveTemperature) {
  const std::vector<double> z{1.0, 0.0};
  EXPECT_THROW(apply_temperature({0.0}, z), ValidationError);
  EXPECT_THROW(apply_temperature({-1.0}, z), ValidationError);
}

}  // namespace
}  // namespace speccal

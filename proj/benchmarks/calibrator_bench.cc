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

#include <random>
#include <vector>

#include "benchmark/benchmark.h"
#include "speccal/gp_scaling.h"
#include "speccal/imax.h"
#include "speccal/temperature.h"

namespace speccal {
namespace {

LogitDataset random_validation(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal(0.0, 3.0);
  LogitDataset ds;
  ds.split = SplitTag::env1_valid();
  ds.num_classes = 7;
  for (std::size_t i = 0; i < n; ++i) {
    LogitRecord r;
    r.sample_id = "v" + std::to_string(i);
    r.logits.resize(7);
    for (double& z : r.logits) z = normal(gen);
    r.label = argmax(r.logits);
    if (i % 5 == 0) r.label = static_cast<int>(i / 5 % 7);
    ds.records.push_back(std::move(r));
  }
  return ds;
}

std::vector<std::vector<double>> random_logits(std::size_t n) {
  std::mt19937_64 gen(99);
  std::normal_distribution<double> normal(0.0, 3.0);
  std::vector<std::vector<double>> out(n, std::vector<double>(7));
  for (auto& z : out) {
    for (double& v : z) v = normal(gen);
  }
  return out;
}

void apply_all(benchmark::State& state, const Calibrator& cal) {
  const auto inputs = random_logits(1024);
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(cal.apply(inputs[i++ % inputs.size()]));
  }
  state.SetItemsProcessed(state.iterations());
}

void BM_ApplyTemperature(benchmark::State& state) {
  const TemperatureScaling ts(fit_temperature(random_validation(600, 1)), 7);
  apply_all(state, ts);
}
BENCHMARK(BM_ApplyTemperature);

void BM_ApplyImax(benchmark::State& state) {
  const ImaxCalibrator imax(fit_imax(random_validation(600, 2)));
  apply_all(state, imax);
}
BENCHMARK(BM_ApplyImax);

void BM_ApplyGp(benchmark::State& state) {
  GpFitOptions opts;
  opts.steps = 200;
  const GpScaling gp(fit_gp_scaling(random_validation(600, 3), opts));
  apply_all(state, gp);
}
BENCHMARK(BM_ApplyGp);

void BM_FitImax(benchmark::State& state) {
  const LogitDataset valid = random_validation(static_cast<std::size_t>(state.range(0)), 4);
  for (auto _ : state) benchmark::DoNotOptimize(fit_imax(valid));
}
BENCHMARK(BM_FitImax)->Arg(600)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_FitTemperature(benchmark::State& state) {
  const LogitDataset valid = random_validation(600, 5);
  for (auto _ : state) benchmark::DoNotOptimize(fit_temperature(valid));
}
BENCHMARK(BM_FitTemperature)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace speccal

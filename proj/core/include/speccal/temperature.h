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

#ifndef SPECCAL_TEMPERATURE_H_
#define SPECCAL_TEMPERATURE_H_

#include <span>

#include "speccal/calibrator.h"
#include "speccal/types.h"

namespace speccal {

struct TemperatureParam {
  double temperature = 1.0;

  friend bool operator==(const TemperatureParam&, const TemperatureParam&) = default;
};

struct TemperatureFitOptions {
  double min_temperature = 0.05;
  double max_temperature = 20.0;
  double log_tolerance = 1e-4;
};

// Mean validation NLL of softmax(z / T), computed with a log-sum-exp.
double temperature_nll(const LogitDataset& dataset, double temperature);

// Golden-section search on log T. The result never has a worse NLL than
// T = 1. Requires an Env1-Valid dataset with in-distribution labels from at
// least two classes.
TemperatureParam fit_temperature(const LogitDataset& validation,
                                 const TemperatureFitOptions& options = {});

ProbVector apply_temperature(const TemperatureParam& param, std::span<const double> logits);

class TemperatureScaling final : public Calibrator {
 public:
  TemperatureScaling(TemperatureParam param, int num_classes);

  std::string kind() const override { return "ts"; }
  int num_classes() const override { return num_classes_; }
  ProbVector apply(std::span<const double> logits) const override {
    return apply_temperature(param_, logits);
  }
  std::string to_json() const override;

  const TemperatureParam& param() const { return param_; }

 private:
  TemperatureParam param_;
  int num_classes_;
};

}  // namespace speccal

#endif  // SPECCAL_TEMPERATURE_H_

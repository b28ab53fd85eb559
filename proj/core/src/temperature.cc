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

#include <algorithm>
#include <cmath>
#include <set>

#include "json.hpp"

namespace speccal {

double temperature_nll(const LogitDataset& dataset, double temperature) {
  double total = 0.0;
  for (const auto& r : dataset.records) {
    double m = *std::max_element(r.logits.begin(), r.logits.end()) / temperature;
    double sum = 0.0;
    for (double z : r.logits) sum += std::exp(z / temperature - m);
    total += m + std::log(sum) - r.logits[r.label] / temperature;
  }
  return total / static_cast<double>(dataset.records.size());
}

TemperatureParam fit_temperature(const LogitDataset& validation,
                                 const TemperatureFitOptions& options) {
  require_fit_split(validation, "temperature scaling");
  std::set<int> classes;
  for (const auto& r : validation.records) classes.insert(r.label);
  if (classes.size() < 2) {
    throw ValidationError("temperature scaling needs labels from at least two classes");
  }

  auto f = [&](double log_t) { return temperature_nll(validation, std::exp(log_t)); };
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = std::log(options.min_temperature);
  double b = std::log(options.max_temperature);
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > options.log_tolerance) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  const double log_t = 0.5 * (a + b);
  TemperatureParam p{std::exp(log_t)};
  if (temperature_nll(validation, 1.0) < f(log_t)) p.temperature = 1.0;
  return p;
}

ProbVector apply_temperature(const TemperatureParam& param, std::span<const double> logits) {
  if (!(param.temperature > 0.0) || !std::isfinite(param.temperature)) {
    throw ValidationError("temperature must be positive and finite");
  }
  std::vector<double> scaled(logits.begin(), logits.end());
  for (double& z : scaled) z /= param.temperature;
  return softmax(scaled);
}

TemperatureScaling::TemperatureScaling(TemperatureParam param, int num_classes)
    : param_(param), num_classes_(num_classes) {
  if (!(param_.temperature > 0.0) || !std::isfinite(param_.temperature)) {
    throw ValidationError("temperature must be positive and finite");
  }
}

std::string TemperatureScaling::to_json() const {
  nlohmann::ordered_json j;
  j["kind"] = kind();
  j["K"] = num_classes_;
  j["fit_split"] = fit_split().to_string();
  j["T"] = param_.temperature;
  return j.dump(2);
}

}  // namespace speccal

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

#ifndef SPECCAL_GP_SCALING_H_
#define SPECCAL_GP_SCALING_H_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "speccal/calibrator.h"
#include "speccal/types.h"

namespace speccal {

// Monotone latent scaling map g shared by all classes. Logits are
// standardized as u = (z - logit_mean) / logit_scale; g is piecewise linear
// through the knot values and continues with slope 1 outside the knots. The
// calibrated logit of class k is logit_scale * g(u_k).
//
// The knot values have a mean-field Gaussian posterior N(mean, variance). The
// GP prior has mean g(u) = u and an RBF kernel.
struct GpScalingMap {
  int num_classes = kDefaultNumClasses;
  double logit_mean = 0.0;
  double logit_scale = 1.0;
  std::vector<double> knots;  // strictly increasing, equally spaced
  std::vector<double> mean;
  std::vector<double> variance;
  double length_scale = 1.0;
  double signal_variance = 1.0;
  int samples = 30;
  std::uint64_t seed = 0;
  // Sampled knot vectors are sorted and then forced to rise by at least
  // min_slope * knot spacing per knot, so g is strictly increasing.
  double min_slope = 1e-3;

  friend bool operator==(const GpScalingMap&, const GpScalingMap&) = default;
};

struct GpFitOptions {
  int knots = 20;
  int samples = 30;
  int steps = 2000;
  double step_size = 1e-2;
  std::uint64_t seed = 0x5eed;
  // Both in standardized-logit units; length_scale <= 0 means
  // "a quarter of the knot span".
  double length_scale = 0.0;
  double signal_variance = 1.0;
  double initial_stddev = 0.01;
  int eval_every = 50;
};

struct GpFitDiagnostics {
  int steps_run = 0;
  bool converged = false;
  double initial_nll = 0.0;
  double best_nll = 0.0;  // validation NLL of the returned map
  int best_step = 0;
  std::vector<std::string> warnings;
};

// Minimizes the Monte-Carlo validation NLL of the mean-of-S softmax plus the
// KL divergence to the GP prior, with Adam on (mean, log stddev). Returns the
// iterate with the lowest validation NLL; warns if the step budget runs out
// before the NLL stalls. With steps == 0 the result is the initialization
// (prior mean, small variance).
GpScalingMap fit_gp_scaling(const LogitDataset& validation, const GpFitOptions& options = {},
                            GpFitDiagnostics* diagnostics = nullptr);

// Averages softmax over `map.samples` monotone posterior draws. The draws come
// from a stream seeded by `map.seed`, so the output is deterministic.
ProbVector apply_gp_scaling(const GpScalingMap& map, std::span<const double> logits);

// Deterministic g at the posterior mean (no sampling); exposed for tests.
double gp_mean_function(const GpScalingMap& map, double standardized_logit);

class GpScaling final : public Calibrator {
 public:
  explicit GpScaling(GpScalingMap map);

  std::string kind() const override { return "gp"; }
  int num_classes() const override { return map_.num_classes; }
  ProbVector apply(std::span<const double> logits) const override {
    return apply_gp_scaling(map_, logits);
  }
  std::string to_json() const override;

  const GpScalingMap& map() const { return map_; }

 private:
  GpScalingMap map_;
};

}  // namespace speccal

#endif  // SPECCAL_GP_SCALING_H_

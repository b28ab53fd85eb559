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

#ifndef SPECCAL_IMAX_H_
#define SPECCAL_IMAX_H_

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "speccal/calibrator.h"
#include "speccal/types.h"

namespace speccal {

inline constexpr int kDefaultImaxBins = 15;

// Binning of a scalar score against a binary target. `boundaries` split the
// score axis into boundaries.size() + 1 bins: a score s falls into bin
// #{b : boundaries[b] <= s}.
struct MiBinning {
  std::vector<double> boundaries;       // strictly increasing
  std::vector<double> representatives;  // in (0, 1), non-decreasing
  double mutual_information = 0.0;      // nats, achieved on the fitting data
  // I after the equal-mass initialization followed by I after each sweep.
  std::vector<double> sweep_history;
  bool reduced = false;  // fewer distinct scores than requested bins

  friend bool operator==(const MiBinning&, const MiBinning&) = default;
};

// Empirical mutual information (nats) between bin(score) and target.
double binned_mutual_information(std::span<const double> scores,
                                 std::span<const std::uint8_t> targets,
                                 std::span<const double> boundaries);

// Coordinate ascent on the MI objective. Boundaries start at equal-mass
// quantiles; each sweep moves one boundary at a time to the midpoint between
// adjacent distinct scores (inside its neighbours) that maximizes I. Stops
// when a sweep gains < 1e-8 nats or after 200 sweeps. If at most 3000 cuts
// separate samples of different targets, an exact dynamic program over those
// cuts then replaces the ascent result whenever it achieves a higher I (and
// appends that I to sweep_history). Representatives are
// Laplace-smoothed positive rates, made monotone by pooling adjacent
// violators.
MiBinning fit_mi_binning(std::span<const double> scores, std::span<const std::uint8_t> targets,
                         int num_bins);

// s_k = z_k - log sum_{j != k} exp(z_j) for every class k.
std::vector<double> one_vs_rest_log_odds(std::span<const double> logits);

// kShared fits one binning on the one-vs-rest scores of all classes pooled
// together (K times the data per bin) and uses it for every class;
// kPerClass fits each class on its own scores.
enum class ImaxBinning { kShared, kPerClass };

std::string to_string(ImaxBinning binning);
ImaxBinning parse_imax_binning(std::string_view name);

struct IMaxBins {
  int num_classes = kDefaultNumClasses;
  int requested_bins = kDefaultImaxBins;
  ImaxBinning binning = ImaxBinning::kShared;
  std::vector<MiBinning> classes;  // one per class, one-vs-rest
  std::vector<std::string> warnings;
};

IMaxBins fit_imax(const LogitDataset& validation, int num_bins = kDefaultImaxBins,
                  ImaxBinning binning = ImaxBinning::kShared);

// Looks up each class's bin representative and renormalizes to sum to one.
ProbVector apply_imax(const IMaxBins& bins, std::span<const double> logits,
                      std::string_view sample_id = {});

class ImaxCalibrator final : public Calibrator {
 public:
  explicit ImaxCalibrator(IMaxBins bins);

  std::string kind() const override { return "imax"; }
  int num_classes() const override { return bins_.num_classes; }
  ProbVector apply(std::span<const double> logits) const override {
    return apply_imax(bins_, logits);
  }
  // The per-sweep history is a fit diagnostic and is not serialized.
  std::string to_json() const override;

  const IMaxBins& bins() const { return bins_; }

 private:
  IMaxBins bins_;
};

}  // namespace speccal

#endif  // SPECCAL_IMAX_H_

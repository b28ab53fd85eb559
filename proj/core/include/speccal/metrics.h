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

#ifndef SPECCAL_METRICS_H_
#define SPECCAL_METRICS_H_

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "speccal/calibrator.h"
#include "speccal/types.h"

namespace speccal {

inline constexpr int kDefaultEceBins = 15;
inline constexpr double kHistogramWidth = 0.02;

// Sorted-index ranges of equal-mass bins: bin r (0-based) covers
// [floor(r*N/B), floor((r+1)*N/B)). Sizes differ by at most one.
// Throws ValidationError if N == 0, B < 1 or B > N.
std::vector<std::size_t> equal_mass_edges(std::size_t n, int num_bins);

struct ReliabilityBin {
  double confidence = 0.0;  // mean confidence of the bin
  double accuracy = 0.0;    // fraction correct
  std::size_t count = 0;
};

struct ReliabilityCurve {
  std::vector<ReliabilityBin> bins;
  std::size_t total = 0;
};

// Equal-mass reliability curve. Samples are ordered by confidence; ties are
// broken by `tie_keys` when given (sample ids) and by input position
// otherwise.
ReliabilityCurve reliability_curve(std::span<const double> confidences,
                                   std::span<const std::uint8_t> correct, int num_bins,
                                   std::span<const std::string> tie_keys = {});
ReliabilityCurve reliability_curve(std::span<const ProbVector> probs,
                                   std::span<const int> labels, int num_bins);

// sum_b (N_b / N) |accuracy(b) - confidence(b)|.
double ece_from_curve(const ReliabilityCurve& curve);

// Top-1 ECE with equal-mass bins. Labels must be in-distribution.
double compute_ece(std::span<const ProbVector> probs, std::span<const int> labels,
                   int num_bins = kDefaultEceBins);

// Mean maximal confidence. Throws on an empty set.
double compute_mmc(std::span<const ProbVector> probs);

double compute_accuracy(std::span<const ProbVector> probs, std::span<const int> labels);

// Mean negative log-likelihood of the true class; probabilities are floored
// at 1e-300 so a hard zero yields a large finite penalty.
double compute_nll(std::span<const ProbVector> probs, std::span<const int> labels);

// Indices into the input, partitioned by prediction outcome. OOD-labelled
// samples go to `ood` regardless of prediction.
struct CorrectnessSplit {
  std::vector<std::size_t> correct;
  std::vector<std::size_t> incorrect;
  std::vector<std::size_t> ood;
};

CorrectnessSplit split_by_correctness(std::span<const int> labels,
                                      std::span<const ProbVector> probs);

// Fixed-width confidence histogram on [1/K, 1].
struct ConfidenceHistogram {
  double lower = 0.0;
  double width = kHistogramWidth;
  std::vector<std::size_t> counts;
  std::vector<std::size_t> correct;  // correct predictions per bin

  double center(std::size_t b) const { return lower + (static_cast<double>(b) + 0.5) * width; }
};

ConfidenceHistogram confidence_histogram(std::span<const double> confidences,
                                         std::span<const std::uint8_t> correct, int num_classes,
                                         double width = kHistogramWidth);

struct Stat {
  double mean = 0.0;
  double std = 0.0;  // sample (N-1) estimator; 0 for a single value
};

Stat mean_std(std::span<const double> values);

struct SeedMetrics {
  int seed_id = 0;
  std::size_t in_distribution = 0;
  std::size_t out_of_distribution = 0;
  std::optional<double> accuracy;
  std::optional<double> ece;
  std::optional<double> nll;
  std::optional<double> mmc_all;
  std::optional<double> mmc_correct;
  std::optional<double> mmc_incorrect;
  std::optional<double> mmc_ood;
};

struct EvalReport {
  std::string split;
  std::string method;
  int num_classes = kDefaultNumClasses;
  int num_bins = kDefaultEceBins;
  std::vector<SeedMetrics> per_seed;  // ascending seed_id

  // Aggregates over the seeds that have the value.
  std::optional<Stat> accuracy;
  std::optional<Stat> ece;
  std::optional<Stat> nll;
  std::optional<Stat> mmc_all;
  std::optional<Stat> mmc_correct;
  std::optional<Stat> mmc_incorrect;
  std::optional<Stat> mmc_ood;

  // Pooled over all seeds.
  std::optional<ReliabilityCurve> curve;
  ConfidenceHistogram hist_correct;
  ConfidenceHistogram hist_incorrect;
  ConfidenceHistogram hist_ood;
};

struct EvalOptions {
  int num_bins = kDefaultEceBins;
  std::string method = "baseline";
};

// Applies softmax (or the calibrator) to every record and fills every
// EvalReport field, per seed and aggregated. Throws ValidationError when the
// calibrator was fitted for a different K.
EvalReport evaluate(const LogitDataset& dataset, const Calibrator* calibrator = nullptr,
                    const EvalOptions& options = {});

// As above with one calibrator per seed_id; every seed in the dataset needs
// an entry.
EvalReport evaluate(const LogitDataset& dataset,
                    const std::map<int, const Calibrator*>& per_seed,
                    const EvalOptions& options = {});

// Canonical key order, values rounded to 6 decimal places.
std::string to_json(const EvalReport& report);

// `bin_index,confidence,accuracy,count`.
void write_curve_csv(std::ostream& out, const ReliabilityCurve& curve);
// Same schema; confidence is the bin center, accuracy the fraction correct.
void write_histogram_csv(std::ostream& out, const ConfidenceHistogram& hist);

// "Acc ± std | ECE ± std | MMC_incorrect ± std", e.g.
// "81.67 ± 0.22 | 0.117 ± 0.04 | 0.82 ± 0.08". Missing values print as "-".
std::string format_table_cells(const EvalReport& report);

}  // namespace speccal

#endif  // SPECCAL_METRICS_H_

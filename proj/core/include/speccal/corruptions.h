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

#ifndef SPECCAL_CORRUPTIONS_H_
#define SPECCAL_CORRUPTIONS_H_

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "speccal/calibrator.h"
#include "speccal/classifier.h"
#include "speccal/spectra_sim.h"

namespace speccal {

enum class CorruptionKind {
  kAdditiveNoise,
  kSpeckle,
  kRangeSmear,
  kAzimuthSmear,
  kAttenuation,
  kBinDropout,
  kGhostTarget,
};

inline constexpr int kMaxSeverity = 3;

// "additive-noise", "speckle", "range-smear", "azimuth-smear",
// "attenuation", "bin-dropout", "ghost-target".
std::string to_string(CorruptionKind kind);
// Throws ValidationError on an unknown name.
CorruptionKind parse_corruption_kind(std::string_view name);
const std::vector<CorruptionKind>& all_corruption_kinds();

// Magnitudes per severity (index 0 is the identity):
//   additive-noise  mean power of added exponential noise, dB  {-, -3, 1, 5}
//   speckle         std of log-normal gain, dB                 {0, 2, 4, 7}
//   range-smear     Gaussian sigma, range bins                 {0, 0.75, 1.5, 3}
//   azimuth-smear   Gaussian sigma, azimuth bins               {0, 0.75, 1.5, 3}
//   attenuation     power loss, dB                             {0, 3, 6, 12}
//   bin-dropout     fraction of cells forced to the dB floor   {0, .05, .15, .30}
//   ghost-target    {count, power relative to the ROI peak dB} {0,-inf} {1,-20} {2,-12} {4,-6}
// Each returned vector is ordered so that severity s+1 dominates s
// component-wise.
std::vector<double> corruption_parameters(CorruptionKind kind, int severity);

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::kAdditiveNoise;
  int severity = 1;  // 0 (identity) .. 3
  std::uint64_t seed = 0;
};

// Applies the operator in linear power, converts back to dB and clamps to
// [kMinDb, kMaxDb]. Random draws depend on the seed but not the severity, so
// higher severities distort the same ROI strictly more. Severity 0 returns
// the input unchanged.
SpectrumROI corrupt(const SpectrumROI& roi, const CorruptionSpec& spec);

// Corrupts every ROI with a per-ROI seed derived from `seed`, the kind and
// the ROI's scene and frame; the result is tagged Corrupted(kind,severity).
RoiDataset corrupt_dataset(const RoiDataset& data, CorruptionKind kind, int severity,
                           std::uint64_t seed);

// One calibration method evaluated across seeds. A missing calibrator (or
// nullptr) means plain softmax.
struct SweepMethod {
  std::string name;
  std::map<int, const Calibrator*> per_seed;
};

struct SweepRow {
  std::string kind;  // a corruption kind, or "all" for the per-severity average
  int severity = 0;
  std::string method;
  double accuracy = 0.0;
  double ece = 0.0;
  std::optional<double> mmc_incorrect;  // absent when nothing was misclassified
};

struct SweepOptions {
  std::vector<CorruptionKind> kinds = all_corruption_kinds();
  int num_bins = 15;
  std::uint64_t seed = 0;
};

// For each kind and severity 1..3: corrupts `test`, predicts logits with
// every model and evaluates every method (metrics averaged over seeds).
// Then appends, per severity and method, the average over kinds with
// kind "all". Rows are sorted by severity, then kind, then method order.
// Throws ProtocolError if a calibrator was not fitted on clean Env1-Valid or
// if `test` is not a test split.
std::vector<SweepRow> severity_sweep(std::span<const TrainedModel> models, const RoiDataset& test,
                                     std::span<const SweepMethod> methods,
                                     const SweepOptions& options = {});

// `kind,severity,method,accuracy,ece,mmc_incorrect`.
void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows);

}  // namespace speccal

#endif  // SPECCAL_CORRUPTIONS_H_

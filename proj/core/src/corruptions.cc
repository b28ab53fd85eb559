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

#include "speccal/corruptions.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "speccal/error.h"
#include "speccal/logit_io.h"
#include "speccal/metrics.h"
#include "speccal/random.h"

namespace speccal {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct KindInfo {
  CorruptionKind kind;
  const char* name;
};

constexpr std::array<KindInfo, 7> kKinds = {{
    {CorruptionKind::kAdditiveNoise, "additive-noise"},
    {CorruptionKind::kSpeckle, "speckle"},
    {CorruptionKind::kRangeSmear, "range-smear"},
    {CorruptionKind::kAzimuthSmear, "azimuth-smear"},
    {CorruptionKind::kAttenuation, "attenuation"},
    {CorruptionKind::kBinDropout, "bin-dropout"},
    {CorruptionKind::kGhostTarget, "ghost-target"},
}};

constexpr int kMaxGhosts = 4;

double to_power(float db) { return std::pow(10.0, static_cast<double>(db) / 10.0); }

float to_db(double power) {
  const double db = power > 0.0 ? 10.0 * std::log10(power) : kMinDb;
  return static_cast<float>(std::clamp(db, kMinDb, kMaxDb));
}

// Gaussian blur along one axis with the kernel renormalized over in-bounds
// taps, so edges are not darkened.
void smear(std::vector<double>& power, int height, int width, double sigma, bool along_range) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  for (int t = -radius; t <= radius; ++t) kernel[t + radius] = std::exp(-0.5 * t * t / (sigma * sigma));
  std::vector<double> out(power.size());
  const int len = along_range ? height : width;
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const int pos = along_range ? r : c;
      double acc = 0.0, norm = 0.0;
      for (int t = -radius; t <= radius; ++t) {
        const int q = pos + t;
        if (q < 0 || q >= len) continue;
        const int rr = along_range ? q : r;
        const int cc = along_range ? c : q;
        acc += kernel[t + radius] * power[static_cast<std::size_t>(rr) * width + cc];
        norm += kernel[t + radius];
      }
      out[static_cast<std::size_t>(r) * width + c] = acc / norm;
    }
  }
  power.swap(out);
}

void check_severity(int severity) {
  if (severity < 0 || severity > kMaxSeverity) {
    throw ValidationError("severity must be in 0.." + std::to_string(kMaxSeverity) + ", got " +
                          std::to_string(severity));
  }
}

}  // namespace

std::string to_string(CorruptionKind kind) {
  for (const auto& k : kKinds) {
    if (k.kind == kind) return k.name;
  }
  throw ValidationError("unknown corruption kind");
}

CorruptionKind parse_corruption_kind(std::string_view name) {
  for (const auto& k : kKinds) {
    if (name == k.name) return k.kind;
  }
  throw ValidationError("unknown corruption kind '" + std::string(name) + "'");
}

const std::vector<CorruptionKind>& all_corruption_kinds() {
  static const std::vector<CorruptionKind> kinds = [] {
    std::vector<CorruptionKind> v;
    for (const auto& k : kKinds) v.push_back(k.kind);
    return v;
  }();
  return kinds;
}

std::vector<double> corruption_parameters(CorruptionKind kind, int severity) {
  check_severity(severity);
  const int s = severity;
  switch (kind) {
    case CorruptionKind::kAdditiveNoise: {
      constexpr double kDb[] = {-kInf, -3.0, 1.0, 5.0};
      return {kDb[s]};
    }
    case CorruptionKind::kSpeckle: {
      constexpr double kDb[] = {0.0, 2.0, 4.0, 7.0};
      return {kDb[s]};
    }
    case CorruptionKind::kRangeSmear:
    case CorruptionKind::kAzimuthSmear: {
      constexpr double kSigma[] = {0.0, 0.75, 1.5, 3.0};
      return {kSigma[s]};
    }
    case CorruptionKind::kAttenuation: {
      constexpr double kDb[] = {0.0, 3.0, 6.0, 12.0};
      return {kDb[s]};
    }
    case CorruptionKind::kBinDropout: {
      constexpr double kFraction[] = {0.0, 0.05, 0.15, 0.30};
      return {kFraction[s]};
    }
    case CorruptionKind::kGhostTarget: {
      constexpr double kCount[] = {0, 1, 2, 4};
      constexpr double kRelDb[] = {-kInf, -20.0, -12.0, -6.0};
      return {kCount[s], kRelDb[s]};
    }
  }
  throw ValidationError("unknown corruption kind");
}

SpectrumROI corrupt(const SpectrumROI& roi, const CorruptionSpec& spec) {
  const std::vector<double> params = corruption_parameters(spec.kind, spec.severity);
  if (spec.severity == 0) return roi;
  const std::size_t cells = static_cast<std::size_t>(roi.height) * roi.width;
  if (roi.height < 1 || roi.width < 1 || roi.magnitude_db.size() != cells) {
    throw ValidationError("ROI " + roi.sample_id() + " has inconsistent shape");
  }
  SpectrumROI out = roi;
  std::vector<double> power(cells);
  for (std::size_t i = 0; i < cells; ++i) power[i] = to_power(roi.magnitude_db[i]);
  Rng rng(spec.seed);

  switch (spec.kind) {
    case CorruptionKind::kAdditiveNoise: {
      const double mean = std::pow(10.0, params[0] / 10.0);
      for (double& p : power) p += rng.exponential(mean);
      break;
    }
    case CorruptionKind::kSpeckle: {
      const double sigma = params[0];
      for (double& p : power) p *= std::pow(10.0, sigma * rng.normal() / 10.0);
      break;
    }
    case CorruptionKind::kRangeSmear:
      smear(power, roi.height, roi.width, params[0], true);
      break;
    case CorruptionKind::kAzimuthSmear:
      smear(power, roi.height, roi.width, params[0], false);
      break;
    case CorruptionKind::kAttenuation: {
      const double gain = std::pow(10.0, -params[0] / 10.0);
      for (double& p : power) p *= gain;
      break;
    }
    case CorruptionKind::kBinDropout: {
      // A fixed permutation per seed; higher severities drop a superset.
      std::vector<std::size_t> order(cells);
      std::iota(order.begin(), order.end(), std::size_t{0});
      rng.shuffle(std::span<std::size_t>(order));
      const auto n = static_cast<std::size_t>(std::llround(params[0] * static_cast<double>(cells)));
      const double floor_power = std::pow(10.0, kMinDb / 10.0);
      for (std::size_t i = 0; i < n; ++i) power[order[i]] = floor_power;
      break;
    }
    case CorruptionKind::kGhostTarget: {
      const int count = static_cast<int>(params[0]);
      const double peak = *std::max_element(power.begin(), power.end());
      const double ghost = peak * std::pow(10.0, params[1] / 10.0);
      const GridSpec grid;
      // Positions for every possible ghost are always drawn.
      std::array<std::pair<double, double>, kMaxGhosts> where{};
      for (auto& w : where) w = {rng.uniform(0.0, roi.height - 1.0), rng.uniform(0.0, roi.width - 1.0)};
      for (int g = 0; g < count; ++g) {
        for (int r = 0; r < roi.height; ++r) {
          const double pr = psf_power(r - where[g].first, grid.psf_range_width);
          for (int c = 0; c < roi.width; ++c) {
            power[static_cast<std::size_t>(r) * roi.width + c] +=
                ghost * pr * psf_power(c - where[g].second, grid.psf_azimuth_width);
          }
        }
      }
      break;
    }
  }
  for (std::size_t i = 0; i < cells; ++i) out.magnitude_db[i] = to_db(power[i]);
  return out;
}

RoiDataset corrupt_dataset(const RoiDataset& data, CorruptionKind kind, int severity,
                           std::uint64_t seed) {
  check_severity(severity);
  RoiDataset out;
  out.split = SplitTag::corrupted(to_string(kind), severity);
  out.num_classes = data.num_classes;
  out.generator_seed = data.generator_seed;
  out.records.reserve(data.size());
  const std::uint64_t kind_seed = mix_seed(seed, 0xc0 + static_cast<std::uint64_t>(kind));
  for (const auto& roi : data.records) {
    const std::uint64_t roi_seed =
        mix_seed(kind_seed, (static_cast<std::uint64_t>(static_cast<std::uint32_t>(roi.scene_id)) << 32) |
                                static_cast<std::uint32_t>(roi.frame_id));
    out.records.push_back(corrupt(roi, {kind, severity, roi_seed}));
  }
  return out;
}

std::vector<SweepRow> severity_sweep(std::span<const TrainedModel> models, const RoiDataset& test,
                                     std::span<const SweepMethod> methods,
                                     const SweepOptions& options) {
  if (test.split.kind != SplitKind::kEnv1Test && test.split.kind != SplitKind::kEnv2Test) {
    throw ProtocolError("corruption sweep runs on a test split, got " + test.split.to_string());
  }
  if (models.empty()) throw ValidationError("corruption sweep needs at least one model");
  if (methods.empty()) throw ValidationError("corruption sweep needs at least one method");
  if (options.kinds.empty()) throw ValidationError("corruption sweep needs at least one kind");
  for (const auto& m : methods) {
    for (const auto& [seed, cal] : m.per_seed) {
      if (cal != nullptr) require_clean_fit(*cal);
    }
  }
  std::vector<CorruptionKind> kinds = options.kinds;
  std::sort(kinds.begin(), kinds.end(),
            [](CorruptionKind a, CorruptionKind b) { return to_string(a) < to_string(b); });
  kinds.erase(std::unique(kinds.begin(), kinds.end()), kinds.end());

  EvalOptions eval;
  eval.num_bins = options.num_bins;
  std::vector<SweepRow> rows;
  for (int severity = 1; severity <= kMaxSeverity; ++severity) {
    std::vector<SweepRow> per_kind;
    for (CorruptionKind kind : kinds) {
      const RoiDataset corrupted = corrupt_dataset(test, kind, severity, options.seed);
      LogitDataset logits;
      logits.split = corrupted.split;
      logits.num_classes = corrupted.num_classes;
      logits.generator_seed = corrupted.generator_seed;
      for (const auto& model : models) {
        auto part = predict_logits(model.network, corrupted, model.seed_id);
        std::move(part.records.begin(), part.records.end(), std::back_inserter(logits.records));
      }
      for (const auto& method : methods) {
        std::map<int, const Calibrator*> cals;
        for (const auto& model : models) {
          auto it = method.per_seed.find(model.seed_id);
          cals[model.seed_id] = it == method.per_seed.end() ? nullptr : it->second;
        }
        eval.method = method.name;
        const EvalReport report = evaluate(logits, cals, eval);
        SweepRow row;
        row.kind = to_string(kind);
        row.severity = severity;
        row.method = method.name;
        row.accuracy = report.accuracy ? report.accuracy->mean : 0.0;
        row.ece = report.ece ? report.ece->mean : 0.0;
        if (report.mmc_incorrect) row.mmc_incorrect = report.mmc_incorrect->mean;
        per_kind.push_back(std::move(row));
      }
    }
    for (const auto& method : methods) {
      SweepRow avg;
      avg.kind = "all";
      avg.severity = severity;
      avg.method = method.name;
      double mmc_sum = 0.0;
      int n = 0, n_mmc = 0;
      for (const auto& r : per_kind) {
        if (r.method != method.name) continue;
        avg.accuracy += r.accuracy;
        avg.ece += r.ece;
        ++n;
        if (r.mmc_incorrect) {
          mmc_sum += *r.mmc_incorrect;
          ++n_mmc;
        }
      }
      avg.accuracy /= n;
      avg.ece /= n;
      if (n_mmc > 0) avg.mmc_incorrect = mmc_sum / n_mmc;
      rows.push_back(std::move(avg));
    }
    std::move(per_kind.begin(), per_kind.end(), std::back_inserter(rows));
  }
  return rows;
}

void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows) {
  out << "kind,severity,method,accuracy,ece,mmc_incorrect\n";
  for (const auto& r : rows) {
    out << r.kind << ',' << r.severity << ',' << r.method << ',' << format_double(r.accuracy)
        << ',' << format_double(r.ece) << ',';
    if (r.mmc_incorrect) out << format_double(*r.mmc_incorrect);
    out << '\n';
  }
}

}  // namespace speccal

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

#include "speccal/imax.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "json.hpp"

namespace speccal {
namespace {

constexpr double kMinSweepGain = 1e-8;
constexpr int kMaxSweeps = 200;
// A move must beat the current placement by more than summation round-off,
// otherwise ties could flip back and forth and let I drift downwards.
constexpr double kMinMoveGain = 1e-12;
constexpr std::size_t kMaxExactCandidates = 3000;

// x ln(x / n), with 0 ln 0 = 0.
double xlogx_over(double x, double n) { return x > 0.0 ? x * std::log(x / n) : 0.0; }

// Scores collapsed to sorted distinct values with per-value counts.
struct Histogram1d {
  std::vector<double> values;
  std::vector<double> count_prefix;     // samples with value index < j
  std::vector<double> positive_prefix;  // positives with value index < j
  double total = 0.0;
  double positives = 0.0;

  std::size_t size() const { return values.size(); }

  // Sum over t of n_t ln(n_t / n) for values [lo, hi).
  double bin_term(std::size_t lo, std::size_t hi) const {
    const double n = count_prefix[hi] - count_prefix[lo];
    const double pos = positive_prefix[hi] - positive_prefix[lo];
    return xlogx_over(pos, n) + xlogx_over(n - pos, n);
  }

  double target_entropy() const {
    return -(xlogx_over(positives, total) + xlogx_over(total - positives, total)) / total;
  }
};

Histogram1d collapse(std::span<const double> scores, std::span<const std::uint8_t> targets) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  Histogram1d h;
  h.count_prefix.push_back(0.0);
  h.positive_prefix.push_back(0.0);
  for (std::size_t i : order) {
    if (h.values.empty() || scores[i] != h.values.back()) {
      h.values.push_back(scores[i]);
      h.count_prefix.push_back(h.count_prefix.back());
      h.positive_prefix.push_back(h.positive_prefix.back());
    }
    h.count_prefix.back() += 1.0;
    if (targets[i]) h.positive_prefix.back() += 1.0;
  }
  h.total = static_cast<double>(scores.size());
  h.positives = h.positive_prefix.back();
  return h;
}

// A cut c (0 <= c <= M-2) separates value c from value c+1. Bins are the
// value-index ranges between consecutive cuts.
double objective(const Histogram1d& h, const std::vector<std::size_t>& cuts) {
  double sum = 0.0;
  std::size_t lo = 0;
  for (std::size_t c : cuts) {
    sum += h.bin_term(lo, c + 1);
    lo = c + 1;
  }
  sum += h.bin_term(lo, h.size());
  return h.target_entropy() + sum / h.total;
}

std::vector<std::size_t> equal_mass_cuts(const Histogram1d& h, std::size_t num_cuts) {
  std::vector<std::size_t> cuts;
  const std::size_t m = h.size();
  for (std::size_t b = 1; b <= num_cuts; ++b) {
    const double target = static_cast<double>(b) * h.total / static_cast<double>(num_cuts + 1);
    const std::size_t lo = cuts.empty() ? 0 : cuts.back() + 1;
    const std::size_t hi = m - 2 - (num_cuts - b);
    std::size_t best = lo;
    double best_gap = std::abs(h.count_prefix[lo + 1] - target);
    for (std::size_t c = lo + 1; c <= hi; ++c) {
      const double gap = std::abs(h.count_prefix[c + 1] - target);
      if (gap < best_gap) {
        best = c;
        best_gap = gap;
      }
    }
    cuts.push_back(best);
  }
  return cuts;
}

// Cuts between two values that hold only samples of one and the same target
// never improve I (entropy-minimizing cuts lie on class boundaries), so the
// exact search only considers the remaining cuts.
std::vector<std::size_t> boundary_cuts(const Histogram1d& h) {
  auto purity = [&](std::size_t v) {
    const double n = h.count_prefix[v + 1] - h.count_prefix[v];
    const double pos = h.positive_prefix[v + 1] - h.positive_prefix[v];
    return pos == 0.0 ? 0 : (pos == n ? 1 : -1);
  };
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c + 1 < h.size(); ++c) {
    const int a = purity(c), b = purity(c + 1);
    if (a < 0 || b < 0 || a != b) out.push_back(c);
  }
  return out;
}

// Globally optimal set of at most `max_cuts` cuts drawn from `candidates`, by
// dynamic programming over the additive per-bin terms.
std::vector<std::size_t> exact_cuts(const Histogram1d& h, const std::vector<std::size_t>& candidates,
                                    std::size_t max_cuts) {
  const std::size_t p = candidates.size();
  const std::size_t m = h.size();
  constexpr double kNone = -std::numeric_limits<double>::infinity();
  // best[j][i]: best sum of bin terms left of candidate i when it is the
  // (j+1)-th cut.
  std::vector<std::vector<double>> best(max_cuts, std::vector<double>(p, kNone));
  std::vector<std::vector<std::size_t>> from(max_cuts, std::vector<std::size_t>(p, 0));
  for (std::size_t i = 0; i < p; ++i) best[0][i] = h.bin_term(0, candidates[i] + 1);
  for (std::size_t j = 1; j < max_cuts; ++j) {
    for (std::size_t i = j; i < p; ++i) {
      for (std::size_t q = j - 1; q < i; ++q) {
        if (best[j - 1][q] == kNone) continue;
        const double v = best[j - 1][q] + h.bin_term(candidates[q] + 1, candidates[i] + 1);
        if (v > best[j][i]) {
          best[j][i] = v;
          from[j][i] = q;
        }
      }
    }
  }
  double top = h.bin_term(0, m);
  std::size_t top_j = 0, top_i = 0;
  bool any = false;
  for (std::size_t j = 0; j < max_cuts; ++j) {
    for (std::size_t i = 0; i < p; ++i) {
      if (best[j][i] == kNone) continue;
      const double v = best[j][i] + h.bin_term(candidates[i] + 1, m);
      if (v > top) {
        top = v;
        top_j = j;
        top_i = i;
        any = true;
      }
    }
  }
  std::vector<std::size_t> cuts;
  if (!any) return cuts;
  for (std::size_t j = top_j + 1, i = top_i; j-- > 0;) {
    cuts.push_back(candidates[i]);
    i = from[j][i];
  }
  std::reverse(cuts.begin(), cuts.end());
  return cuts;
}

// Pool-adjacent-violators, weighted; enforces non-decreasing values.
void make_monotone(std::vector<double>& values, std::vector<double> weights) {
  struct Block {
    double value, weight;
    std::size_t length;
  };
  std::vector<Block> blocks;
  for (std::size_t i = 0; i < values.size(); ++i) {
    blocks.push_back({values[i], weights[i], 1});
    while (blocks.size() > 1 && blocks[blocks.size() - 2].value > blocks.back().value) {
      Block top = blocks.back();
      blocks.pop_back();
      Block& prev = blocks.back();
      const double w = prev.weight + top.weight;
      prev.value = (prev.value * prev.weight + top.value * top.weight) / w;
      prev.weight = w;
      prev.length += top.length;
    }
  }
  std::size_t i = 0;
  for (const auto& b : blocks) {
    for (std::size_t j = 0; j < b.length; ++j) values[i++] = b.value;
  }
}

}  // namespace

double binned_mutual_information(std::span<const double> scores,
                                 std::span<const std::uint8_t> targets,
                                 std::span<const double> boundaries) {
  if (scores.size() != targets.size() || scores.empty()) {
    throw ValidationError("MI needs equal-length non-empty inputs");
  }
  const std::size_t nb = boundaries.size() + 1;
  std::vector<double> n(nb, 0.0), pos(nb, 0.0);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    auto b = static_cast<std::size_t>(
        std::upper_bound(boundaries.begin(), boundaries.end(), scores[i]) - boundaries.begin());
    n[b] += 1.0;
    if (targets[i]) pos[b] += 1.0;
  }
  const double total = static_cast<double>(scores.size());
  const double positives = std::accumulate(pos.begin(), pos.end(), 0.0);
  double sum = 0.0;
  for (std::size_t b = 0; b < nb; ++b) {
    sum += xlogx_over(pos[b], n[b]) + xlogx_over(n[b] - pos[b], n[b]);
  }
  const double h = -(xlogx_over(positives, total) + xlogx_over(total - positives, total)) / total;
  return h + sum / total;
}

MiBinning fit_mi_binning(std::span<const double> scores, std::span<const std::uint8_t> targets,
                         int num_bins) {
  if (scores.size() != targets.size() || scores.empty()) {
    throw ValidationError("I-Max needs equal-length non-empty inputs");
  }
  if (num_bins < 2) throw ValidationError("I-Max needs at least two bins");
  for (double s : scores) {
    if (!std::isfinite(s)) throw ValidationError("non-finite score in I-Max fit");
  }
  const Histogram1d h = collapse(scores, targets);

  MiBinning result;
  std::size_t bins = static_cast<std::size_t>(num_bins);
  if (h.size() < bins) {
    bins = h.size();
    result.reduced = true;
  }
  std::vector<std::size_t> cuts = bins > 1 ? equal_mass_cuts(h, bins - 1) : std::vector<std::size_t>{};
  double current = objective(h, cuts);
  result.sweep_history.push_back(current);

  for (int sweep = 0; sweep < kMaxSweeps && !cuts.empty(); ++sweep) {
    const double before = current;
    for (std::size_t j = 0; j < cuts.size(); ++j) {
      const std::size_t left_lo = j == 0 ? 0 : cuts[j - 1] + 1;
      const std::size_t right_hi = j + 1 == cuts.size() ? h.size() : cuts[j + 1] + 1;
      const std::size_t c_lo = left_lo;
      const std::size_t c_hi = right_hi - 2;
      // Only the two bins adjacent to cut j change.
      double best_term = h.bin_term(left_lo, cuts[j] + 1) + h.bin_term(cuts[j] + 1, right_hi);
      std::size_t best = cuts[j];
      for (std::size_t c = c_lo; c <= c_hi; ++c) {
        const double term = h.bin_term(left_lo, c + 1) + h.bin_term(c + 1, right_hi);
        if (term > best_term + kMinMoveGain) {
          best_term = term;
          best = c;
        }
      }
      cuts[j] = best;
    }
    current = objective(h, cuts);
    result.sweep_history.push_back(current);
    if (current - before < kMinSweepGain) break;
  }

  // Coordinate ascent can stall in a local optimum; when the candidate set is
  // small enough, an exact search replaces its result. Missing cuts are filled
  // from the ascent solution: refining a partition never lowers I.
  if (!cuts.empty()) {
    const std::vector<std::size_t> candidates = boundary_cuts(h);
    if (!candidates.empty() && candidates.size() <= kMaxExactCandidates) {
      std::vector<std::size_t> exact = exact_cuts(h, candidates, cuts.size());
      for (std::size_t c : cuts) {
        if (exact.size() == cuts.size()) break;
        if (std::find(exact.begin(), exact.end(), c) == exact.end()) exact.push_back(c);
      }
      std::sort(exact.begin(), exact.end());
      const double value = objective(h, exact);
      if (value > current + kMinMoveGain) {
        cuts = std::move(exact);
        current = value;
        result.sweep_history.push_back(current);
      }
    }
  }

  std::vector<double> weights;
  std::size_t lo = 0;
  auto add_bin = [&](std::size_t hi) {
    const double n = h.count_prefix[hi] - h.count_prefix[lo];
    const double pos = h.positive_prefix[hi] - h.positive_prefix[lo];
    result.representatives.push_back((pos + 1.0) / (n + 2.0));
    weights.push_back(n);
    lo = hi;
  };
  for (std::size_t c : cuts) {
    result.boundaries.push_back(0.5 * (h.values[c] + h.values[c + 1]));
    add_bin(c + 1);
  }
  add_bin(h.size());
  make_monotone(result.representatives, weights);
  result.mutual_information = objective(h, cuts);
  return result;
}

std::vector<double> one_vs_rest_log_odds(std::span<const double> logits) {
  const std::size_t k = logits.size();
  std::vector<double> out(k);
  for (std::size_t c = 0; c < k; ++c) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) {
      if (j != c) m = std::max(m, logits[j]);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      if (j != c) sum += std::exp(logits[j] - m);
    }
    out[c] = logits[c] - (m + std::log(sum));
  }
  return out;
}

std::string to_string(ImaxBinning binning) {
  return binning == ImaxBinning::kShared ? "shared" : "per-class";
}

ImaxBinning parse_imax_binning(std::string_view name) {
  if (name == "shared") return ImaxBinning::kShared;
  if (name == "per-class") return ImaxBinning::kPerClass;
  throw ValidationError("unknown I-Max binning '" + std::string(name) + "'");
}

IMaxBins fit_imax(const LogitDataset& validation, int num_bins, ImaxBinning binning) {
  require_fit_split(validation, "I-Max");
  if (num_bins < 2) throw ValidationError("I-Max needs at least two bins");
  const int k = validation.num_classes;
  const std::size_t n = validation.records.size();
  std::vector<std::vector<double>> scores(k, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto s = one_vs_rest_log_odds(validation.records[i].logits);
    for (int c = 0; c < k; ++c) scores[c][i] = s[c];
  }
  IMaxBins bins;
  bins.num_classes = k;
  bins.requested_bins = num_bins;
  bins.binning = binning;
  auto note_reduced = [&](const MiBinning& b, const std::string& what) {
    if (b.reduced) {
      bins.warnings.push_back(what + ": only " + std::to_string(b.representatives.size()) +
                              " distinct scores, bin count reduced");
    }
  };
  if (binning == ImaxBinning::kShared) {
    std::vector<double> pooled;
    std::vector<std::uint8_t> targets;
    pooled.reserve(n * k);
    targets.reserve(n * k);
    for (int c = 0; c < k; ++c) {
      for (std::size_t i = 0; i < n; ++i) {
        pooled.push_back(scores[c][i]);
        targets.push_back(validation.records[i].label == c);
      }
    }
    MiBinning shared = fit_mi_binning(pooled, targets, num_bins);
    note_reduced(shared, "shared binning");
    bins.classes.assign(k, shared);
    return bins;
  }
  for (int c = 0; c < k; ++c) {
    std::vector<std::uint8_t> targets(n);
    for (std::size_t i = 0; i < n; ++i) targets[i] = validation.records[i].label == c;
    bins.classes.push_back(fit_mi_binning(scores[c], targets, num_bins));
    note_reduced(bins.classes.back(), "class " + std::to_string(c));
  }
  return bins;
}

ProbVector apply_imax(const IMaxBins& bins, std::span<const double> logits,
                      std::string_view sample_id) {
  if (static_cast<int>(logits.size()) != bins.num_classes) {
    throw ValidationError("I-Max bins fitted for K=" + std::to_string(bins.num_classes) +
                          " applied to " + std::to_string(logits.size()) + " logits");
  }
  for (double z : logits) {
    if (!std::isfinite(z)) {
      throw ValidationError("non-finite logit in sample '" + std::string(sample_id) + "'");
    }
  }
  const auto s = one_vs_rest_log_odds(logits);
  std::vector<double> p(s.size());
  double total = 0.0;
  for (std::size_t c = 0; c < s.size(); ++c) {
    if (!std::isfinite(s[c])) {
      throw ValidationError("non-finite log-odds in sample '" + std::string(sample_id) + "'");
    }
    const auto& cls = bins.classes[c];
    auto b = std::upper_bound(cls.boundaries.begin(), cls.boundaries.end(), s[c]) -
             cls.boundaries.begin();
    p[c] = cls.representatives[static_cast<std::size_t>(b)];
    total += p[c];
  }
  for (double& v : p) v /= total;
  return ProbVector(std::move(p));
}

ImaxCalibrator::ImaxCalibrator(IMaxBins bins) : bins_(std::move(bins)) {
  if (static_cast<int>(bins_.classes.size()) != bins_.num_classes) {
    throw ValidationError("I-Max artifact has the wrong number of classes");
  }
  for (const auto& c : bins_.classes) {
    if (c.representatives.size() != c.boundaries.size() + 1) {
      throw ValidationError("I-Max artifact: representatives must outnumber boundaries by one");
    }
    for (std::size_t i = 1; i < c.boundaries.size(); ++i) {
      if (!(c.boundaries[i] > c.boundaries[i - 1])) {
        throw ValidationError("I-Max artifact: boundaries must be strictly increasing");
      }
    }
    for (double r : c.representatives) {
      if (!(r > 0.0 && r < 1.0)) throw ValidationError("I-Max representative outside (0, 1)");
    }
  }
}

std::string ImaxCalibrator::to_json() const {
  nlohmann::ordered_json j;
  j["kind"] = kind();
  j["K"] = bins_.num_classes;
  j["fit_split"] = fit_split().to_string();
  j["bins"] = bins_.requested_bins;
  j["binning"] = to_string(bins_.binning);
  auto classes = nlohmann::ordered_json::array();
  for (const auto& c : bins_.classes) {
    nlohmann::ordered_json e;
    e["boundaries"] = c.boundaries;
    e["representatives"] = c.representatives;
    e["mutual_information"] = c.mutual_information;
    e["reduced"] = c.reduced;
    classes.push_back(std::move(e));
  }
  j["classes"] = std::move(classes);
  j["warnings"] = bins_.warnings;
  return j.dump(2);
}

}  // namespace speccal

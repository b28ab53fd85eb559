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

#include "speccal/metrics.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

#include "json.hpp"

namespace speccal {
namespace {

void check_lengths(std::size_t a, std::size_t b) {
  if (a != b) throw ValidationError("metric inputs have different lengths");
  if (a == 0) throw ValidationError("metric input is empty");
}

std::vector<double> confidences_of(std::span<const ProbVector> probs) {
  std::vector<double> c(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) c[i] = probs[i].confidence();
  return c;
}

std::vector<std::uint8_t> correctness_of(std::span<const ProbVector> probs,
                                         std::span<const int> labels) {
  std::vector<std::uint8_t> ok(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (is_ood(labels[i])) throw ValidationError("OOD sample passed to an accuracy metric");
    ok[i] = probs[i].argmax() == labels[i];
  }
  return ok;
}

std::optional<double> mmc_of(std::span<const ProbVector> probs,
                             const std::vector<std::size_t>& subset) {
  if (subset.empty()) return std::nullopt;
  double sum = 0.0;
  for (std::size_t i : subset) sum += probs[i].confidence();
  return sum / static_cast<double>(subset.size());
}

std::optional<Stat> aggregate(const std::vector<SeedMetrics>& seeds,
                              std::optional<double> SeedMetrics::*field) {
  std::vector<double> values;
  for (const auto& s : seeds) {
    if (s.*field) values.push_back(*(s.*field));
  }
  if (values.empty()) return std::nullopt;
  return mean_std(values);
}

double round6(double x) { return std::round(x * 1e6) / 1e6; }

nlohmann::ordered_json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(round6(*v)) : nlohmann::ordered_json(nullptr);
}

nlohmann::ordered_json stat_json(const std::optional<Stat>& s) {
  if (!s) return nullptr;
  nlohmann::ordered_json j;
  j["mean"] = round6(s->mean);
  j["std"] = round6(s->std);
  return j;
}

std::string format_stat(const std::optional<Stat>& s, double scale, int digits,
                        int std_digits) {
  if (!s) return "-";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f \xC2\xB1 %.*f", digits, s->mean * scale, std_digits,
                s->std * scale);
  return buf;
}

}  // namespace

std::vector<std::size_t> equal_mass_edges(std::size_t n, int num_bins) {
  if (n == 0) throw ValidationError("ECE of an empty set is undefined");
  if (num_bins < 1) throw ValidationError("number of bins must be >= 1");
  if (static_cast<std::size_t>(num_bins) > n) {
    throw ValidationError("more bins than samples leaves empty bins");
  }
  std::vector<std::size_t> edges(num_bins + 1);
  for (int r = 0; r <= num_bins; ++r) {
    edges[r] = static_cast<std::size_t>(r) * n / static_cast<std::size_t>(num_bins);
  }
  return edges;
}

ReliabilityCurve reliability_curve(std::span<const double> confidences,
                                   std::span<const std::uint8_t> correct, int num_bins,
                                   std::span<const std::string> tie_keys) {
  check_lengths(confidences.size(), correct.size());
  if (!tie_keys.empty() && tie_keys.size() != confidences.size()) {
    throw ValidationError("tie-break keys must match the sample count");
  }
  const std::size_t n = confidences.size();
  const auto edges = equal_mass_edges(n, num_bins);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (tie_keys.empty()) {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return confidences[a] < confidences[b];
    });
  } else {
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (confidences[a] != confidences[b]) return confidences[a] < confidences[b];
      if (tie_keys[a] != tie_keys[b]) return tie_keys[a] < tie_keys[b];
      return a < b;
    });
  }

  ReliabilityCurve curve;
  curve.total = n;
  curve.bins.reserve(num_bins);
  for (int r = 0; r < num_bins; ++r) {
    ReliabilityBin bin;
    double conf_sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t i = edges[r]; i < edges[r + 1]; ++i) {
      conf_sum += confidences[order[i]];
      hits += correct[order[i]] ? 1 : 0;
    }
    bin.count = edges[r + 1] - edges[r];
    bin.confidence = conf_sum / static_cast<double>(bin.count);
    bin.accuracy = static_cast<double>(hits) / static_cast<double>(bin.count);
    curve.bins.push_back(bin);
  }
  return curve;
}

ReliabilityCurve reliability_curve(std::span<const ProbVector> probs,
                                   std::span<const int> labels, int num_bins) {
  check_lengths(probs.size(), labels.size());
  const auto conf = confidences_of(probs);
  const auto ok = correctness_of(probs, labels);
  return reliability_curve(conf, ok, num_bins);
}

double ece_from_curve(const ReliabilityCurve& curve) {
  double ece = 0.0;
  for (const auto& b : curve.bins) {
    ece += static_cast<double>(b.count) / static_cast<double>(curve.total) *
           std::abs(b.accuracy - b.confidence);
  }
  return ece;
}

double compute_ece(std::span<const ProbVector> probs, std::span<const int> labels,
                   int num_bins) {
  return ece_from_curve(reliability_curve(probs, labels, num_bins));
}

double compute_mmc(std::span<const ProbVector> probs) {
  if (probs.empty()) throw ValidationError("MMC of an empty set is undefined");
  double sum = 0.0;
  for (const auto& p : probs) sum += p.confidence();
  return sum / static_cast<double>(probs.size());
}

double compute_accuracy(std::span<const ProbVector> probs, std::span<const int> labels) {
  check_lengths(probs.size(), labels.size());
  const auto ok = correctness_of(probs, labels);
  return static_cast<double>(std::count(ok.begin(), ok.end(), 1)) /
         static_cast<double>(ok.size());
}

double compute_nll(std::span<const ProbVector> probs, std::span<const int> labels) {
  check_lengths(probs.size(), labels.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (is_ood(labels[i])) throw ValidationError("OOD sample passed to NLL");
    sum -= std::log(std::max(probs[i][labels[i]], 1e-300));
  }
  return sum / static_cast<double>(probs.size());
}

CorrectnessSplit split_by_correctness(std::span<const int> labels,
                                      std::span<const ProbVector> probs) {
  if (labels.size() != probs.size()) {
    throw ValidationError("labels and probabilities have different lengths");
  }
  CorrectnessSplit split;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (is_ood(labels[i])) {
      split.ood.push_back(i);
    } else if (probs[i].argmax() == labels[i]) {
      split.correct.push_back(i);
    } else {
      split.incorrect.push_back(i);
    }
  }
  return split;
}

ConfidenceHistogram confidence_histogram(std::span<const double> confidences,
                                         std::span<const std::uint8_t> correct,
                                         int num_classes, double width) {
  if (confidences.size() != correct.size()) {
    throw ValidationError("histogram inputs have different lengths");
  }
  if (num_classes < 2 || !(width > 0.0)) throw ValidationError("bad histogram layout");
  ConfidenceHistogram h;
  h.lower = 1.0 / num_classes;
  h.width = width;
  const auto nbins = static_cast<std::size_t>(std::ceil((1.0 - h.lower) / width - 1e-9));
  h.counts.assign(nbins, 0);
  h.correct.assign(nbins, 0);
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    double pos = std::floor((confidences[i] - h.lower) / width);
    auto b = static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(nbins - 1)));
    ++h.counts[b];
    if (correct[i]) ++h.correct[b];
  }
  return h;
}

Stat mean_std(std::span<const double> values) {
  if (values.empty()) throw ValidationError("mean of an empty set");
  const double n = static_cast<double>(values.size());
  double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

EvalReport evaluate(const LogitDataset& dataset, const Calibrator* calibrator,
                    const EvalOptions& options) {
  std::map<int, const Calibrator*> per_seed;
  for (const auto& [seed, records] : group_by_seed(dataset)) per_seed[seed] = calibrator;
  return evaluate(dataset, per_seed, options);
}

EvalReport evaluate(const LogitDataset& dataset,
                    const std::map<int, const Calibrator*>& per_seed,
                    const EvalOptions& options) {
  if (dataset.empty()) throw ValidationError("cannot evaluate an empty dataset");
  EvalReport report;
  report.split = dataset.split.to_string();
  report.method = options.method;
  report.num_classes = dataset.num_classes;
  report.num_bins = options.num_bins;

  std::vector<double> pooled_conf, ood_conf;
  std::vector<std::uint8_t> pooled_ok;
  std::vector<std::string> pooled_keys;

  for (const auto& [seed, records] : group_by_seed(dataset)) {
    auto it = per_seed.find(seed);
    if (it == per_seed.end()) {
      throw ValidationError("no calibrator for seed " + std::to_string(seed));
    }
    const Calibrator* cal = it->second;
    if (cal && cal->num_classes() != dataset.num_classes) {
      throw ValidationError("calibrator fitted for K=" + std::to_string(cal->num_classes()) +
                            " applied to K=" + std::to_string(dataset.num_classes));
    }
    std::vector<ProbVector> probs;
    std::vector<int> labels;
    probs.reserve(records.size());
    for (const auto* r : records) {
      probs.push_back(cal ? cal->apply(r->logits) : softmax(r->logits, r->sample_id));
      labels.push_back(r->label);
    }
    const auto split = split_by_correctness(labels, probs);

    SeedMetrics m;
    m.seed_id = seed;
    m.out_of_distribution = split.ood.size();
    m.in_distribution = split.correct.size() + split.incorrect.size();
    m.mmc_ood = mmc_of(probs, split.ood);
    if (m.in_distribution > 0) {
      std::vector<ProbVector> in_probs;
      std::vector<int> in_labels;
      std::vector<double> conf;
      std::vector<std::uint8_t> ok;
      std::vector<std::string> keys;
      for (std::size_t i = 0; i < probs.size(); ++i) {
        if (is_ood(labels[i])) continue;
        in_probs.push_back(probs[i]);
        in_labels.push_back(labels[i]);
        conf.push_back(probs[i].confidence());
        ok.push_back(probs[i].argmax() == labels[i]);
        keys.push_back(records[i]->sample_id);
      }
      m.accuracy = static_cast<double>(split.correct.size()) /
                   static_cast<double>(m.in_distribution);
      if (static_cast<std::size_t>(options.num_bins) <= conf.size()) {
        m.ece = ece_from_curve(reliability_curve(conf, ok, options.num_bins, keys));
      }
      m.nll = compute_nll(in_probs, in_labels);
      m.mmc_all = compute_mmc(in_probs);
      m.mmc_correct = mmc_of(probs, split.correct);
      m.mmc_incorrect = mmc_of(probs, split.incorrect);
      pooled_conf.insert(pooled_conf.end(), conf.begin(), conf.end());
      pooled_ok.insert(pooled_ok.end(), ok.begin(), ok.end());
      for (auto& k : keys) pooled_keys.push_back(k + "#" + std::to_string(seed));
    }
    for (std::size_t i : split.ood) ood_conf.push_back(probs[i].confidence());
    report.per_seed.push_back(m);
  }

  report.accuracy = aggregate(report.per_seed, &SeedMetrics::accuracy);
  report.ece = aggregate(report.per_seed, &SeedMetrics::ece);
  report.nll = aggregate(report.per_seed, &SeedMetrics::nll);
  report.mmc_all = aggregate(report.per_seed, &SeedMetrics::mmc_all);
  report.mmc_correct = aggregate(report.per_seed, &SeedMetrics::mmc_correct);
  report.mmc_incorrect = aggregate(report.per_seed, &SeedMetrics::mmc_incorrect);
  report.mmc_ood = aggregate(report.per_seed, &SeedMetrics::mmc_ood);

  if (!pooled_conf.empty() && static_cast<std::size_t>(options.num_bins) <= pooled_conf.size()) {
    report.curve = reliability_curve(pooled_conf, pooled_ok, options.num_bins, pooled_keys);
  }
  std::vector<double> conf_c, conf_i;
  for (std::size_t i = 0; i < pooled_conf.size(); ++i) {
    (pooled_ok[i] ? conf_c : conf_i).push_back(pooled_conf[i]);
  }
  const int k = dataset.num_classes;
  report.hist_correct =
      confidence_histogram(conf_c, std::vector<std::uint8_t>(conf_c.size(), 1), k);
  report.hist_incorrect =
      confidence_histogram(conf_i, std::vector<std::uint8_t>(conf_i.size(), 0), k);
  report.hist_ood =
      confidence_histogram(ood_conf, std::vector<std::uint8_t>(ood_conf.size(), 0), k);
  return report;
}

std::string to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["split"] = report.split;
  j["method"] = report.method;
  j["K"] = report.num_classes;
  j["bins"] = report.num_bins;
  j["accuracy"] = stat_json(report.accuracy);
  j["ece"] = stat_json(report.ece);
  j["mmc_incorrect"] = stat_json(report.mmc_incorrect);
  j["mmc_correct"] = stat_json(report.mmc_correct);
  j["mmc_all"] = stat_json(report.mmc_all);
  j["mmc_ood"] = stat_json(report.mmc_ood);
  j["nll"] = stat_json(report.nll);
  auto seeds = nlohmann::ordered_json::array();
  for (const auto& s : report.per_seed) {
    nlohmann::ordered_json e;
    e["seed_id"] = s.seed_id;
    e["in_distribution"] = s.in_distribution;
    e["out_of_distribution"] = s.out_of_distribution;
    e["accuracy"] = opt_json(s.accuracy);
    e["ece"] = opt_json(s.ece);
    e["mmc_incorrect"] = opt_json(s.mmc_incorrect);
    e["mmc_correct"] = opt_json(s.mmc_correct);
    e["mmc_all"] = opt_json(s.mmc_all);
    e["mmc_ood"] = opt_json(s.mmc_ood);
    e["nll"] = opt_json(s.nll);
    seeds.push_back(std::move(e));
  }
  j["per_seed"] = std::move(seeds);
  return j.dump(2);
}

void write_curve_csv(std::ostream& out, const ReliabilityCurve& curve) {
  out << "bin_index,confidence,accuracy,count\n";
  char buf[128];
  for (std::size_t b = 0; b < curve.bins.size(); ++b) {
    std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f,%zu\n", b, curve.bins[b].confidence,
                  curve.bins[b].accuracy, curve.bins[b].count);
    out << buf;
  }
}

void write_histogram_csv(std::ostream& out, const ConfidenceHistogram& hist) {
  out << "bin_index,confidence,accuracy,count\n";
  char buf[128];
  for (std::size_t b = 0; b < hist.counts.size(); ++b) {
    const double acc = hist.counts[b] ? static_cast<double>(hist.correct[b]) /
                                            static_cast<double>(hist.counts[b])
                                      : 0.0;
    std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f,%zu\n", b, hist.center(b), acc,
                  hist.counts[b]);
    out << buf;
  }
}

std::string format_table_cells(const EvalReport& report) {
  return format_stat(report.accuracy, 100.0, 2, 2) + " | " +
         format_stat(report.ece, 1.0, 3, 2) + " | " +
         format_stat(report.mmc_incorrect, 1.0, 2, 2);
}

}  // namespace speccal

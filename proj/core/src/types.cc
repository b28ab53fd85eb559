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

#include "speccal/types.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_set>

namespace speccal {

void check_label(int label, int num_classes) {
  if (is_ood(label)) return;
  if (label < 0 || label >= num_classes) {
    throw ValidationError("label " + std::to_string(label) + " outside [0, " +
                          std::to_string(num_classes) + ") and not the OOD sentinel");
  }
}

ProbVector::ProbVector(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.empty()) throw ValidationError("empty probability vector");
  double sum = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw ValidationError("probability entry outside [0, 1]");
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > kSumTolerance) {
    throw ValidationError("probability vector does not sum to 1");
  }
}

int ProbVector::argmax() const { return speccal::argmax(probs_); }

double ProbVector::confidence() const {
  return *std::max_element(probs_.begin(), probs_.end());
}

int argmax(std::span<const double> values) {
  int best = 0;
  for (std::size_t k = 1; k < values.size(); ++k) {
    if (values[k] > values[best]) best = static_cast<int>(k);
  }
  return best;
}

ProbVector softmax(std::span<const double> logits, std::string_view sample_id) {
  if (logits.size() < 2) {
    throw ValidationError("softmax needs at least two logits");
  }
  for (double z : logits) {
    if (!std::isfinite(z)) {
      throw ValidationError("non-finite logit in sample '" + std::string(sample_id) + "'");
    }
  }
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    out[k] = std::exp(logits[k] - m);
    total += out[k];
  }
  for (double& p : out) p /= total;
  return ProbVector(std::move(out));
}

std::string SplitTag::to_string() const {
  switch (kind) {
    case SplitKind::kEnv1Train: return "Env1-Train";
    case SplitKind::kEnv1Valid: return "Env1-Valid";
    case SplitKind::kEnv1Test: return "Env1-Test";
    case SplitKind::kEnv2Test: return "Env2-Test";
    case SplitKind::kOod: return "OOD";
    case SplitKind::kCorrupted:
      return "Corrupted(" + corruption + "," + std::to_string(severity) + ")";
  }
  return "?";
}

SplitTag SplitTag::parse(std::string_view text) {
  if (text == "Env1-Train") return env1_train();
  if (text == "Env1-Valid") return env1_valid();
  if (text == "Env1-Test") return env1_test();
  if (text == "Env2-Test") return env2_test();
  if (text == "OOD") return ood();
  constexpr std::string_view prefix = "Corrupted(";
  if (text.starts_with(prefix) && text.ends_with(")")) {
    auto inner = text.substr(prefix.size(), text.size() - prefix.size() - 1);
    auto comma = inner.find(',');
    if (comma != std::string_view::npos && comma > 0) {
      const std::string severity(inner.substr(comma + 1));
      try {
        std::size_t used = 0;
        int s = std::stoi(severity, &used);
        if (used == severity.size()) return corrupted(std::string(inner.substr(0, comma)), s);
      } catch (const std::exception&) {
      }
    }
  }
  throw ValidationError("unknown split tag '" + std::string(text) + "'");
}

void validate(const LogitDataset& dataset) {
  std::unordered_set<std::string> seen;
  for (const auto& r : dataset.records) {
    if (static_cast<int>(r.logits.size()) != dataset.num_classes) {
      throw ValidationError("sample '" + r.sample_id + "' has " +
                            std::to_string(r.logits.size()) + " logits, expected " +
                            std::to_string(dataset.num_classes));
    }
    for (double z : r.logits) {
      if (!std::isfinite(z)) {
        throw ValidationError("non-finite logit in sample '" + r.sample_id + "'");
      }
    }
    check_label(r.label, dataset.num_classes);
    // The same sample legitimately appears once per trained network.
    if (!seen.insert(r.sample_id + "#" + std::to_string(r.seed_id)).second) {
      throw ValidationError("duplicate sample id '" + r.sample_id + "'");
    }
  }
}

std::set<std::string> shared_ids(std::span<const std::vector<std::string>> id_lists) {
  std::map<std::string, std::size_t> owner;
  std::set<std::string> shared;
  for (std::size_t i = 0; i < id_lists.size(); ++i) {
    for (const auto& id : id_lists[i]) {
      auto [it, inserted] = owner.emplace(id, i);
      if (!inserted && it->second != i) shared.insert(id);
    }
  }
  return shared;
}

std::vector<std::pair<int, std::vector<const LogitRecord*>>> group_by_seed(
    const LogitDataset& dataset) {
  std::map<int, std::vector<const LogitRecord*>> groups;
  for (const auto& r : dataset.records) groups[r.seed_id].push_back(&r);
  return {groups.begin(), groups.end()};
}

}  // namespace speccal

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

#ifndef SPECCAL_TYPES_H_
#define SPECCAL_TYPES_H_

#include <cstddef>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "speccal/error.h"

namespace speccal {

inline constexpr int kDefaultNumClasses = 7;

// Label carried by out-of-distribution samples. Never a valid class index,
// so accuracy/ECE code cannot count it by accident.
inline constexpr int kOodLabel = -1;

inline bool is_ood(int label) { return label == kOodLabel; }

// Validates `label` as either a class index in [0, num_classes) or the OOD
// sentinel. Throws ValidationError otherwise.
void check_label(int label, int num_classes);

// One sample's raw network outputs.
struct LogitRecord {
  std::string sample_id;
  int label = kOodLabel;
  int seed_id = 0;
  std::vector<double> logits;

  friend bool operator==(const LogitRecord&, const LogitRecord&) = default;
};

inline const std::string& record_id(const LogitRecord& r) { return r.sample_id; }

// Normalized categorical distribution. Construction validates that every
// entry is in [0, 1] and that the entries sum to 1 within 1e-9.
class ProbVector {
 public:
  static constexpr double kSumTolerance = 1e-9;

  ProbVector() = default;
  explicit ProbVector(std::vector<double> probs);

  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t k) const { return probs_[k]; }
  std::span<const double> values() const { return probs_; }

  // Index of the largest entry; ties go to the lowest index.
  int argmax() const;
  double confidence() const;

  friend bool operator==(const ProbVector&, const ProbVector&) = default;

 private:
  std::vector<double> probs_;
};

// Numerically stable softmax exp(z_k - m) / sum_j exp(z_j - m), m = max z.
// Throws ValidationError naming `sample_id` on non-finite input.
ProbVector softmax(std::span<const double> logits, std::string_view sample_id = {});

// Index of the largest logit; ties go to the lowest index.
int argmax(std::span<const double> values);

enum class SplitKind { kEnv1Train, kEnv1Valid, kEnv1Test, kEnv2Test, kOod, kCorrupted };

struct SplitTag {
  SplitKind kind = SplitKind::kEnv1Train;
  std::string corruption;  // only for kCorrupted
  int severity = 0;        // only for kCorrupted

  static SplitTag env1_train() { return {SplitKind::kEnv1Train, {}, 0}; }
  static SplitTag env1_valid() { return {SplitKind::kEnv1Valid, {}, 0}; }
  static SplitTag env1_test() { return {SplitKind::kEnv1Test, {}, 0}; }
  static SplitTag env2_test() { return {SplitKind::kEnv2Test, {}, 0}; }
  static SplitTag ood() { return {SplitKind::kOod, {}, 0}; }
  static SplitTag corrupted(std::string kind, int severity) {
    return {SplitKind::kCorrupted, std::move(kind), severity};
  }

  // "Env1-Train", "Env1-Valid", "Env1-Test", "Env2-Test", "OOD",
  // "Corrupted(kind,severity)".
  std::string to_string() const;
  static SplitTag parse(std::string_view text);

  friend bool operator==(const SplitTag&, const SplitTag&) = default;
};

template <typename Record>
struct LabeledDataset {
  SplitTag split;
  int num_classes = kDefaultNumClasses;
  std::uint64_t generator_seed = 0;
  std::vector<Record> records;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
};

using LogitDataset = LabeledDataset<LogitRecord>;

// Checks the LogitRecord invariants over a whole set: finite logits, length
// K for every record, legal labels, unique sample ids.
void validate(const LogitDataset& dataset);

// Returns the ids that appear in more than one of `id_lists`. Duplicates
// inside a single list are not reported here.
std::set<std::string> shared_ids(std::span<const std::vector<std::string>> id_lists);

// Set of sample ids shared between any two datasets; empty on success.
// Overlap is reported, never repaired.
template <typename Record>
std::set<std::string> split_disjointness_check(
    std::span<const LabeledDataset<Record>* const> datasets) {
  if (datasets.size() < 2) {
    throw ValidationError("split_disjointness_check needs at least two datasets");
  }
  std::vector<std::vector<std::string>> ids;
  ids.reserve(datasets.size());
  for (const auto* ds : datasets) {
    auto& list = ids.emplace_back();
    list.reserve(ds->records.size());
    for (const auto& r : ds->records) list.push_back(record_id(r));
  }
  return shared_ids(ids);
}

// Records grouped by seed_id, seeds in ascending order.
std::vector<std::pair<int, std::vector<const LogitRecord*>>> group_by_seed(
    const LogitDataset& dataset);

}  // namespace speccal

#endif  // SPECCAL_TYPES_H_

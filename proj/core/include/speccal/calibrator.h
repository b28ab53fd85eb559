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

#ifndef SPECCAL_CALIBRATOR_H_
#define SPECCAL_CALIBRATOR_H_

#include <memory>
#include <span>
#include <string>
#include <string_view>

#include "speccal/types.h"

namespace speccal {

// A fitted post-hoc transform from logits to probabilities. Implementations
// are immutable after fitting and safe to apply concurrently.
class Calibrator {
 public:
  virtual ~Calibrator() = default;

  // "identity", "ts", "imax" or "gp".
  virtual std::string kind() const = 0;
  virtual int num_classes() const = 0;
  virtual ProbVector apply(std::span<const double> logits) const = 0;

  // `{"kind": ..., "K": ..., "fit_split": ..., ...params}`.
  virtual std::string to_json() const = 0;

  // Split the calibrator was fitted on. The fit functions only accept
  // Env1-Valid; artifacts loaded from disk carry whatever they recorded.
  const SplitTag& fit_split() const { return fit_split_; }
  void set_fit_split(SplitTag split) { fit_split_ = std::move(split); }

 private:
  SplitTag fit_split_ = SplitTag::env1_valid();
};

// Plain softmax. Useful as a control: evaluating with it must reproduce the
// uncalibrated baseline exactly.
class IdentityCalibrator final : public Calibrator {
 public:
  explicit IdentityCalibrator(int num_classes) : num_classes_(num_classes) {}
  std::string kind() const override { return "identity"; }
  int num_classes() const override { return num_classes_; }
  ProbVector apply(std::span<const double> logits) const override { return softmax(logits); }
  std::string to_json() const override;

 private:
  int num_classes_;
};

// Dispatches on the "kind" field.
std::unique_ptr<Calibrator> calibrator_from_json(std::string_view json);

// Throws ProtocolError unless `cal` was fitted on Env1-Valid.
void require_clean_fit(const Calibrator& cal);

// Gate every fit goes through: the dataset must be non-empty, tagged
// Env1-Valid (ProtocolError otherwise) and carry in-distribution labels only.
void require_fit_split(const LogitDataset& dataset, std::string_view method);

}  // namespace speccal

#endif  // SPECCAL_CALIBRATOR_H_

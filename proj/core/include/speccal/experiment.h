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

#ifndef SPECCAL_EXPERIMENT_H_
#define SPECCAL_EXPERIMENT_H_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "speccal/classifier.h"
#include "speccal/types.h"

namespace speccal {

enum class Stage { kGen, kTrain, kCalibrate, kReport, kSweep, kOod };

std::string to_string(Stage stage);
Stage parse_stage(std::string_view name);

struct DatasetSettings {
  std::size_t train = 8000;
  std::size_t valid = 600;
  std::size_t test = 1500;
  std::size_t env2 = 1500;
  std::size_t ood = 1500;
  double env2_noise_offset_db = 3.0;
};

struct TrainSettings {
  int epochs = 30;
  int batch_size = 64;
  double learning_rate = 0.01;
  double momentum = 0.9;
  int num_seeds = 10;
};

struct CalibrationSettings {
  int imax_bins = 15;
  int gp_knots = 20;
  int gp_samples = 30;
  int gp_steps = 2000;
};

struct LatencySettings {
  int warmup = 100;
  int repeats = 1000;
};

struct ExperimentConfig {
  std::uint64_t master_seed = 42;
  DatasetSettings dataset;
  ModelSpec model;
  TrainSettings train;
  CalibrationSettings calibration;
  int metric_bins = 15;
  std::vector<std::string> sweep_kinds;  // empty means every kind
  LatencySettings latency;
  std::string output_dir = "speccal-out";
  std::vector<Stage> stages{Stage::kGen,    Stage::kTrain, Stage::kCalibrate,
                            Stage::kReport, Stage::kSweep, Stage::kOod};

  // Per-seed training seeds derived from master_seed.
  TrainConfig train_config() const;
};

// Throws ValidationError on malformed JSON, unknown keys or invalid values.
ExperimentConfig config_from_json(std::string_view text);
std::string to_json(const ExperimentConfig& config);
// Throws IoError if the file cannot be read.
ExperimentConfig load_config(const std::filesystem::path& path);
void validate(const ExperimentConfig& config);

// FNV-1a over the canonical JSON of every setting the stage (and the stages
// it consumes) depends on, as 16 hex digits.
std::string stage_hash(const ExperimentConfig& config, Stage stage);

// Splits a stage may read. gen reads nothing; train reads Env1-Train and
// Env1-Valid; calibrate reads Env1-Valid; report reads Env1-Test, Env2-Test
// and OOD; sweep reads Env1-Test; ood reads OOD.
const std::vector<SplitKind>& allowed_splits(Stage stage);
// Throws ProtocolError if `stage` may not read `split`.
void check_split_access(Stage stage, const SplitTag& split);

// Output layout below the experiment directory.
struct ExperimentPaths {
  std::filesystem::path root;

  std::filesystem::path data(SplitKind split) const;
  std::filesystem::path checkpoint(int seed_id) const;
  std::filesystem::path training_log(int seed_id) const;
  std::filesystem::path logits(SplitKind split, int seed_id) const;
  std::filesystem::path calibrator(std::string_view method, int seed_id) const;
  std::filesystem::path calibration_diagnostics() const;
  std::filesystem::path reports() const;
  std::filesystem::path latency() const;
  std::filesystem::path sweep() const;
  std::filesystem::path ood() const;
  std::filesystem::path stamp(Stage stage) const;
};

// Lower-case file stem of a split, e.g. "env1-test".
std::string split_file_stem(SplitKind split);

// Calibration methods in report order; "baseline" is plain softmax.
const std::vector<std::string>& method_names();

struct StageResult {
  bool skipped = false;  // stamp matched; nothing was recomputed
  std::vector<std::filesystem::path> outputs;
};

// Runs pipeline stages against one config. Each completed stage writes a
// stamp holding its hash; a stage whose stamp matches is skipped unless
// `force` is set. Progress goes to `log`.
class Experiment {
 public:
  Experiment(ExperimentConfig config, std::ostream& log);

  const ExperimentConfig& config() const { return config_; }
  const ExperimentPaths& paths() const { return paths_; }

  StageResult run(Stage stage, bool force = false);
  // Runs config().stages in order.
  void run_all(bool force = false);

 private:
  StageResult gen();
  StageResult train();
  StageResult calibrate();
  StageResult report();
  StageResult sweep();
  StageResult ood();

  LogitDataset read_logits(Stage stage, SplitKind split, int seed_id) const;
  RoiDataset read_rois(Stage stage, SplitKind split) const;

  ExperimentConfig config_;
  ExperimentPaths paths_;
  std::ostream& log_;
};

}  // namespace speccal

#endif  // SPECCAL_EXPERIMENT_H_

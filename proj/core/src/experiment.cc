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

#include "speccal/experiment.h"

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "speccal/calibrator.h"
#include "speccal/corruptions.h"
#include "speccal/error.h"
#include "speccal/gp_scaling.h"
#include "speccal/imax.h"
#include "speccal/logit_io.h"
#include "speccal/metrics.h"
#include "speccal/random.h"
#include "speccal/roi_io.h"
#include "speccal/spectra_sim.h"
#include "speccal/temperature.h"

namespace speccal {
namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

constexpr std::array<std::pair<Stage, const char*>, 6> kStages = {{
    {Stage::kGen, "gen"},
    {Stage::kTrain, "train"},
    {Stage::kCalibrate, "calibrate"},
    {Stage::kReport, "report"},
    {Stage::kSweep, "sweep"},
    {Stage::kOod, "ood"},
}};

constexpr std::array<SplitKind, 5> kDataSplits = {SplitKind::kEnv1Train, SplitKind::kEnv1Valid,
                                                  SplitKind::kEnv1Test, SplitKind::kEnv2Test,
                                                  SplitKind::kOod};
// Splits whose logits the train stage emits.
constexpr std::array<SplitKind, 4> kLogitSplits = {SplitKind::kEnv1Valid, SplitKind::kEnv1Test,
                                                   SplitKind::kEnv2Test, SplitKind::kOod};

SplitTag tag_of(SplitKind kind) {
  switch (kind) {
    case SplitKind::kEnv1Train: return SplitTag::env1_train();
    case SplitKind::kEnv1Valid: return SplitTag::env1_valid();
    case SplitKind::kEnv1Test: return SplitTag::env1_test();
    case SplitKind::kEnv2Test: return SplitTag::env2_test();
    case SplitKind::kOod: return SplitTag::ood();
    case SplitKind::kCorrupted: break;
  }
  throw ValidationError("corrupted splits have no fixed file");
}

// Rejects keys outside `allowed` so typos in a config fail loudly.
void check_keys(const nlohmann::json& j, std::string_view where,
                std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw ValidationError(std::string(where) + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ValidationError("unknown key '" + key + "' in " + std::string(where));
    }
  }
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

// Single writer per file: everything is rendered in memory and written once.
void write_file(const fs::path& path, const std::string& content) {
  ensure_dir(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Runs fn(i) for i in [0, n) on up to hardware_concurrency threads. Every
// job is independent, so results do not depend on the schedule.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers =
      std::min<std::size_t>(n, std::max(1u, std::thread::hardware_concurrency()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  pool.clear();
  if (error) std::rethrow_exception(error);
}

Json model_json(const ModelSpec& m) {
  Json j;
  j["input_height"] = m.input_height;
  j["input_width"] = m.input_width;
  j["conv_filters"] = m.conv_filters;
  j["dense_units"] = m.dense_units;
  j["num_classes"] = m.num_classes;
  return j;
}

Json config_json(const ExperimentConfig& c) {
  Json j;
  j["master_seed"] = c.master_seed;
  j["dataset"] = {{"train", c.dataset.train},
                  {"valid", c.dataset.valid},
                  {"test", c.dataset.test},
                  {"env2", c.dataset.env2},
                  {"ood", c.dataset.ood},
                  {"env2_noise_offset_db", c.dataset.env2_noise_offset_db}};
  j["model"] = model_json(c.model);
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"learning_rate", c.train.learning_rate},
                {"momentum", c.train.momentum},
                {"seeds", c.train.num_seeds}};
  j["calibration"] = {{"imax_bins", c.calibration.imax_bins},
                      {"gp_knots", c.calibration.gp_knots},
                      {"gp_samples", c.calibration.gp_samples},
                      {"gp_steps", c.calibration.gp_steps}};
  j["metrics"] = {{"bins", c.metric_bins}};
  j["sweep"] = {{"kinds", c.sweep_kinds}};
  j["latency"] = {{"warmup", c.latency.warmup}, {"repeats", c.latency.repeats}};
  j["output_dir"] = c.output_dir;
  Json stages = Json::array();
  for (Stage s : c.stages) stages.push_back(to_string(s));
  j["stages"] = stages;
  return j;
}

std::string seed_tag(int seed_id) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "seed-%02d", seed_id);
  return buf;
}

// Keeps timed applications from being optimized away.
volatile double latency_sink = 0.0;

std::unique_ptr<Calibrator> make_identity(int k) { return std::make_unique<IdentityCalibrator>(k); }

}  // namespace

std::string to_string(Stage stage) {
  for (const auto& [s, name] : kStages) {
    if (s == stage) return name;
  }
  throw ValidationError("unknown stage");
}

Stage parse_stage(std::string_view name) {
  for (const auto& [s, n] : kStages) {
    if (name == n) return s;
  }
  throw ValidationError("unknown stage '" + std::string(name) + "'");
}

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig cfg;
  cfg.epochs = train.epochs;
  cfg.batch_size = train.batch_size;
  cfg.learning_rate = train.learning_rate;
  cfg.momentum = train.momentum;
  cfg.seeds.clear();
  for (int i = 0; i < train.num_seeds; ++i) {
    cfg.seeds.push_back(mix_seed(master_seed, 0x7a1e00 + static_cast<std::uint64_t>(i)));
  }
  return cfg;
}

void validate(const ExperimentConfig& c) {
  validate(c.model);
  if (c.model.num_classes != kDefaultNumClasses) {
    throw ValidationError("the generator has " + std::to_string(kDefaultNumClasses) +
                          " classes; model.num_classes must match");
  }
  if (c.model.input_height != 32 || c.model.input_width != 32) {
    throw ValidationError("the generator renders 32x32 ROIs; model input must be 32x32");
  }
  if (c.dataset.train == 0 || c.dataset.valid == 0 || c.dataset.test == 0 || c.dataset.env2 == 0 ||
      c.dataset.ood == 0) {
    throw ValidationError("dataset split sizes must be positive");
  }
  if (c.train.epochs < 0 || c.train.batch_size < 1 || !(c.train.learning_rate > 0.0) ||
      !(c.train.momentum >= 0.0 && c.train.momentum < 1.0) || c.train.num_seeds < 1) {
    throw ValidationError("invalid train settings (epochs >= 0, batch >= 1, lr > 0, "
                          "momentum in [0, 1), seeds >= 1)");
  }
  if (c.calibration.imax_bins < 2 || c.calibration.gp_knots < 5 || c.calibration.gp_samples < 1 ||
      c.calibration.gp_steps < 0) {
    throw ValidationError("invalid calibration settings (imax_bins >= 2, gp_knots >= 5, "
                          "gp_samples >= 1, gp_steps >= 0)");
  }
  if (c.metric_bins < 1) throw ValidationError("metrics.bins must be >= 1");
  for (const auto& k : c.sweep_kinds) parse_corruption_kind(k);
  if (c.latency.warmup < 0 || c.latency.repeats < 1) {
    throw ValidationError("invalid latency settings");
  }
  if (c.output_dir.empty()) throw ValidationError("output_dir must not be empty");
}

ExperimentConfig config_from_json(std::string_view text) {
  ExperimentConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    check_keys(j, "config",
               {"master_seed", "dataset", "model", "train", "calibration", "metrics", "sweep",
                "latency", "output_dir", "stages"});
    read(j, "master_seed", c.master_seed);
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      check_keys(d, "dataset", {"train", "valid", "test", "env2", "ood", "env2_noise_offset_db"});
      read(d, "train", c.dataset.train);
      read(d, "valid", c.dataset.valid);
      read(d, "test", c.dataset.test);
      read(d, "env2", c.dataset.env2);
      read(d, "ood", c.dataset.ood);
      read(d, "env2_noise_offset_db", c.dataset.env2_noise_offset_db);
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      check_keys(m, "model",
                 {"input_height", "input_width", "conv_filters", "dense_units", "num_classes"});
      read(m, "input_height", c.model.input_height);
      read(m, "input_width", c.model.input_width);
      read(m, "conv_filters", c.model.conv_filters);
      read(m, "dense_units", c.model.dense_units);
      read(m, "num_classes", c.model.num_classes);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      check_keys(t, "train", {"epochs", "batch_size", "learning_rate", "momentum", "seeds"});
      read(t, "epochs", c.train.epochs);
      read(t, "batch_size", c.train.batch_size);
      read(t, "learning_rate", c.train.learning_rate);
      read(t, "momentum", c.train.momentum);
      read(t, "seeds", c.train.num_seeds);
    }
    if (j.contains("calibration")) {
      const auto& k = j.at("calibration");
      check_keys(k, "calibration", {"imax_bins", "gp_knots", "gp_samples", "gp_steps"});
      read(k, "imax_bins", c.calibration.imax_bins);
      read(k, "gp_knots", c.calibration.gp_knots);
      read(k, "gp_samples", c.calibration.gp_samples);
      read(k, "gp_steps", c.calibration.gp_steps);
    }
    if (j.contains("metrics")) {
      check_keys(j.at("metrics"), "metrics", {"bins"});
      read(j.at("metrics"), "bins", c.metric_bins);
    }
    if (j.contains("sweep")) {
      check_keys(j.at("sweep"), "sweep", {"kinds"});
      read(j.at("sweep"), "kinds", c.sweep_kinds);
    }
    if (j.contains("latency")) {
      check_keys(j.at("latency"), "latency", {"warmup", "repeats"});
      read(j.at("latency"), "warmup", c.latency.warmup);
      read(j.at("latency"), "repeats", c.latency.repeats);
    }
    read(j, "output_dir", c.output_dir);
    if (j.contains("stages")) {
      c.stages.clear();
      for (const auto& s : j.at("stages")) c.stages.push_back(parse_stage(s.get<std::string>()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed config: ") + e.what());
  }
  validate(c);
  return c;
}

std::string to_json(const ExperimentConfig& config) { return config_json(config).dump(2) + "\n"; }

ExperimentConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("config file not found: " + path.string());
  return config_from_json(read_file(path));
}

std::string stage_hash(const ExperimentConfig& config, Stage stage) {
  const Json full = config_json(config);
  Json key;
  key["stage"] = to_string(stage);
  key["master_seed"] = full["master_seed"];
  key["dataset"] = full["dataset"];
  if (stage != Stage::kGen) {
    key["model"] = full["model"];
    key["train"] = full["train"];
  }
  if (stage != Stage::kGen && stage != Stage::kTrain) key["calibration"] = full["calibration"];
  if (stage == Stage::kReport || stage == Stage::kSweep || stage == Stage::kOod) {
    key["metrics"] = full["metrics"];
  }
  if (stage == Stage::kReport) key["latency"] = full["latency"];
  if (stage == Stage::kSweep) key["sweep"] = full["sweep"];
  return hex64(fnv1a(key.dump()));
}

const std::vector<SplitKind>& allowed_splits(Stage stage) {
  static const std::map<Stage, std::vector<SplitKind>> table = {
      {Stage::kGen, {}},
      {Stage::kTrain, {SplitKind::kEnv1Train, SplitKind::kEnv1Valid}},
      {Stage::kCalibrate, {SplitKind::kEnv1Valid}},
      {Stage::kReport, {SplitKind::kEnv1Test, SplitKind::kEnv2Test, SplitKind::kOod}},
      {Stage::kSweep, {SplitKind::kEnv1Test}},
      {Stage::kOod, {SplitKind::kOod}},
  };
  return table.at(stage);
}

void check_split_access(Stage stage, const SplitTag& split) {
  const auto& allowed = allowed_splits(stage);
  if (std::find(allowed.begin(), allowed.end(), split.kind) == allowed.end()) {
    throw ProtocolError("stage '" + to_string(stage) + "' may not read split " + split.to_string());
  }
}

std::string split_file_stem(SplitKind split) {
  switch (split) {
    case SplitKind::kEnv1Train: return "env1-train";
    case SplitKind::kEnv1Valid: return "env1-valid";
    case SplitKind::kEnv1Test: return "env1-test";
    case SplitKind::kEnv2Test: return "env2-test";
    case SplitKind::kOod: return "ood";
    case SplitKind::kCorrupted: break;
  }
  throw ValidationError("corrupted splits have no fixed file");
}

const std::vector<std::string>& method_names() {
  static const std::vector<std::string> names = {"baseline", "ts", "imax", "gp"};
  return names;
}

fs::path ExperimentPaths::data(SplitKind split) const {
  return root / "data" / (split_file_stem(split) + ".bin");
}
fs::path ExperimentPaths::checkpoint(int seed_id) const {
  return root / "models" / (seed_tag(seed_id) + ".ckpt");
}
fs::path ExperimentPaths::training_log(int seed_id) const {
  return root / "models" / (seed_tag(seed_id) + "-log.csv");
}
fs::path ExperimentPaths::logits(SplitKind split, int seed_id) const {
  return root / "logits" / (split_file_stem(split) + "-" + seed_tag(seed_id) + ".csv");
}
fs::path ExperimentPaths::calibrator(std::string_view method, int seed_id) const {
  return root / "calibrators" / (std::string(method) + "-" + seed_tag(seed_id) + ".json");
}
fs::path ExperimentPaths::calibration_diagnostics() const {
  return root / "calibrators" / "diagnostics.csv";
}
fs::path ExperimentPaths::reports() const { return root / "reports"; }
fs::path ExperimentPaths::latency() const { return root / "latency.csv"; }
fs::path ExperimentPaths::sweep() const { return root / "sweep" / "sweep.csv"; }
fs::path ExperimentPaths::ood() const { return root / "ood"; }
fs::path ExperimentPaths::stamp(Stage stage) const {
  return root / "stamps" / (to_string(stage) + ".json");
}

Experiment::Experiment(ExperimentConfig config, std::ostream& log)
    : config_(std::move(config)), paths_{fs::path(config_.output_dir)}, log_(log) {
  validate(config_);
}

StageResult Experiment::run(Stage stage, bool force) {
  const std::string hash = stage_hash(config_, stage);
  const fs::path stamp = paths_.stamp(stage);
  if (!force && fs::exists(stamp)) {
    try {
      const auto j = nlohmann::json::parse(read_file(stamp));
      bool complete = j.at("hash").get<std::string>() == hash;
      StageResult cached;
      cached.skipped = true;
      for (const auto& p : j.at("outputs")) {
        cached.outputs.push_back(paths_.root / p.get<std::string>());
        complete = complete && fs::exists(cached.outputs.back());
      }
      if (complete) {
        log_ << to_string(stage) << ": up to date (" << hash << "), skipped\n";
        return cached;
      }
    } catch (const nlohmann::json::exception&) {
      // Unreadable stamp: rerun the stage.
    }
  }
  StageResult result;
  switch (stage) {
    case Stage::kGen: result = gen(); break;
    case Stage::kTrain: result = train(); break;
    case Stage::kCalibrate: result = calibrate(); break;
    case Stage::kReport: result = report(); break;
    case Stage::kSweep: result = sweep(); break;
    case Stage::kOod: result = ood(); break;
  }
  Json j;
  j["stage"] = to_string(stage);
  j["hash"] = hash;
  Json outputs = Json::array();
  for (const auto& p : result.outputs) outputs.push_back(fs::relative(p, paths_.root).generic_string());
  j["outputs"] = outputs;
  write_file(stamp, j.dump(2) + "\n");
  return result;
}

void Experiment::run_all(bool force) {
  for (Stage s : config_.stages) run(s, force);
}

RoiDataset Experiment::read_rois(Stage stage, SplitKind split) const {
  const fs::path path = paths_.data(split);
  if (!fs::exists(path)) {
    throw IoError("missing dataset " + path.string() + " (run the gen stage first)");
  }
  RoiDataset ds = load_rois(path, config_.model.num_classes);
  if (!(ds.split == tag_of(split))) {
    throw ValidationError(path.string() + " holds " + ds.split.to_string());
  }
  check_split_access(stage, ds.split);
  return ds;
}

LogitDataset Experiment::read_logits(Stage stage, SplitKind split, int seed_id) const {
  const fs::path path = paths_.logits(split, seed_id);
  if (!fs::exists(path)) {
    throw IoError("missing logit file " + path.string() + " (run the train stage first)");
  }
  LogitDataset ds = load_logits(path);
  if (!(ds.split == tag_of(split))) {
    throw ValidationError(path.string() + " holds " + ds.split.to_string());
  }
  check_split_access(stage, ds.split);
  return ds;
}

StageResult Experiment::gen() {
  ensure_dir(paths_.root);
  const auto& d = config_.dataset;
  std::vector<RoiDataset> sets =
      generate_dataset(default_scene(Environment::kEnv1, config_.master_seed),
                       SplitCounts{d.train, d.valid, d.test});
  SplitCounts env2_counts;
  env2_counts.test = d.env2;
  sets.push_back(std::move(generate_dataset(
      default_scene(Environment::kEnv2, config_.master_seed, d.env2_noise_offset_db), env2_counts)
                               .front()));
  sets.push_back(generate_ood(d.ood, config_.master_seed));

  std::vector<const RoiDataset*> ptrs;
  for (const auto& s : sets) ptrs.push_back(&s);
  const auto shared = split_disjointness_check<SpectrumROI>(ptrs);
  if (!shared.empty()) {
    throw ValidationError("generated splits share " + std::to_string(shared.size()) +
                          " sample ids, e.g. " + *shared.begin());
  }
  StageResult result;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    const fs::path path = paths_.data(kDataSplits[i]);
    ensure_dir(path.parent_path());
    save_rois(path, sets[i]);
    result.outputs.push_back(path);
    result.outputs.push_back(sidecar_path(path));
    log_ << "gen: " << sets[i].split.to_string() << " " << sets[i].size() << " ROIs -> "
         << path.string() << "\n";
  }
  return result;
}

StageResult Experiment::train() {
  const RoiDataset train_set = read_rois(Stage::kTrain, SplitKind::kEnv1Train);
  const RoiDataset valid = read_rois(Stage::kTrain, SplitKind::kEnv1Valid);
  const TrainConfig cfg = config_.train_config();
  std::vector<std::optional<TrainedModel>> models(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), [&](std::size_t i) {
    models[i] = train_one(config_.model, cfg, static_cast<int>(i), train_set, valid);
  });

  StageResult result;
  ensure_dir(paths_.root / "models");
  for (const auto& m : models) {
    if (m->failure) throw ValidationError("training aborted: " + *m->failure);
    save_checkpoint(paths_.checkpoint(m->seed_id), *m);
    std::ostringstream log;
    write_training_log(log, m->log);
    write_file(paths_.training_log(m->seed_id), log.str());
    result.outputs.push_back(paths_.checkpoint(m->seed_id));
    result.outputs.push_back(paths_.training_log(m->seed_id));
    log_ << "train: " << seed_tag(m->seed_id) << " best epoch " << m->best_epoch
         << ", valid accuracy " << format_double(m->best_valid_accuracy) << "\n";
  }

  // Frozen-model inference. Held-out ROIs are loaded only after every
  // parameter is fixed and are never seen by the optimizer.
  ensure_dir(paths_.root / "logits");
  for (SplitKind split : kLogitSplits) {
    const fs::path path = paths_.data(split);
    if (!fs::exists(path)) throw IoError("missing dataset " + path.string());
    const RoiDataset data =
        split == SplitKind::kEnv1Valid ? valid : load_rois(path, config_.model.num_classes);
    if (!(data.split == tag_of(split))) {
      throw ValidationError(path.string() + " holds " + data.split.to_string());
    }
    for (const auto& m : models) {
      const LogitDataset logits = predict_logits(m->network, data, m->seed_id);
      save_logits(paths_.logits(split, m->seed_id), logits);
      result.outputs.push_back(paths_.logits(split, m->seed_id));
      result.outputs.push_back(sidecar_path(paths_.logits(split, m->seed_id)));
    }
  }
  log_ << "train: wrote " << kLogitSplits.size() * models.size() << " logit files\n";
  return result;
}

StageResult Experiment::calibrate() {
  const int n = config_.train.num_seeds;
  struct Fitted {
    std::string ts, imax, gp;
    std::string diagnostics;
  };
  std::vector<Fitted> fitted(n);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    const int seed_id = static_cast<int>(i);
    const LogitDataset valid = read_logits(Stage::kCalibrate, SplitKind::kEnv1Valid, seed_id);
    const int k = valid.num_classes;
    std::vector<int> labels;
    for (const auto& r : valid.records) labels.push_back(r.label);
    auto valid_nll = [&](const Calibrator& cal) {
      std::vector<ProbVector> probs;
      for (const auto& r : valid.records) probs.push_back(cal.apply(r.logits));
      return compute_nll(probs, labels);
    };

    const TemperatureScaling ts(fit_temperature(valid), k);
    const ImaxCalibrator imax(fit_imax(valid, config_.calibration.imax_bins));
    GpFitOptions opts;
    opts.knots = config_.calibration.gp_knots;
    opts.samples = config_.calibration.gp_samples;
    opts.steps = config_.calibration.gp_steps;
    opts.seed = mix_seed(config_.master_seed, 0x6b00 + i);
    GpFitDiagnostics diag;
    const GpScaling gp(fit_gp_scaling(valid, opts, &diag));

    double mi = 0.0;
    for (const auto& c : imax.bins().classes) mi += c.mutual_information;
    mi /= static_cast<double>(imax.bins().classes.size());
    std::string imax_warn, gp_warn;
    for (const auto& w : imax.bins().warnings) imax_warn += (imax_warn.empty() ? "" : "; ") + w;
    for (const auto& w : diag.warnings) gp_warn += (gp_warn.empty() ? "" : "; ") + w;
    auto quote = [](const std::string& s) {
      std::string q = "\"";
      for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
      return q + "\"";
    };
    std::ostringstream d;
    d << seed_id << ",ts," << format_double(ts.param().temperature) << ",,"
      << format_double(valid_nll(ts)) << ",\n";
    d << seed_id << ",imax,," << format_double(mi) << ',' << format_double(valid_nll(imax)) << ','
      << quote(imax_warn) << "\n";
    d << seed_id << ",gp,,," << format_double(diag.best_nll) << ',' << quote(gp_warn) << "\n";
    fitted[i] = {ts.to_json(), imax.to_json(), gp.to_json(), d.str()};
  });

  StageResult result;
  std::string diagnostics = "seed_id,method,temperature,mutual_information,valid_nll,warnings\n";
  for (int s = 0; s < n; ++s) {
    const std::pair<const char*, const std::string*> files[] = {
        {"ts", &fitted[s].ts}, {"imax", &fitted[s].imax}, {"gp", &fitted[s].gp}};
    for (const auto& [method, text] : files) {
      write_file(paths_.calibrator(method, s), *text + "\n");
      result.outputs.push_back(paths_.calibrator(method, s));
    }
    diagnostics += fitted[s].diagnostics;
  }
  write_file(paths_.calibration_diagnostics(), diagnostics);
  result.outputs.push_back(paths_.calibration_diagnostics());
  log_ << diagnostics;
  return result;
}

namespace {

// Per-seed calibrators of one method; empty when any seed's artifact is
// missing.
struct MethodSet {
  std::string name;
  std::vector<std::unique_ptr<Calibrator>> owned;
  std::map<int, const Calibrator*> per_seed;
  bool available = false;
};

std::vector<MethodSet> load_methods(const ExperimentPaths& paths, int num_seeds, int k,
                                    std::ostream& log) {
  std::vector<MethodSet> out;
  for (const auto& name : method_names()) {
    MethodSet m;
    m.name = name;
    m.available = true;
    for (int s = 0; s < num_seeds; ++s) {
      if (name == "baseline") {
        m.owned.push_back(make_identity(k));
      } else {
        const fs::path path = paths.calibrator(name, s);
        if (!fs::exists(path)) {
          log << "note: " << path.string() << " missing; " << name << " column left blank\n";
          m.available = false;
          break;
        }
        m.owned.push_back(calibrator_from_json(read_file(path)));
        require_clean_fit(*m.owned.back());
        if (m.owned.back()->num_classes() != k) {
          throw ValidationError(path.string() + " was fitted for a different class count");
        }
      }
      m.per_seed[s] = m.owned.back().get();
    }
    if (!m.available) m.per_seed.clear();
    out.push_back(std::move(m));
  }
  return out;
}

LogitDataset merge(std::vector<LogitDataset> parts) {
  LogitDataset all;
  all.split = parts.front().split;
  all.num_classes = parts.front().num_classes;
  all.generator_seed = parts.front().generator_seed;
  for (auto& p : parts) {
    if (!(p.split == all.split) || p.num_classes != all.num_classes) {
      throw ValidationError("logit files of one split disagree on split tag or K");
    }
    std::move(p.records.begin(), p.records.end(), std::back_inserter(all.records));
  }
  return all;
}

std::string csv_stat(const std::optional<Stat>& s) {
  if (!s) return ",";
  return format_double(s->mean) + "," + format_double(s->std);
}

std::string histogram_csv(const ConfidenceHistogram& h) {
  std::ostringstream out;
  write_histogram_csv(out, h);
  return out.str();
}

// OOD table and per-method histograms, shared by the report and ood stages.
void write_ood_outputs(const fs::path& dir, const LogitDataset& ood,
                       const std::vector<MethodSet>& methods, int bins, StageResult& result) {
  std::ostringstream table;
  const double uniform = 1.0 / static_cast<double>(ood.num_classes);
  table << "method,mmc_ood_mean,mmc_ood_std,uniform_reference\n";
  EvalOptions opts;
  opts.num_bins = bins;
  for (const auto& m : methods) {
    table << m.name << ',';
    if (m.available) {
      opts.method = m.name;
      const EvalReport r = evaluate(ood, m.per_seed, opts);
      table << csv_stat(r.mmc_ood);
      const fs::path hist = dir / (m.name + "-ood-hist.csv");
      write_file(hist, histogram_csv(r.hist_ood));
      result.outputs.push_back(hist);
    } else {
      table << ',';
    }
    table << ',' << format_double(uniform) << '\n';
  }
  write_file(dir / "ood-mmc.csv", table.str());
  result.outputs.push_back(dir / "ood-mmc.csv");
}

std::vector<LogitDataset> load_all_seeds(const std::function<LogitDataset(int)>& load, int n) {
  std::vector<LogitDataset> parts;
  for (int s = 0; s < n; ++s) parts.push_back(load(s));
  return parts;
}

}  // namespace

StageResult Experiment::report() {
  const int n = config_.train.num_seeds;
  const int k = config_.model.num_classes;
  const auto methods = load_methods(paths_, n, k, log_);
  const fs::path dir = paths_.reports();
  StageResult result;
  EvalOptions opts;
  opts.num_bins = config_.metric_bins;

  const SplitKind test_splits[] = {SplitKind::kEnv1Test, SplitKind::kEnv2Test};
  std::map<std::pair<std::string, SplitKind>, EvalReport> reports;
  std::optional<LogitDataset> env1_test;
  for (SplitKind split : test_splits) {
    LogitDataset logits = merge(load_all_seeds(
        [&](int s) { return read_logits(Stage::kReport, split, s); }, n));
    for (const auto& m : methods) {
      if (!m.available) continue;
      opts.method = m.name;
      EvalReport r = evaluate(logits, m.per_seed, opts);
      const std::string stem = m.name + "-" + split_file_stem(split);
      write_file(dir / "metrics" / (stem + ".json"), to_json(r) + "\n");
      std::ostringstream curve;
      if (r.curve) write_curve_csv(curve, *r.curve);
      write_file(dir / "curves" / (stem + ".csv"), curve.str());
      write_file(dir / "histograms" / (stem + "-correct.csv"), histogram_csv(r.hist_correct));
      write_file(dir / "histograms" / (stem + "-incorrect.csv"), histogram_csv(r.hist_incorrect));
      result.outputs.push_back(dir / "metrics" / (stem + ".json"));
      result.outputs.push_back(dir / "curves" / (stem + ".csv"));
      result.outputs.push_back(dir / "histograms" / (stem + "-correct.csv"));
      result.outputs.push_back(dir / "histograms" / (stem + "-incorrect.csv"));
      reports.emplace(std::make_pair(m.name, split), std::move(r));
    }
    if (split == SplitKind::kEnv1Test) env1_test = std::move(logits);
  }

  std::ostringstream md, csv;
  md << "| Method | Env1-Test Acc | Env1-Test ECE | Env1-Test MMC_incorrect "
        "| Env2-Test Acc | Env2-Test ECE | Env2-Test MMC_incorrect |\n";
  md << "|---|---|---|---|---|---|---|\n";
  csv << "method,split,accuracy_mean,accuracy_std,ece_mean,ece_std,mmc_incorrect_mean,"
         "mmc_incorrect_std\n";
  for (const auto& m : methods) {
    md << "| " << m.name;
    for (SplitKind split : test_splits) {
      auto it = reports.find({m.name, split});
      if (it == reports.end()) {
        md << " | - | - | -";
        csv << m.name << ',' << split_file_stem(split) << ",,,,,,\n";
        continue;
      }
      md << " | " << format_table_cells(it->second);
      csv << m.name << ',' << split_file_stem(split) << ',' << csv_stat(it->second.accuracy) << ','
          << csv_stat(it->second.ece) << ',' << csv_stat(it->second.mmc_incorrect) << '\n';
    }
    md << " |\n";
  }
  md << "\nMean ± std over " << n << " seeds, " << config_.metric_bins
     << " equal-mass ECE bins. Per-sample latency is in latency.csv.\n";
  write_file(dir / "table.md", md.str());
  write_file(dir / "table.csv", csv.str());
  result.outputs.push_back(dir / "table.md");
  result.outputs.push_back(dir / "table.csv");
  log_ << md.str();

  const LogitDataset ood = merge(load_all_seeds(
      [&](int s) { return read_logits(Stage::kReport, SplitKind::kOod, s); }, n));
  write_ood_outputs(dir, ood, methods, config_.metric_bins, result);

  // Latency: single-record applications on Env1-Test logits of seed 0.
  // Timings vary run to run, so they live outside the reports directory.
  std::vector<const LogitRecord*> records;
  for (const auto& r : env1_test->records) {
    if (r.seed_id == 0) records.push_back(&r);
  }
  std::ostringstream lat;
  lat << "method,mean_us,median_us,samples\n";
  for (const auto& m : methods) {
    if (!m.available) {
      lat << m.name << ",,,0\n";
      continue;
    }
    const Calibrator& cal = *m.per_seed.at(0);
    double sink = 0.0;
    for (int w = 0; w < config_.latency.warmup; ++w) {
      sink += cal.apply(records[w % records.size()]->logits).confidence();
    }
    std::vector<double> us(config_.latency.repeats);
    for (int i = 0; i < config_.latency.repeats; ++i) {
      const auto& z = records[i % records.size()]->logits;
      const auto t0 = std::chrono::steady_clock::now();
      sink += cal.apply(z).confidence();
      const auto t1 = std::chrono::steady_clock::now();
      us[i] = std::chrono::duration<double, std::micro>(t1 - t0).count();
    }
    double mean = 0.0;
    for (double v : us) mean += v;
    mean /= static_cast<double>(us.size());
    std::nth_element(us.begin(), us.begin() + us.size() / 2, us.end());
    double median = us[us.size() / 2];
    if (us.size() % 2 == 0) {
      median = 0.5 * (median + *std::max_element(us.begin(), us.begin() + us.size() / 2));
    }
    lat << m.name << ',' << format_double(mean) << ',' << format_double(median) << ','
        << us.size() << '\n';
    latency_sink = sink;
  }
  write_file(paths_.latency(), lat.str());
  result.outputs.push_back(paths_.latency());
  log_ << lat.str();
  return result;
}

StageResult Experiment::sweep() {
  const int n = config_.train.num_seeds;
  const int k = config_.model.num_classes;
  const RoiDataset test = read_rois(Stage::kSweep, SplitKind::kEnv1Test);
  std::vector<TrainedModel> models;
  for (int s = 0; s < n; ++s) {
    const fs::path path = paths_.checkpoint(s);
    if (!fs::exists(path)) throw IoError("missing checkpoint " + path.string());
    models.push_back(load_checkpoint(path));
    models.back().seed_id = s;
  }
  const auto sets = load_methods(paths_, n, k, log_);
  std::vector<SweepMethod> methods;
  for (const auto& m : sets) {
    if (m.available) methods.push_back({m.name, m.per_seed});
  }
  SweepOptions opts;
  opts.num_bins = config_.metric_bins;
  opts.seed = mix_seed(config_.master_seed, 0xc022);
  if (!config_.sweep_kinds.empty()) {
    opts.kinds.clear();
    for (const auto& name : config_.sweep_kinds) opts.kinds.push_back(parse_corruption_kind(name));
  }
  const auto rows = severity_sweep(models, test, methods, opts);
  std::ostringstream csv;
  write_sweep_csv(csv, rows);
  write_file(paths_.sweep(), csv.str());
  for (const auto& r : rows) {
    if (r.kind != "all") continue;
    log_ << "sweep: severity " << r.severity << ' ' << r.method << " accuracy "
         << format_double(r.accuracy) << " ece " << format_double(r.ece) << '\n';
  }
  StageResult result;
  result.outputs.push_back(paths_.sweep());
  return result;
}

StageResult Experiment::ood() {
  const int n = config_.train.num_seeds;
  const auto methods = load_methods(paths_, n, config_.model.num_classes, log_);
  const LogitDataset ood = merge(load_all_seeds(
      [&](int s) { return read_logits(Stage::kOod, SplitKind::kOod, s); }, n));
  StageResult result;
  write_ood_outputs(paths_.ood(), ood, methods, config_.metric_bins, result);
  log_ << read_file(paths_.ood() / "ood-mmc.csv");
  return result;
}

}  // namespace speccal

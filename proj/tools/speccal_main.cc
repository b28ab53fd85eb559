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

// speccal: runs the calibration benchmark pipeline stage by stage.
//
//   speccal gen|train|calibrate|report|sweep|ood|run --config <path>
//           [--out <dir>] [--seeds N] [--bins B] [--force]
//
// Exit codes: 0 success, 1 validation error, 2 I/O error.

#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "speccal/error.h"
#include "speccal/experiment.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;

struct Options {
  std::string config;
  std::optional<std::string> out;
  std::optional<int> seeds;
  std::optional<int> bins;
  bool force = false;
};

void add_common(CLI::App* cmd, Options& opts) {
  cmd->add_option("--config", opts.config, "Experiment config (JSON)")->required();
  cmd->add_option("--out", opts.out, "Output directory (overrides output_dir)");
  cmd->add_option("--seeds", opts.seeds, "Number of training seeds");
  cmd->add_option("--bins", opts.bins, "Number of ECE bins");
  cmd->add_flag("--force", opts.force, "Recompute even if the stage stamp matches");
}

speccal::ExperimentConfig resolve(const Options& opts) {
  speccal::ExperimentConfig cfg = speccal::load_config(opts.config);
  if (opts.out) cfg.output_dir = *opts.out;
  if (opts.seeds) cfg.train.num_seeds = *opts.seeds;
  if (opts.bins) cfg.metric_bins = *opts.bins;
  speccal::validate(cfg);
  return cfg;
}

int run(const std::string& command, const Options& opts) {
  try {
    speccal::Experiment exp(resolve(opts), std::cerr);
    if (command == "run") {
      exp.run_all(opts.force);
    } else {
      const speccal::Stage stage = speccal::parse_stage(command);
      const speccal::StageResult r = exp.run(stage, opts.force);
      if (r.skipped) std::cerr << command << ": up to date\n";
    }
    return kExitOk;
  } catch (const speccal::IoError& e) {
    std::cerr << "speccal: I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const speccal::ValidationError& e) {
    std::cerr << "speccal: validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "speccal: error: " << e.what() << "\n";
    return kExitValidation;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Post-hoc calibration benchmark on synthetic radar spectra"};
  app.require_subcommand(1);
  Options opts;
  const char* const kCommands[][2] = {
      {"gen", "Generate the synthetic datasets"},
      {"train", "Train classifiers and emit logits"},
      {"calibrate", "Fit calibrators on validation logits"},
      {"report", "Write metrics, tables and latency"},
      {"sweep", "Run the corruption severity sweep"},
      {"ood", "Report out-of-distribution confidence"},
      {"run", "Run every stage listed in the config"},
  };
  for (const auto& c : kCommands) add_common(app.add_subcommand(c[0], c[1]), opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitValidation;
  }
  return run(app.get_subcommands().front()->get_name(), opts);
}

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

// Acceptance suite: prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "oracles.h"
#include "speccal/classifier.h"
#include "speccal/experiment.h"
#include "speccal/gp_scaling.h"
#include "speccal/imax.h"
#include "speccal/metrics.h"
#include "speccal/temperature.h"

namespace fs = std::filesystem;
using speccal::LogitDataset;
using speccal::ProbVector;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

std::string padded_id(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "s%06zu", i);
  return buf;
}

// CSV with a header row, no quoted commas in the columns we read.
std::vector<std::map<std::string, std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
  };
  std::string line;
  std::getline(in, line);
  const auto header = split(line);
  std::vector<std::map<std::string, std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < header.size() && i < cells.size(); ++i) row[header[i]] = cells[i];
    rows.push_back(std::move(row));
  }
  return rows;
}

double number(const std::map<std::string, std::string>& row, const std::string& key) {
  const auto it = row.find(key);
  if (it == row.end() || it->second.empty()) {
    throw std::runtime_error("missing value for " + key);
  }
  return std::stod(it->second);
}

// 1. ECE against the sort-slice-sum oracle.
Outcome ece_oracle() {
  const auto start = Clock::now();
  std::mt19937_64 gen(1001);
  double worst = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    const int n = std::uniform_int_distribution<int>(1, 40)(gen);
    const int k = std::uniform_int_distribution<int>(2, 5)(gen);
    const int bins = std::uniform_int_distribution<int>(1, std::min(8, n))(gen);
    const bool coarse = trial % 2 == 0;  // coarse logits produce confidence ties
    std::normal_distribution<double> normal(0.0, 2.0);
    std::vector<ProbVector> probs;
    std::vector<int> labels;
    std::vector<double> conf;
    std::vector<std::uint8_t> correct;
    std::vector<std::string> ids;
    for (int i = 0; i < n; ++i) {
      std::vector<double> z(k);
      for (double& v : z) v = coarse ? std::round(normal(gen)) : normal(gen);
      probs.push_back(speccal::softmax(z));
      labels.push_back(std::uniform_int_distribution<int>(0, k - 1)(gen));
      conf.push_back(probs.back().confidence());
      correct.push_back(probs.back().argmax() == labels.back());
      ids.push_back(padded_id(i));
    }
    // Positional tie-break equals the id order here.
    const double a = speccal::compute_ece(probs, labels, bins);
    const double oracle = speccal::testing::brute_force_ece(conf, correct, ids, bins);
    worst = std::max(worst, std::abs(a - oracle));
    // Shuffled ids exercise the id tie-break.
    std::shuffle(ids.begin(), ids.end(), gen);
    const double b =
        speccal::ece_from_curve(speccal::reliability_curve(conf, correct, bins, ids));
    worst = std::max(worst,
                     std::abs(b - speccal::testing::brute_force_ece(conf, correct, ids, bins)));
  }
  const double t = seconds_since(start);
  return {worst <= 1e-12 && t < 5.0, "max |diff| " + fmt(worst) + ", " + fmt(t, 3) + " s"};
}

// 2. Temperature recovery.
Outcome temperature_recovery() {
  const auto start = Clock::now();
  double worst = 0.0;
  std::string where;
  for (double c : {0.5, 2.0, 3.0}) {
    for (int trial = 0; trial < 5; ++trial) {
      const LogitDataset data =
          speccal::testing::synthetic_logits(5000, 7, 2.0, c, 100 * trial + 7);
      const double t = speccal::fit_temperature(data).temperature;
      const double rel = std::abs(t - c) / c;
      if (rel > worst) {
        worst = rel;
        where = "c=" + fmt(c) + " T=" + fmt(t);
      }
    }
  }
  const double t = seconds_since(start);
  return {worst <= 0.10 && t < 30.0,
          "max relative error " + fmt(worst) + " (" + where + "), " + fmt(t, 3) + " s"};
}

// 3. I-Max optimality on small sets.
Outcome imax_optimality() {
  const auto start = Clock::now();
  std::mt19937_64 gen(303);
  double worst = 0.0;
  bool monotone = true;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = std::uniform_int_distribution<int>(8, 30)(gen);
    const int bins = std::uniform_int_distribution<int>(2, 4)(gen);
    std::normal_distribution<double> normal;
    const double signal = std::uniform_real_distribution<double>(0.0, 2.0)(gen);
    std::vector<double> s;
    std::vector<std::uint8_t> t;
    for (int i = 0; i < n; ++i) {
      s.push_back(normal(gen));
      t.push_back(normal(gen) + signal * s.back() > 0.0);
    }
    const speccal::MiBinning b = speccal::fit_mi_binning(s, t, bins);
    const double best = speccal::testing::exhaustive_max_mutual_information(s, t, bins);
    worst = std::max(worst, std::abs(b.mutual_information - best));
    for (std::size_t i = 1; i < b.sweep_history.size(); ++i) {
      if (b.sweep_history[i] < b.sweep_history[i - 1]) monotone = false;
    }
  }
  const double t = seconds_since(start);
  return {worst <= 1e-9 && monotone && t < 60.0,
          "max |MI - exhaustive| " + fmt(worst) + " nats, MI monotone: " +
              (monotone ? "yes" : "no") + ", " + fmt(t, 3) + " s"};
}

// 4. Argmax invariance of TS and GP.
Outcome argmax_invariance() {
  const LogitDataset valid = speccal::testing::synthetic_logits(2000, 7, 2.0, 2.5, 404);
  const speccal::TemperatureScaling ts(speccal::fit_temperature(valid), 7);
  speccal::GpFitOptions opts;
  opts.steps = 300;
  const speccal::GpScaling gp(speccal::fit_gp_scaling(valid, opts));
  std::mt19937_64 gen(405);
  std::normal_distribution<double> normal(0.0, 4.0);
  int violations = 0;
  for (int i = 0; i < 10000; ++i) {
    std::vector<double> z(7);
    for (double& v : z) v = normal(gen);
    const int expected = speccal::argmax(z);
    if (ts.apply(z).argmax() != expected) ++violations;
    if (gp.apply(z).argmax() != expected) ++violations;
  }
  return {violations == 0, std::to_string(violations) + " violations over 10000 records"};
}

struct PipelineRun {
  fs::path dir;
  double seconds = 0.0;
  std::string error;
};

PipelineRun run_pipeline(speccal::ExperimentConfig config, const fs::path& dir) {
  PipelineRun run{dir, 0.0, {}};
  fs::remove_all(dir);
  config.output_dir = dir.string();
  std::ofstream log(dir.string() + ".log");
  const auto start = Clock::now();
  try {
    speccal::Experiment(config, log).run_all();
  } catch (const std::exception& e) {
    run.error = e.what();
  }
  run.seconds = seconds_since(start);
  return run;
}

using Table = std::map<std::pair<std::string, std::string>, std::map<std::string, std::string>>;

Table read_table(const fs::path& path) {
  Table t;
  for (auto& row : read_csv(path)) t[{row["method"], row["split"]}] = row;
  return t;
}

// 5. Calibration improvement on the default pipeline.
Outcome calibration_improvement(const PipelineRun& run) {
  const Table t = read_table(run.dir / "reports" / "table.csv");
  auto ece = [&](const std::string& m, const std::string& split) {
    return number(t.at({m, split}), "ece_mean");
  };
  const double base = ece("baseline", "env1-test");
  const double ts = ece("ts", "env1-test");
  const double imax = ece("imax", "env1-test");
  const double gp = ece("gp", "env1-test");
  const double best = std::min({ts, imax, gp});
  const double reduction = 1.0 - best / base;
  const double env2 = ece("baseline", "env2-test");
  const bool ok = base > ts && ts > std::max(imax, gp) && reduction >= 0.40 && env2 > base &&
                  run.seconds <= 900.0;
  return {ok, "Env1 ECE baseline " + fmt(base) + ", ts " + fmt(ts) + ", imax " + fmt(imax) +
                  ", gp " + fmt(gp) + "; best reduction " + fmt(100.0 * reduction, 3) +
                  "%; Env2 baseline " + fmt(env2) + "; pipeline " + fmt(run.seconds, 4) + " s"};
}

// 6. Over-confidence of misclassified samples.
Outcome overconfidence(const PipelineRun& run) {
  const Table t = read_table(run.dir / "reports" / "table.csv");
  const double base = number(t.at({"baseline", "env1-test"}), "mmc_incorrect_mean");
  const double gp = number(t.at({"gp", "env1-test"}), "mmc_incorrect_mean");
  return {base >= 0.6 && base - gp >= 0.1,
          "Env1 MMC_incorrect baseline " + fmt(base) + ", gp " + fmt(gp) + ", drop " +
              fmt(base - gp)};
}

// 7. Corruption sweep trends.
Outcome corruption_sweep(const PipelineRun& run) {
  std::map<std::pair<std::string, int>, std::pair<double, double>> avg;  // (acc, ece)
  for (const auto& row : read_csv(run.dir / "sweep" / "sweep.csv")) {
    if (row.at("kind") != "all") continue;
    avg[{row.at("method"), std::stoi(row.at("severity"))}] = {number(row, "accuracy"),
                                                              number(row, "ece")};
  }
  bool ok = true;
  std::ostringstream d;
  d << "baseline acc/ece by severity:";
  for (int s = 1; s <= 3; ++s) {
    const auto [acc, ece] = avg.at({"baseline", s});
    d << ' ' << fmt(acc) << '/' << fmt(ece);
    if (s > 1) {
      const auto [prev_acc, prev_ece] = avg.at({"baseline", s - 1});
      if (!(acc < prev_acc) || ece < prev_ece) ok = false;
    }
    for (const char* m : {"ts", "imax", "gp"}) {
      if (avg.at({m, s}).second > ece) {
        ok = false;
        d << " [" << m << " above baseline at severity " << s << ']';
      }
    }
  }
  return {ok, d.str()};
}

// 8. OOD confidence.
Outcome ood_confidence(const PipelineRun& run) {
  std::map<std::string, std::map<std::string, std::string>> rows;
  for (auto& row : read_csv(run.dir / "reports" / "ood-mmc.csv")) rows[row["method"]] = row;
  const double base = number(rows.at("baseline"), "mmc_ood_mean");
  const double uniform = number(rows.at("baseline"), "uniform_reference");
  bool ok = base >= 1.0 / 7.0 + 0.2 && std::abs(uniform - 1.0 / 7.0) < 1e-12;
  std::ostringstream d;
  d << "OOD MMC baseline " << fmt(base);
  for (const char* m : {"ts", "imax", "gp"}) {
    const double v = number(rows.at(m), "mmc_ood_mean");
    d << ", " << m << ' ' << fmt(v);
    if (!(v < base)) ok = false;
  }
  d << "; uniform reference " << fmt(uniform, 8);
  return {ok, d.str()};
}

// 9. Latency ratio.
Outcome latency_ratio(const PipelineRun& run) {
  std::map<std::string, double> median;
  for (const auto& row : read_csv(run.dir / "latency.csv")) {
    median[row.at("method")] = number(row, "median_us");
  }
  const double ratio = median.at("gp") / median.at("imax");
  return {ratio >= 10.0, "median us: gp " + fmt(median.at("gp")) + ", imax " +
                             fmt(median.at("imax")) + ", ratio " + fmt(ratio, 3)};
}

// 10. Classifier gradients.
Outcome gradient_correctness() {
  const double err = speccal::gradient_check(speccal::tiny_model_spec());
  return {err < 1e-3, "max relative error " + fmt(err)};
}

// 11. Two runs of one config give byte-identical reports.
Outcome reproducibility(const speccal::ExperimentConfig& config, const fs::path& work) {
  const PipelineRun a = run_pipeline(config, work / "repro-a");
  const PipelineRun b = run_pipeline(config, work / "repro-b");
  if (!a.error.empty() || !b.error.empty()) return {false, "run failed: " + a.error + b.error};
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(a.dir / "reports")) {
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), a.dir));
  }
  std::size_t other = 0;
  for (const auto& e : fs::recursive_directory_iterator(b.dir / "reports")) {
    if (e.is_regular_file()) ++other;
  }
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
  };
  std::size_t differing = 0;
  for (const auto& rel : files) {
    if (slurp(a.dir / rel) != slurp(b.dir / rel)) ++differing;
  }
  const bool ok = !files.empty() && other == files.size() && differing == 0;
  return {ok, std::to_string(files.size()) + " report files, " + std::to_string(differing) +
                  " differ" + (other == files.size() ? "" : ", file sets differ")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"speccal acceptance suite"};
  std::string work_dir = "acceptance-work";
  std::string default_config, reduced_config;
  app.add_option("--work-dir", work_dir, "Scratch directory for pipeline runs");
  app.add_option("--default-config", default_config, "Config of the full pipeline")->required();
  app.add_option("--reduced-config", reduced_config, "Config of the reproducibility runs")
      ->required();
  CLI11_PARSE(app, argc, argv);

  int failures = 0;
  auto report = [&](int id, const std::string& name, const std::function<Outcome()>& check) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << o.detail
              << std::endl;
  };

  report(1, "ECE matches sort-slice-sum oracle", ece_oracle);
  report(2, "temperature recovery", temperature_recovery);
  report(3, "I-Max matches exhaustive boundary search", imax_optimality);
  report(4, "TS and GP preserve argmax", argmax_invariance);

  const fs::path work = fs::absolute(work_dir);
  fs::create_directories(work);
  std::optional<PipelineRun> full;
  auto with_pipeline = [&](const std::function<Outcome(const PipelineRun&)>& check) {
    return [&, check]() -> Outcome {
      if (!full) {
        full = run_pipeline(speccal::load_config(default_config), work / "default");
      }
      if (!full->error.empty()) return {false, "pipeline failed: " + full->error};
      return check(*full);
    };
  };
  report(5, "calibration improves ECE on the default pipeline",
         with_pipeline(calibration_improvement));
  report(6, "baseline over-confidence and GP reduction", with_pipeline(overconfidence));
  report(7, "corruption sweep trends", with_pipeline(corruption_sweep));
  report(8, "OOD confidence", with_pipeline(ood_confidence));
  report(9, "GP vs I-Max latency", with_pipeline(latency_ratio));
  report(10, "classifier gradient check", gradient_correctness);
  report(11, "byte-identical reports across runs", [&] {
    return reproducibility(speccal::load_config(reduced_config), work);
  });

  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << std::endl;
  return failures == 0 ? 0 : 1;
}

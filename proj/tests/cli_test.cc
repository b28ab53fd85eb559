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

// Runs the speccal binary and checks its exit-code contract.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "gtest/gtest.h"

namespace {

namespace fs = std::filesystem;

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SPECCAL_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path write_config(const std::string& name, const std::string& body) {
  const fs::path p = fs::temp_directory_path() / ("speccal-cli-" + name + ".json");
  std::ofstream(p) << body;
  return p;
}

TEST(CliTest, MissingConfigIsAnIoError) {
  EXPECT_EQ(run_cli("gen --config /nonexistent/speccal.json"), 2);
}

TEST(CliTest, InvalidConfigIsAValidationError) {
  const fs::path cfg = write_config("bad", R"({"model": {"num_classes": 3}})");
  EXPECT_EQ(run_cli("gen --config " + cfg.string()), 1);
  const fs::path typo = write_config("typo", R"({"trian": {}})");
  EXPECT_EQ(run_cli("gen --config " + typo.string()), 1);
}

TEST(CliTest, UsageErrorsAreValidationErrors) {
  EXPECT_EQ(run_cli(""), 1);
  EXPECT_EQ(run_cli("deploy --config x.json"), 1);
  EXPECT_EQ(run_cli("gen"), 1);
  EXPECT_EQ(run_cli("gen --config x.json --bins many"), 1);
  EXPECT_EQ(run_cli("--help"), 0);
}

TEST(CliTest, StageWithoutInputsIsAnIoError) {
  const fs::path out = fs::temp_directory_path() / "speccal-cli-empty";
  fs::remove_all(out);
  const fs::path cfg = write_config("ok", "{}");
  EXPECT_EQ(run_cli("calibrate --config " + cfg.string() + " --out " + out.string()), 2);
}

TEST(CliTest, OverridesAreValidated) {
  const fs::path cfg = write_config("ok2", "{}");
  EXPECT_EQ(run_cli("report --config " + cfg.string() + " --seeds 0"), 1);
  EXPECT_EQ(run_cli("report --config " + cfg.string() + " --bins 0"), 1);
}

TEST(CliTest, GenRunsEndToEnd) {
  const fs::path out = fs::temp_directory_path() / "speccal-cli-gen";
  fs::remove_all(out);
  const fs::path cfg = write_config(
      "gen", R"({"dataset": {"train": 70, "valid": 14, "test": 14, "env2": 14, "ood": 10}})");
  EXPECT_EQ(run_cli("gen --config " + cfg.string() + " --out " + out.string()), 0);
  EXPECT_TRUE(fs::exists(out / "data" / "env2-test.bin"));
  EXPECT_EQ(run_cli("gen --config " + cfg.string() + " --out " + out.string()), 0);
}

}  // namespace

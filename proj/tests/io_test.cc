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

#include "speccal/logit_io.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "gtest/gtest.h"
#include "oracles.h"
#include "speccal/error.h"
#include "speccal/roi_io.h"
#include "speccal/spectra_sim.h"

namespace speccal {
namespace {

namespace fs = std::filesystem;

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("speccal-io-" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TEST(LogitCsvTest, RoundTripIsExact) {
  LogitDataset ds = testing::synthetic_logits(200, 5, 3.0, 1.7, 8, SplitTag::env2_test(), 3);
  ds.records[0].logits[0] = std::numeric_limits<double>::denorm_min();
  ds.records[1].logits[1] = -1e300;
  ds.records[2].label = kOodLabel;
  std::stringstream io;
  write_logit_csv(io, ds);
  const LogitDataset back = read_logit_csv(io);
  EXPECT_EQ(back.records, ds.records);
  EXPECT_EQ(back.num_classes, 5);
}

TEST(LogitCsvTest, HeaderSchema) {
  const LogitDataset ds = testing::synthetic_logits(1, 3, 1.0, 1.0, 1);
  std::stringstream io;
  write_logit_csv(io, ds);
  std::string header;
  std::getline(io, header);
  EXPECT_EQ(header, "sample_id,label,seed_id,z_0,z_1,z_2");
}

TEST(LogitCsvTest, RejectsMalformedInput) {
  std::istringstream no_header("");
  EXPECT_THROW(read_logit_csv(no_header), ValidationError);
  std::istringstream bad_header("id,label,seed_id,z_0\n");
  EXPECT_THROW(read_logit_csv(bad_header), ValidationError);
  std::istringstream short_row("sample_id,label,seed_id,z_0,z_1\na,0,0,1.0\n");
  EXPECT_THROW(read_logit_csv(short_row), ValidationError);
  std::istringstream bad_number("sample_id,label,seed_id,z_0\na,0,0,abc\n");
  EXPECT_THROW(read_logit_csv(bad_number), ValidationError);
  std::istringstream bad_label("sample_id,label,seed_id,z_0,z_1\na,5,0,1,2\n");
  EXPECT_THROW(read_logit_csv(bad_label), ValidationError);
}

TEST(LogitFileTest, SidecarCarriesSplitAndSeed) {
  const fs::path dir = temp_dir("logits");
  const LogitDataset ds = testing::synthetic_logits(30, 4, 1.0, 1.0, 77, SplitTag::ood());
  save_logits(dir / "x.csv", ds);
  ASSERT_TRUE(fs::exists(sidecar_path(dir / "x.csv")));
  const LogitDataset back = load_logits(dir / "x.csv");
  EXPECT_EQ(back.split, SplitTag::ood());
  EXPECT_EQ(back.generator_seed, 77u);
  EXPECT_EQ(back.records, ds.records);
  EXPECT_THROW(load_logits(dir / "missing.csv"), IoError);

  // A sidecar that disagrees with the CSV is a schema violation.
  std::ofstream(sidecar_path(dir / "x.csv"))
      << R"({"split_tag": "OOD", "K": 4, "count": 31, "generator_seed": 77})";
  EXPECT_THROW(load_logits(dir / "x.csv"), ValidationError);
}

TEST(FormatDoubleTest, SeventeenDigitsRoundTrip) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 123456789.123456789}) {
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
}

TEST(RoiFileTest, RoundTripIsIdentity) {
  const fs::path dir = temp_dir("rois");
  const auto sets = generate_dataset(default_scene(Environment::kEnv1, 2), SplitCounts{70, 14, 21});
  save_rois(dir / "v.bin", sets[1]);
  const RoiDataset back = load_rois(dir / "v.bin");
  EXPECT_EQ(back.split, sets[1].split);
  EXPECT_EQ(back.generator_seed, sets[1].generator_seed);
  EXPECT_EQ(back.records, sets[1].records);
}

TEST(RoiFileTest, TruncatedFileIsAnIoError) {
  const fs::path dir = temp_dir("trunc");
  const auto sets = generate_dataset(default_scene(Environment::kEnv1, 2), SplitCounts{70, 14, 21});
  save_rois(dir / "v.bin", sets[1]);
  fs::resize_file(dir / "v.bin", fs::file_size(dir / "v.bin") - 10);
  EXPECT_THROW(load_rois(dir / "v.bin"), IoError);
  EXPECT_THROW(load_rois(dir / "nothing.bin"), IoError);
}

}  // namespace
}  // namespace speccal

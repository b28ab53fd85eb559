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

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace speccal {
namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

int parse_int(const std::string& s, std::size_t line_no) {
  char* end = nullptr;
  errno = 0;
  long v = std::strtol(s.c_str(), &end, 10);
  if (s.empty() || *end != '\0' || errno != 0) {
    throw ValidationError("logit csv line " + std::to_string(line_no) + ": bad integer '" + s + "'");
  }
  return static_cast<int>(v);
}

double parse_double(const std::string& s, std::size_t line_no) {
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') {
    throw ValidationError("logit csv line " + std::to_string(line_no) + ": bad number '" + s + "'");
  }
  return v;
}

}  // namespace

std::string format_double(double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

void write_logit_csv(std::ostream& out, const LogitDataset& dataset) {
  out << "sample_id,label,seed_id";
  for (int k = 0; k < dataset.num_classes; ++k) out << ",z_" << k;
  out << '\n';
  for (const auto& r : dataset.records) {
    if (r.sample_id.find_first_of(",\n\r") != std::string::npos) {
      throw ValidationError("sample id '" + r.sample_id + "' contains a CSV separator");
    }
    out << r.sample_id << ',' << r.label << ',' << r.seed_id;
    for (double z : r.logits) out << ',' << format_double(z);
    out << '\n';
  }
}

LogitDataset read_logit_csv(std::istream& in) {
  LogitDataset ds;
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("logit csv: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv_line(line);
  if (header.size() < 5 || header[0] != "sample_id" || header[1] != "label" ||
      header[2] != "seed_id") {
    throw ValidationError("logit csv: header must start with sample_id,label,seed_id");
  }
  const int k = static_cast<int>(header.size()) - 3;
  for (int i = 0; i < k; ++i) {
    if (header[3 + i] != "z_" + std::to_string(i)) {
      throw ValidationError("logit csv: expected column z_" + std::to_string(i));
    }
  }
  ds.num_classes = k;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (static_cast<int>(fields.size()) != k + 3) {
      throw ValidationError("logit csv line " + std::to_string(line_no) + ": expected " +
                            std::to_string(k + 3) + " fields");
    }
    LogitRecord r;
    r.sample_id = fields[0];
    r.label = parse_int(fields[1], line_no);
    r.seed_id = parse_int(fields[2], line_no);
    r.logits.reserve(k);
    for (int i = 0; i < k; ++i) r.logits.push_back(parse_double(fields[3 + i], line_no));
    ds.records.push_back(std::move(r));
  }
  validate(ds);
  return ds;
}

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".json");
}

void save_logits(const std::filesystem::path& path, const LogitDataset& dataset) {
  validate(dataset);
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    write_logit_csv(out, dataset);
    if (!out) throw IoError("write failed for " + path.string());
  }
  nlohmann::ordered_json meta;
  meta["split_tag"] = dataset.split.to_string();
  meta["K"] = dataset.num_classes;
  meta["count"] = dataset.records.size();
  meta["generator_seed"] = dataset.generator_seed;
  std::ofstream side(sidecar_path(path), std::ios::binary);
  if (!side) throw IoError("cannot write " + sidecar_path(path).string());
  side << meta.dump(2) << '\n';
}

LogitDataset load_logits(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read logit file " + path.string());
  LogitDataset ds = read_logit_csv(in);
  std::ifstream side(sidecar_path(path), std::ios::binary);
  if (!side) throw IoError("missing sidecar " + sidecar_path(path).string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(side);
    ds.split = SplitTag::parse(meta.at("split_tag").get<std::string>());
    ds.generator_seed = meta.at("generator_seed").get<std::uint64_t>();
    if (meta.at("K").get<int>() != ds.num_classes) {
      throw ValidationError("sidecar K disagrees with " + path.string());
    }
    if (meta.at("count").get<std::size_t>() != ds.records.size()) {
      throw ValidationError("sidecar count disagrees with " + path.string());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("bad sidecar for " + path.string() + ": " + e.what());
  }
  return ds;
}

}  // namespace speccal

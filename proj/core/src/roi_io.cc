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

#include "speccal/roi_io.h"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "speccal/logit_io.h"

namespace speccal {
namespace {

template <typename T>
void put(std::ostream& out, T value) {
  static_assert(sizeof(T) == 4);
  std::uint32_t bits;
  std::memcpy(&bits, &value, 4);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
  char buf[4];
  std::memcpy(buf, &bits, 4);
  out.write(buf, 4);
}

template <typename T>
T get(std::istream& in) {
  char buf[4];
  if (!in.read(buf, 4)) throw IoError("ROI file truncated");
  std::uint32_t bits;
  std::memcpy(&bits, buf, 4);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
  T value;
  std::memcpy(&value, &bits, 4);
  return value;
}

}  // namespace

void save_rois(const std::filesystem::path& path, const RoiDataset& dataset) {
  int h = 0, w = 0;
  if (!dataset.records.empty()) {
    h = dataset.records.front().height;
    w = dataset.records.front().width;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& r : dataset.records) {
    if (r.height != h || r.width != w ||
        r.magnitude_db.size() != static_cast<std::size_t>(h) * w) {
      throw ValidationError("ROI " + r.sample_id() + " has inconsistent grid shape");
    }
    put<std::int32_t>(out, r.label);
    put<std::int32_t>(out, r.scene_id);
    put<std::int32_t>(out, r.frame_id);
    put<float>(out, r.range_m);
    for (float v : r.magnitude_db) put<float>(out, v);
  }
  if (!out) throw IoError("write failed for " + path.string());

  nlohmann::ordered_json meta;
  meta["H"] = h;
  meta["W"] = w;
  meta["count"] = dataset.records.size();
  meta["split_tag"] = dataset.split.to_string();
  meta["master_seed"] = dataset.generator_seed;
  std::ofstream side(sidecar_path(path), std::ios::binary);
  if (!side) throw IoError("cannot write " + sidecar_path(path).string());
  side << meta.dump(2) << '\n';
}

RoiDataset load_rois(const std::filesystem::path& path, int num_classes) {
  std::ifstream side(sidecar_path(path), std::ios::binary);
  if (!side) throw IoError("missing ROI sidecar " + sidecar_path(path).string());
  RoiDataset ds;
  ds.num_classes = num_classes;
  int h = 0, w = 0;
  std::size_t count = 0;
  try {
    const auto meta = nlohmann::json::parse(side);
    h = meta.at("H").get<int>();
    w = meta.at("W").get<int>();
    count = meta.at("count").get<std::size_t>();
    ds.split = SplitTag::parse(meta.at("split_tag").get<std::string>());
    ds.generator_seed = meta.at("master_seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("bad ROI sidecar for " + path.string() + ": " + e.what());
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read ROI file " + path.string());
  const auto cells = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  const auto expected = count * (16 + 4 * cells);
  std::error_code ec;
  const auto actual = std::filesystem::file_size(path, ec);
  if (ec || actual != expected) {
    throw IoError("ROI file " + path.string() + " has " + std::to_string(actual) +
                  " bytes, sidecar implies " + std::to_string(expected));
  }
  ds.records.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    SpectrumROI r;
    r.label = get<std::int32_t>(in);
    r.scene_id = get<std::int32_t>(in);
    r.frame_id = get<std::int32_t>(in);
    r.range_m = get<float>(in);
    r.height = h;
    r.width = w;
    r.magnitude_db.resize(cells);
    for (auto& v : r.magnitude_db) v = get<float>(in);
    check_label(r.label, num_classes);
    ds.records.push_back(std::move(r));
  }
  return ds;
}

}  // namespace speccal

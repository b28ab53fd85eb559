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

#ifndef SPECCAL_LOGIT_IO_H_
#define SPECCAL_LOGIT_IO_H_

#include <filesystem>
#include <iosfwd>
#include <string>

#include "speccal/types.h"

namespace speccal {

// Logit file: UTF-8 CSV with header `sample_id,label,seed_id,z_0,...,z_{K-1}`.
// Labels are integers (OOD is -1); floats use 17 significant digits so the
// text form round-trips exactly.
void write_logit_csv(std::ostream& out, const LogitDataset& dataset);
LogitDataset read_logit_csv(std::istream& in);

// Writes `path` plus the JSON sidecar `path + ".json"` holding
// {split_tag, K, count, generator_seed}.
void save_logits(const std::filesystem::path& path, const LogitDataset& dataset);

// Reads a logit CSV and its sidecar. The sidecar must agree with the CSV on
// K and count. Throws IoError for missing/unreadable files and
// ValidationError for schema violations.
LogitDataset load_logits(const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& path);

// %.17g formatting shared by every text writer in the project.
std::string format_double(double value);

}  // namespace speccal

#endif  // SPECCAL_LOGIT_IO_H_

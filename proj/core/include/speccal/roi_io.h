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

#ifndef SPECCAL_ROI_IO_H_
#define SPECCAL_ROI_IO_H_

#include <filesystem>

#include "speccal/spectra_sim.h"

namespace speccal {

// Binary little-endian record stream, one record per ROI:
//   label:int32, scene_id:int32, frame_id:int32, range_m:float32,
//   grid: H*W float32 row-major
// plus a JSON sidecar `path + ".json"` with {H, W, count, split_tag,
// master_seed}.
void save_rois(const std::filesystem::path& path, const RoiDataset& dataset);

// `num_classes` is not part of the file; it comes from the experiment config.
RoiDataset load_rois(const std::filesystem::path& path, int num_classes = kDefaultNumClasses);

}  // namespace speccal

#endif  // SPECCAL_ROI_IO_H_

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

#ifndef SPECCAL_SPECTRA_SIM_H_
#define SPECCAL_SPECTRA_SIM_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "speccal/types.h"

namespace speccal {

inline constexpr double kMaxRangeM = 30.0;
inline constexpr double kMinDb = -60.0;
inline constexpr double kMaxDb = 40.0;

// Range-azimuth magnitude patch in dB, row-major with range along rows.
struct SpectrumROI {
  int label = kOodLabel;
  int scene_id = 0;
  int frame_id = 0;
  float range_m = 0.0f;
  int height = 32;
  int width = 32;
  std::vector<float> magnitude_db;

  float at(int row, int col) const { return magnitude_db[static_cast<std::size_t>(row) * width + col]; }
  std::string sample_id() const;

  friend bool operator==(const SpectrumROI&, const SpectrumROI&) = default;
};

inline std::string record_id(const SpectrumROI& r) { return r.sample_id(); }

using RoiDataset = LabeledDataset<SpectrumROI>;

struct GridSpec {
  int range_bins = 32;
  int azimuth_bins = 32;
  double range_bin_m = 0.15;
  double azimuth_bin_deg = 1.0;
  // Main-lobe widths of the point-spread function, in bins.
  double psf_range_width = 1.0;
  double psf_azimuth_width = 2.0;
};

// A point reflector relative to the ROI center.
struct PointScatterer {
  double range_offset_m = 0.0;
  double azimuth_offset_deg = 0.0;
  double power_db = 0.0;
};

// Sums the separable windowed-sinc power responses of `scatterers`, adds
// exponential noise with mean power at `noise_floor_db` (unless `add_noise`
// is false), converts to dB and clamps to [kMinDb, kMaxDb]. A scatterer at
// zero offset peaks in cell (range_bins / 2, azimuth_bins / 2).
std::vector<float> render_scatterers(std::span<const PointScatterer> scatterers,
                                     double noise_floor_db, std::uint64_t rng_seed,
                                     const GridSpec& grid = {}, bool add_noise = true);

// Power response of a unit scatterer at a fractional bin distance.
double psf_power(double distance_bins, double mainlobe_width);

struct ObjectModel {
  int label = kOodLabel;
  std::string name;
  int min_scatterers = 1;
  int max_scatterers = 1;
  double length_m = 1.0;  // extent along the object's own axis
  double width_m = 1.0;
  double reflectivity_mean_db = 0.0;
  double reflectivity_spread_db = 1.0;
  std::uint64_t instance_seed = 0;
};

// Axis-aligned box in (scatterer count, length, width, mean reflectivity)
// covering every instance a model can spawn.
struct ParameterBox {
  double lo[4];
  double hi[4];
};

// The seven in-distribution classes: car, construction barrier, motorbike,
// baby carriage, bicycle, pedestrian, stop sign (labels 0..6).
std::vector<ObjectModel> class_models();
// The five out-of-distribution object types, all labelled kOodLabel.
std::vector<ObjectModel> ood_models();
const std::vector<std::string>& class_names();

// Instance variation: the instance seed perturbs extents by up to
// kInstanceExtentJitter (relative) and mean reflectivity by up to
// kInstanceReflectivityJitterDb.
ObjectModel make_instance(const ObjectModel& base, std::uint64_t instance_seed);
ParameterBox parameter_box(const ObjectModel& base);

inline constexpr double kInstanceExtentJitter = 0.10;
inline constexpr double kInstanceReflectivityJitterDb = 2.0;
inline constexpr double kOodReflectivityJitterDb = 1.0;

struct SensorPose {
  double range_m = 10.0;
  double azimuth_deg = 0.0;  // bearing of the object from the sensor boresight
  double aspect_deg = 0.0;   // line of sight relative to the object's long axis
};

inline constexpr double kFieldOfViewDeg = 60.0;

// Renders one ROI of `model` seen from `pose`. Deterministic in rng_seed.
// Throws ValidationError if the object is outside (0, 30] m or beyond the
// +-60 degree field of view.
SpectrumROI generate_roi(const ObjectModel& model, const SensorPose& pose, double noise_floor_db,
                         std::uint64_t rng_seed, const GridSpec& grid = {});

enum class Environment { kEnv1, kEnv2, kOod };

struct Placement {
  int model_index = 0;  // into class_models() (or ood_models() for kOod)
  std::uint64_t instance_seed = 0;
  double x_m = 0.0;
  double y_m = 0.0;
  double heading_deg = 0.0;
};

// Straight or gently curving drive; the sensor advances `step_m` per frame.
struct DrivingPattern {
  double start_x_m = 0.0;
  double start_y_m = 0.0;
  double heading_deg = 0.0;
  double yaw_rate_deg = 0.0;  // per frame
  double step_m = 0.1;
  int frames = 100;
};

struct SceneConfig {
  Environment environment = Environment::kEnv1;
  int scene_id = 1;
  std::vector<Placement> placements;
  std::vector<DrivingPattern> patterns;
  double noise_floor_db = -10.0;
  double noise_floor_jitter_db = 1.5;  // per-capture standard deviation
  // Probability that a capture is annotated with a wrong (uniformly drawn)
  // class, as happens with track-to-object association errors.
  double label_noise = 0.015;
  int repetitions = 7;
  double repetition_jitter_m = 0.3;
  std::uint64_t master_seed = 0;
  int num_classes = kDefaultNumClasses;
  GridSpec grid;
};

// Default layouts. Env2 differs in placements, driving patterns, instance
// seeds of cars/motorbikes/bicycles/pedestrians and a noise floor raised by
// env2_noise_offset_db.
SceneConfig default_scene(Environment env, std::uint64_t master_seed,
                          double env2_noise_offset_db = 3.0);

struct SplitCounts {
  std::size_t train = 8000;
  std::size_t valid = 600;
  std::size_t test = 1500;
};

// Env1: repetition 0 -> Env1-Valid, repetition 1 -> Env1-Test, the rest ->
// Env1-Train; returns {train, valid, test}. Env2 and OOD scenes return one
// dataset of `counts.test` ROIs. Each split is class-balanced by even-stride
// selection from its pool. Throws ValidationError when the scene has too
// few repetitions or frames for the requested counts.
std::vector<RoiDataset> generate_dataset(const SceneConfig& config, const SplitCounts& counts);

// OOD set from the five outlier models, labels all kOodLabel.
RoiDataset generate_ood(std::size_t count, std::uint64_t master_seed);

}  // namespace speccal

#endif  // SPECCAL_SPECTRA_SIM_H_

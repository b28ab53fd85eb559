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

#include "speccal/spectra_sim.h"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "speccal/random.h"

namespace speccal {
namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr double kPsfSupport = 3.0;        // window half-width in main-lobe widths
constexpr double kPathLossExponent = 25.0;  // dB per decade of range
constexpr double kReferenceRangeM = 10.0;
constexpr double kScintillationDb = 1.5;
constexpr double kLobeGainDb = 6.0;
constexpr double kPositionJitterM = 0.02;
// Instance deviation from the type template.
constexpr double kLayoutJitter = 0.08;  // fraction of the extent
constexpr double kInstancePowerJitterDb = 1.5;
constexpr double kLobeJitterDeg = 25.0;

// FNV-1a of the model name: the template must not depend on any run seed.
std::uint64_t template_seed(const std::string& name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct FrameRef {
  int placement = 0;
  int frame_id = 0;
  SensorPose pose;
  std::uint64_t seed = 0;
};

double wrap_deg(double a) {
  a = std::fmod(a + 180.0, 360.0);
  if (a < 0) a += 360.0;
  return a - 180.0;
}

// All captures of one repetition in frame order.
std::vector<FrameRef> enumerate_frames(const SceneConfig& cfg, int repetition) {
  std::vector<FrameRef> out;
  Rng jitter(mix_seed(cfg.master_seed, 0x7e9000 + static_cast<std::uint64_t>(cfg.scene_id) * 131 +
                                           static_cast<std::uint64_t>(repetition)));
  const int n_obj = static_cast<int>(cfg.placements.size());
  int pattern_base = 0;
  for (std::size_t p = 0; p < cfg.patterns.size(); ++p) {
    const auto& pat = cfg.patterns[p];
    const double dx = jitter.normal(0.0, cfg.repetition_jitter_m);
    const double dy = jitter.normal(0.0, cfg.repetition_jitter_m);
    double x = pat.start_x_m + dx;
    double y = pat.start_y_m + dy;
    double heading = pat.heading_deg;
    for (int step = 0; step < pat.frames; ++step) {
      for (int o = 0; o < n_obj; ++o) {
        const auto& pl = cfg.placements[o];
        const double rx = pl.x_m - x;
        const double ry = pl.y_m - y;
        const double range = std::hypot(rx, ry);
        const double bearing = std::atan2(ry, rx) / kDegToRad;
        const double azimuth = wrap_deg(bearing - heading);
        if (range > kMaxRangeM || range < 2.0 || std::abs(azimuth) > kFieldOfViewDeg) continue;
        FrameRef f;
        f.placement = o;
        // Unique per (repetition, pattern, step, object) within the scene.
        const long long idx =
            ((static_cast<long long>(repetition) * 100000 + pattern_base + step) * n_obj) + o;
        f.frame_id = static_cast<int>(idx);
        f.pose.range_m = range;
        f.pose.azimuth_deg = azimuth;
        f.pose.aspect_deg = wrap_deg(bearing + 180.0 - pl.heading_deg);
        f.seed = mix_seed(cfg.master_seed,
                          (static_cast<std::uint64_t>(cfg.scene_id) << 40) ^
                              static_cast<std::uint64_t>(f.frame_id));
        out.push_back(f);
      }
      x += pat.step_m * std::cos(heading * kDegToRad);
      y += pat.step_m * std::sin(heading * kDegToRad);
      heading += pat.yaw_rate_deg;
    }
    pattern_base += pat.frames;
  }
  return out;
}

// Class-balanced, evenly strided choice of `count` frames from `pool`.
std::vector<FrameRef> select_balanced(const std::vector<FrameRef>& pool,
                                      const std::vector<int>& placement_label, int num_groups,
                                      std::size_t count, const std::string& split) {
  std::vector<std::vector<const FrameRef*>> by_group(num_groups);
  for (const auto& f : pool) by_group[placement_label[f.placement]].push_back(&f);
  std::vector<FrameRef> chosen;
  chosen.reserve(count);
  for (int g = 0; g < num_groups; ++g) {
    const std::size_t want = count / num_groups + (static_cast<std::size_t>(g) < count % num_groups ? 1 : 0);
    const auto& items = by_group[g];
    if (items.size() < want) {
      throw ValidationError(split + ": requested " + std::to_string(want) +
                            " samples of group " + std::to_string(g) + " but only " +
                            std::to_string(items.size()) + " frames were generated");
    }
    for (std::size_t i = 0; i < want; ++i) {
      chosen.push_back(*items[i * items.size() / want]);
    }
  }
  std::sort(chosen.begin(), chosen.end(),
            [](const FrameRef& a, const FrameRef& b) { return a.frame_id < b.frame_id; });
  return chosen;
}

RoiDataset render_split(const SceneConfig& cfg, const std::vector<ObjectModel>& models,
                        const std::vector<FrameRef>& frames, SplitTag tag) {
  RoiDataset ds;
  ds.split = std::move(tag);
  ds.num_classes = cfg.num_classes;
  ds.generator_seed = cfg.master_seed;
  ds.records.reserve(frames.size());
  std::vector<ObjectModel> instances;
  for (const auto& pl : cfg.placements) {
    instances.push_back(make_instance(models.at(pl.model_index), pl.instance_seed));
  }
  for (const auto& f : frames) {
    Rng level(mix_seed(f.seed, 0x401e));
    const double noise_floor = cfg.noise_floor_db + level.normal(0.0, cfg.noise_floor_jitter_db);
    SpectrumROI roi = generate_roi(instances[f.placement], f.pose, noise_floor, f.seed, cfg.grid);
    roi.scene_id = cfg.scene_id;
    roi.frame_id = f.frame_id;
    // Annotation noise: the label names a different class than the object.
    if (!is_ood(roi.label) && cfg.label_noise > 0.0) {
      Rng annot(mix_seed(f.seed, 0x1abe1));
      if (annot.uniform() < cfg.label_noise) {
        const int other = static_cast<int>(annot.below(cfg.num_classes - 1));
        roi.label = other < roi.label ? other : other + 1;
      }
    }
    ds.records.push_back(std::move(roi));
  }
  return ds;
}

}  // namespace

std::string SpectrumROI::sample_id() const {
  return "s" + std::to_string(scene_id) + "-f" + std::to_string(frame_id);
}

double psf_power(double distance_bins, double mainlobe_width) {
  const double d = std::abs(distance_bins);
  if (d >= kPsfSupport * mainlobe_width) return 0.0;
  const double x = d / mainlobe_width;
  const double sinc = x < 1e-12 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
  const double window = 0.5 * (1.0 + std::cos(std::numbers::pi * x / kPsfSupport));
  const double amp = sinc * window;
  return amp * amp;
}

std::vector<float> render_scatterers(std::span<const PointScatterer> scatterers,
                                     double noise_floor_db, std::uint64_t rng_seed,
                                     const GridSpec& grid, bool add_noise) {
  const int h = grid.range_bins;
  const int w = grid.azimuth_bins;
  std::vector<double> power(static_cast<std::size_t>(h) * w, 0.0);
  for (const auto& s : scatterers) {
    const double rc = h / 2 + s.range_offset_m / grid.range_bin_m;
    const double ac = w / 2 + s.azimuth_offset_deg / grid.azimuth_bin_deg;
    const double amp = std::pow(10.0, s.power_db / 10.0);
    const double reach_r = kPsfSupport * grid.psf_range_width;
    const double reach_a = kPsfSupport * grid.psf_azimuth_width;
    const int r0 = std::max(0, static_cast<int>(std::ceil(rc - reach_r)));
    const int r1 = std::min(h - 1, static_cast<int>(std::floor(rc + reach_r)));
    const int a0 = std::max(0, static_cast<int>(std::ceil(ac - reach_a)));
    const int a1 = std::min(w - 1, static_cast<int>(std::floor(ac + reach_a)));
    for (int r = r0; r <= r1; ++r) {
      const double pr = psf_power(r - rc, grid.psf_range_width);
      if (pr == 0.0) continue;
      for (int a = a0; a <= a1; ++a) {
        power[static_cast<std::size_t>(r) * w + a] += amp * pr * psf_power(a - ac, grid.psf_azimuth_width);
      }
    }
  }
  if (add_noise) {
    Rng rng(rng_seed);
    const double noise_mean = std::pow(10.0, noise_floor_db / 10.0);
    for (double& p : power) p += rng.exponential(noise_mean);
  }
  std::vector<float> db(power.size());
  for (std::size_t i = 0; i < power.size(); ++i) {
    const double v = power[i] > 0.0 ? 10.0 * std::log10(power[i]) : kMinDb;
    db[i] = static_cast<float>(std::clamp(v, kMinDb, kMaxDb));
  }
  return db;
}

const std::vector<std::string>& class_names() {
  static const std::vector<std::string> names = {
      "car", "construction_barrier", "motorbike", "baby_carriage",
      "bicycle", "pedestrian", "stop_sign"};
  return names;
}

std::vector<ObjectModel> class_models() {
  // label, name, scatterers, length, width, reflectivity mean, spread
  return {
      {0, "car", 10, 16, 4.4, 1.8, 20.0, 5.0, 0},
      {1, "construction_barrier", 4, 7, 1.6, 0.4, 8.0, 4.0, 0},
      {2, "motorbike", 5, 8, 2.1, 0.8, 12.0, 4.0, 0},
      {3, "baby_carriage", 3, 5, 0.9, 0.6, 4.0, 3.0, 0},
      {4, "bicycle", 3, 6, 1.7, 0.6, 2.0, 4.0, 0},
      {5, "pedestrian", 2, 4, 0.5, 0.4, 0.0, 3.0, 0},
      {6, "stop_sign", 1, 2, 0.4, 0.1, 16.0, 3.0, 0},
  };
}

std::vector<ObjectModel> ood_models() {
  // Each box is disjoint from every class box in at least one coordinate:
  // width (plate, block), count (sand bags), reflectivity (barrel), length
  // (guard rail).
  return {
      {kOodLabel, "metal_plate", 1, 1, 1.0, 0.05, 26.0, 2.0, 0},
      {kOodLabel, "sand_bags", 18, 24, 1.2, 0.6, -2.0, 3.0, 0},
      {kOodLabel, "concrete_block", 8, 12, 1.0, 1.0, 10.0, 3.0, 0},
      {kOodLabel, "metal_barrel", 2, 3, 0.6, 0.6, 24.0, 2.0, 0},
      {kOodLabel, "guard_rail", 6, 10, 6.0, 0.2, 12.0, 3.0, 0},
  };
}

ObjectModel make_instance(const ObjectModel& base, std::uint64_t instance_seed) {
  ObjectModel m = base;
  m.instance_seed = instance_seed;
  Rng rng(mix_seed(instance_seed, 0x1257));
  const double refl_jitter =
      is_ood(base.label) ? kOodReflectivityJitterDb : kInstanceReflectivityJitterDb;
  m.length_m *= 1.0 + rng.uniform(-kInstanceExtentJitter, kInstanceExtentJitter);
  m.width_m *= 1.0 + rng.uniform(-kInstanceExtentJitter, kInstanceExtentJitter);
  m.reflectivity_mean_db += rng.uniform(-refl_jitter, refl_jitter);
  return m;
}

ParameterBox parameter_box(const ObjectModel& base) {
  const double refl_jitter =
      is_ood(base.label) ? kOodReflectivityJitterDb : kInstanceReflectivityJitterDb;
  ParameterBox b{};
  b.lo[0] = base.min_scatterers;
  b.hi[0] = base.max_scatterers;
  b.lo[1] = base.length_m * (1.0 - kInstanceExtentJitter);
  b.hi[1] = base.length_m * (1.0 + kInstanceExtentJitter);
  b.lo[2] = base.width_m * (1.0 - kInstanceExtentJitter);
  b.hi[2] = base.width_m * (1.0 + kInstanceExtentJitter);
  b.lo[3] = base.reflectivity_mean_db - refl_jitter;
  b.hi[3] = base.reflectivity_mean_db + refl_jitter;
  return b;
}

SpectrumROI generate_roi(const ObjectModel& model, const SensorPose& pose, double noise_floor_db,
                         std::uint64_t rng_seed, const GridSpec& grid) {
  if (!(pose.range_m > 0.0) || pose.range_m > kMaxRangeM) {
    throw ValidationError("object at " + std::to_string(pose.range_m) +
                          " m is outside the (0, 30] m range window");
  }
  if (std::abs(pose.azimuth_deg) > kFieldOfViewDeg) {
    throw ValidationError("object at azimuth " + std::to_string(pose.azimuth_deg) +
                          " deg is outside the field of view");
  }
  if (model.min_scatterers < 1 || model.max_scatterers < model.min_scatterers ||
      !(model.length_m > 0.0) || !(model.width_m > 0.0)) {
    throw ValidationError("invalid object model '" + model.name + "'");
  }

  // Layout: a per-type template shared by all instances, perturbed by the
  // instance seed.
  struct Local {
    double along, across, power_db, lobe_deg;
  };
  Rng shape(template_seed(model.name));
  std::vector<Local> local(model.max_scatterers);
  for (auto& s : local) {
    s.along = shape.uniform(-0.5, 0.5);
    s.across = shape.uniform(-0.5, 0.5);
    s.power_db = shape.normal();
    s.lobe_deg = shape.uniform(-180.0, 180.0);
  }
  Rng layout(mix_seed(model.instance_seed, 0x5ca7));
  const int n = layout.between(model.min_scatterers, model.max_scatterers);
  local.resize(n);
  for (auto& s : local) {
    s.along = (s.along + layout.normal(0.0, kLayoutJitter)) * model.length_m;
    s.across = (s.across + layout.normal(0.0, kLayoutJitter)) * model.width_m;
    s.power_db = model.reflectivity_mean_db + model.reflectivity_spread_db * s.power_db +
                 layout.normal(0.0, kInstancePowerJitterDb);
    s.lobe_deg += layout.normal(0.0, kLobeJitterDeg);
  }

  // Per-capture variation: scintillation, aspect-dependent lobes, jitter.
  Rng frame(rng_seed);
  const double a = pose.aspect_deg * kDegToRad;
  const double loss_db = kPathLossExponent * std::log10(pose.range_m / kReferenceRangeM);
  std::vector<PointScatterer> pts;
  pts.reserve(n);
  for (const auto& s : local) {
    const double along = s.along + frame.normal(0.0, kPositionJitterM);
    const double across = s.across + frame.normal(0.0, kPositionJitterM);
    const double dr = along * std::cos(a) + across * std::sin(a);
    const double cross = -along * std::sin(a) + across * std::cos(a);
    PointScatterer p;
    p.range_offset_m = dr;
    p.azimuth_offset_deg = std::atan2(cross, pose.range_m) / kDegToRad;
    p.power_db = s.power_db - loss_db + kScintillationDb * frame.normal() +
                 kLobeGainDb * std::cos((pose.aspect_deg - s.lobe_deg) * kDegToRad);
    pts.push_back(p);
  }

  SpectrumROI roi;
  roi.label = model.label;
  roi.range_m = static_cast<float>(pose.range_m);
  roi.height = grid.range_bins;
  roi.width = grid.azimuth_bins;
  roi.magnitude_db = render_scatterers(pts, noise_floor_db, mix_seed(rng_seed, 0x40153), grid);
  return roi;
}

SceneConfig default_scene(Environment env, std::uint64_t master_seed,
                          double env2_noise_offset_db) {
  SceneConfig cfg;
  cfg.environment = env;
  cfg.master_seed = master_seed;
  const auto models = env == Environment::kOod ? ood_models() : class_models();
  const int n_models = static_cast<int>(models.size());

  switch (env) {
    case Environment::kEnv1: {
      cfg.scene_id = 1;
      cfg.repetitions = 7;
      // Three instances per class along both sides of a street.
      int slot = 0;
      for (int inst = 0; inst < 3; ++inst) {
        for (int m = 0; m < n_models; ++m, ++slot) {
          Placement p;
          p.model_index = m;
          p.instance_seed = mix_seed(master_seed, 0x1000 + static_cast<std::uint64_t>(slot));
          p.x_m = 6.0 + 2.1 * slot;
          p.y_m = (slot % 2 == 0 ? 1.0 : -1.0) * (3.0 + 1.5 * (slot % 3));
          p.heading_deg = 37.0 * slot;
          cfg.placements.push_back(p);
        }
      }
      cfg.patterns = {
          {-10.0, 0.0, 0.0, 0.0, 0.5, 110},
          {-10.0, 2.0, 0.0, 0.05, 0.5, 110},
          {60.0, -1.0, 180.0, 0.0, 0.5, 110},
          {60.0, 1.5, 180.0, -0.05, 0.5, 110},
      };
      break;
    }
    case Environment::kEnv2: {
      cfg.scene_id = 2;
      cfg.repetitions = 1;
      cfg.noise_floor_db += env2_noise_offset_db;
      // New instances in a different layout.
      int slot = 0;
      for (int inst = 0; inst < 2; ++inst) {
        for (int m = 0; m < n_models; ++m, ++slot) {
          Placement p;
          p.model_index = m;
          p.instance_seed = mix_seed(master_seed, 0x2000 + static_cast<std::uint64_t>(slot));
          p.x_m = 4.0 + 3.3 * ((slot * 5) % 14);
          p.y_m = (slot % 3 == 0 ? -1.0 : 1.0) * (2.0 + 2.5 * ((slot * 7) % 4) / 3.0);
          p.heading_deg = 90.0 + 53.0 * slot;
          cfg.placements.push_back(p);
        }
      }
      cfg.patterns = {
          {-8.0, -3.0, 8.0, 0.0, 0.5, 110},
          {55.0, 4.0, 185.0, 0.12, 0.5, 110},
          {-5.0, 3.0, -5.0, 0.1, 0.5, 110},
      };
      break;
    }
    case Environment::kOod: {
      cfg.scene_id = 3;
      cfg.repetitions = 2;
      int slot = 0;
      for (int inst = 0; inst < 2; ++inst) {
        for (int m = 0; m < n_models; ++m, ++slot) {
          Placement p;
          p.model_index = m;
          p.instance_seed = mix_seed(master_seed, 0x3000 + static_cast<std::uint64_t>(slot));
          p.x_m = 7.0 + 3.0 * slot;
          p.y_m = (slot % 2 == 0 ? 1.0 : -1.0) * (2.5 + slot % 3);
          p.heading_deg = 41.0 * slot;
          cfg.placements.push_back(p);
        }
      }
      cfg.patterns = {
          {-10.0, 0.0, 0.0, 0.0, 0.5, 110},
          {-10.0, -2.0, 0.0, 0.04, 0.5, 110},
          {50.0, 0.5, 180.0, 0.0, 0.5, 110},
          {50.0, -1.5, 180.0, -0.04, 0.5, 110},
      };
      break;
    }
  }
  return cfg;
}

std::vector<RoiDataset> generate_dataset(const SceneConfig& config, const SplitCounts& counts) {
  const bool ood = config.environment == Environment::kOod;
  const auto models = ood ? ood_models() : class_models();
  std::vector<int> group(config.placements.size());
  for (std::size_t i = 0; i < config.placements.size(); ++i) {
    const int m = config.placements[i].model_index;
    if (m < 0 || m >= static_cast<int>(models.size())) {
      throw ValidationError("placement refers to unknown object model");
    }
    group[i] = ood ? m : models[m].label;
  }
  const int n_groups = ood ? static_cast<int>(models.size()) : config.num_classes;

  if (config.environment == Environment::kEnv1) {
    if (config.repetitions < 3) {
      throw ValidationError("Env1 needs at least 3 repetitions (valid, test, train); got " +
                            std::to_string(config.repetitions));
    }
    std::vector<FrameRef> train_pool;
    for (int r = 2; r < config.repetitions; ++r) {
      auto frames = enumerate_frames(config, r);
      train_pool.insert(train_pool.end(), frames.begin(), frames.end());
    }
    const auto valid = select_balanced(enumerate_frames(config, 0), group, n_groups, counts.valid, "Env1-Valid");
    const auto test = select_balanced(enumerate_frames(config, 1), group, n_groups, counts.test, "Env1-Test");
    const auto train = select_balanced(train_pool, group, n_groups, counts.train, "Env1-Train");
    std::vector<RoiDataset> out;
    out.push_back(render_split(config, models, train, SplitTag::env1_train()));
    out.push_back(render_split(config, models, valid, SplitTag::env1_valid()));
    out.push_back(render_split(config, models, test, SplitTag::env1_test()));
    return out;
  }

  if (config.repetitions < 1) throw ValidationError("scene needs at least one repetition");
  std::vector<FrameRef> pool;
  for (int r = 0; r < config.repetitions; ++r) {
    auto frames = enumerate_frames(config, r);
    pool.insert(pool.end(), frames.begin(), frames.end());
  }
  const SplitTag tag = ood ? SplitTag::ood() : SplitTag::env2_test();
  const auto chosen = select_balanced(pool, group, n_groups, counts.test, tag.to_string());
  RoiDataset ds = render_split(config, models, chosen, tag);
  if (ood) {
    for (auto& r : ds.records) r.label = kOodLabel;
  }
  return {std::move(ds)};
}

RoiDataset generate_ood(std::size_t count, std::uint64_t master_seed) {
  SplitCounts counts;
  counts.test = count;
  return std::move(generate_dataset(default_scene(Environment::kOod, master_seed), counts).front());
}

}  // namespace speccal

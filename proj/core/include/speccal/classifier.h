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

#ifndef SPECCAL_CLASSIFIER_H_
#define SPECCAL_CLASSIFIER_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <new>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "speccal/spectra_sim.h"
#include "speccal/types.h"

namespace speccal {

// Conv stages (3x3, stride 1, zero padding 1, ReLU, 2x2 max-pool), then
// fully-connected ReLU stages, then a K-way linear output.
struct ModelSpec {
  int input_height = 32;
  int input_width = 32;
  std::vector<int> conv_filters{8, 16};
  std::vector<int> dense_units{64};
  int num_classes = kDefaultNumClasses;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// Throws ValidationError if the spec does not describe a valid network.
void validate(const ModelSpec& spec);

struct TrainConfig {
  int epochs = 30;
  int batch_size = 64;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
};

enum class LossKind { kCrossEntropy, kQuadratic };

// Parameter block of one layer inside the flat parameter vector.
// Allocates on 64-byte boundaries. Vectorized kernels split work by data
// alignment, so buffers that feed them must sit at the same alignment on
// every run for results to be bit-identical.
template <class T>
struct CacheAlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  CacheAlignedAllocator() = default;
  template <class U>
  CacheAlignedAllocator(const CacheAlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlignment); }

  friend bool operator==(const CacheAlignedAllocator&, const CacheAlignedAllocator&) {
    return true;
  }
};

using AlignedDoubles = std::vector<double, CacheAlignedAllocator<double>>;

struct LayerParams {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

class Network {
 public:
  // Uniform fan-in scaled initialization, U(-sqrt(6/fan_in), sqrt(6/fan_in))
  // for weights and zero biases, drawn from `init_seed`.
  Network(ModelSpec spec, std::uint64_t init_seed);

  const ModelSpec& spec() const { return spec_; }
  std::size_t num_parameters() const { return params_.size(); }
  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }
  const std::vector<LayerParams>& layers() const { return layers_; }

  // Inputs are normalized as (dB - input_offset) * input_scale.
  double input_offset = 0.0;
  double input_scale = 1.0;

  // `inputs` holds n normalized H*W grids back to back; writes n*K logits.
  void forward(std::span<const double> inputs, int n, std::span<double> logits) const;

  // Mean loss over the batch; `grad` is resized to num_parameters().
  double loss_and_gradient(std::span<const double> inputs, std::span<const int> labels,
                           std::vector<double>& grad,
                           LossKind loss = LossKind::kCrossEntropy) const;

  double loss(std::span<const double> inputs, std::span<const int> labels,
              LossKind loss = LossKind::kCrossEntropy) const;

  // Normalizes a dB grid into `out`.
  void normalize(std::span<const float> grid_db, std::span<double> out) const;

  friend bool operator==(const Network& a, const Network& b) {
    return a.spec_ == b.spec_ && a.params_ == b.params_ && a.input_offset == b.input_offset &&
           a.input_scale == b.input_scale;
  }

 private:
  struct Shape {
    int height, width, channels;
  };
  struct Workspace;
  double run(std::span<const double> inputs, int n, std::span<double> logits,
             std::span<const int> labels, std::vector<double>* grad, LossKind loss) const;

  ModelSpec spec_;
  AlignedDoubles params_;
  std::vector<LayerParams> layers_;
  std::vector<Shape> conv_in_;  // input shape of each conv stage
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double valid_accuracy = 0.0;
};

struct TrainedModel {
  int seed_id = 0;
  std::uint64_t seed = 0;
  Network network;
  int best_epoch = 0;  // 0 means the initialization
  double best_valid_accuracy = 0.0;
  std::vector<EpochLog> log;
  std::optional<std::string> failure;  // set when the run was aborted
};

// Mini-batch SGD with momentum on the mean cross-entropy. After each epoch
// the validation accuracy is measured and the parameters of the best epoch
// (earliest on ties) are kept. A non-finite loss aborts the run and sets
// `failure`. Throws ProtocolError unless `train` is Env1-Train and `valid`
// Env1-Valid.
TrainedModel train_one(const ModelSpec& spec, const TrainConfig& cfg, int seed_id,
                       const RoiDataset& train, const RoiDataset& valid);

// One run per entry of cfg.seeds; seed_id is the position in that list.
std::vector<TrainedModel> train(const ModelSpec& spec, const TrainConfig& cfg,
                                const RoiDataset& train, const RoiDataset& valid);

double accuracy(const Network& net, const RoiDataset& data);

// One LogitRecord per ROI, order preserved.
LogitDataset predict_logits(const Network& net, const RoiDataset& data, int seed_id,
                            int batch_size = 256);

struct GradientCheckOptions {
  LossKind loss = LossKind::kCrossEntropy;
  int samples = 4;
  double step = 1e-4;
  std::uint64_t seed = 7;
  // Test hook: edits the analytic gradient before comparison.
  std::function<void(const Network&, std::vector<double>&)> corrupt_gradient;
};

// Max over parameters of |analytic - numeric| / max(|analytic|, |numeric|,
// 1e-6), numeric from central differences.
double gradient_check(const ModelSpec& spec, const GradientCheckOptions& options = {});

// Default spec for gradient checking: 8x8 input, conv [2, 3], dense [4], K=3.
ModelSpec tiny_model_spec();

// Checkpoint: "SPECCAL\0" magic, uint64 header length, JSON header with the
// spec, layer shapes and input normalization, then every parameter as
// little-endian float64.
void save_checkpoint(const std::filesystem::path& path, const TrainedModel& model);
TrainedModel load_checkpoint(const std::filesystem::path& path);

// `epoch,train_loss,valid_acc`.
void write_training_log(std::ostream& out, const std::vector<EpochLog>& log);

}  // namespace speccal

#endif  // SPECCAL_CLASSIFIER_H_

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

#include "speccal/classifier.h"

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <ostream>

#include "json.hpp"
#include "speccal/error.h"
#include "speccal/logit_io.h"
#include "speccal/random.h"

namespace speccal {
namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic>;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

constexpr char kMagic[8] = {'S', 'P', 'E', 'C', 'C', 'A', 'L', '\0'};

// Activations are channels-last: column p = (n * H + y) * W + x of a
// C x (N*H*W) matrix.
void im2col(const double* act, int n, int h, int w, int c, double* cols) {
  const std::size_t stride = 9 * static_cast<std::size_t>(c);
  for (int s = 0; s < n; ++s) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double* col = cols + ((static_cast<std::size_t>(s) * h + y) * w + x) * stride;
        for (int ky = 0; ky < 3; ++ky) {
          const int yy = y + ky - 1;
          for (int kx = 0; kx < 3; ++kx) {
            const int xx = x + kx - 1;
            double* dst = col + (ky * 3 + kx) * c;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w) {
              std::fill_n(dst, c, 0.0);
            } else {
              std::copy_n(act + ((static_cast<std::size_t>(s) * h + yy) * w + xx) * c, c, dst);
            }
          }
        }
      }
    }
  }
}

void col2im(const double* cols, int n, int h, int w, int c, double* act) {
  std::fill_n(act, static_cast<std::size_t>(n) * h * w * c, 0.0);
  const std::size_t stride = 9 * static_cast<std::size_t>(c);
  for (int s = 0; s < n; ++s) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double* col = cols + ((static_cast<std::size_t>(s) * h + y) * w + x) * stride;
        for (int ky = 0; ky < 3; ++ky) {
          const int yy = y + ky - 1;
          if (yy < 0 || yy >= h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int xx = x + kx - 1;
            if (xx < 0 || xx >= w) continue;
            double* dst = act + ((static_cast<std::size_t>(s) * h + yy) * w + xx) * c;
            const double* src = col + (ky * 3 + kx) * c;
            for (int ch = 0; ch < c; ++ch) dst[ch] += src[ch];
          }
        }
      }
    }
  }
}

// 2x2 max-pool, floor on odd sizes. `where` records the input index of
// each maximum (first one on ties).
void max_pool(const double* in, int n, int h, int w, int c, double* out, int* where) {
  const int ho = h / 2, wo = w / 2;
  for (int s = 0; s < n; ++s) {
    for (int y = 0; y < ho; ++y) {
      for (int x = 0; x < wo; ++x) {
        const std::size_t o = ((static_cast<std::size_t>(s) * ho + y) * wo + x) * c;
        const std::size_t base[4] = {
            ((static_cast<std::size_t>(s) * h + 2 * y) * w + 2 * x) * c,
            ((static_cast<std::size_t>(s) * h + 2 * y) * w + 2 * x + 1) * c,
            ((static_cast<std::size_t>(s) * h + 2 * y + 1) * w + 2 * x) * c,
            ((static_cast<std::size_t>(s) * h + 2 * y + 1) * w + 2 * x + 1) * c};
        for (int ch = 0; ch < c; ++ch) {
          std::size_t best = base[0] + ch;
          for (int q = 1; q < 4; ++q) {
            if (in[base[q] + ch] > in[best]) best = base[q] + ch;
          }
          out[o + ch] = in[best];
          where[o + ch] = static_cast<int>(best);
        }
      }
    }
  }
}

}  // namespace

void validate(const ModelSpec& spec) {
  if (spec.input_height < 1 || spec.input_width < 1) {
    throw ValidationError("model input must be at least 1x1");
  }
  if (spec.num_classes < 2) throw ValidationError("model needs at least two classes");
  int h = spec.input_height, w = spec.input_width;
  for (int f : spec.conv_filters) {
    if (f < 1) throw ValidationError("conv filter counts must be positive");
    h /= 2;
    w /= 2;
    if (h < 1 || w < 1) throw ValidationError("input too small for the number of conv stages");
  }
  for (int u : spec.dense_units) {
    if (u < 1) throw ValidationError("dense unit counts must be positive");
  }
}

ModelSpec tiny_model_spec() {
  ModelSpec spec;
  spec.input_height = 8;
  spec.input_width = 8;
  spec.conv_filters = {2, 3};
  spec.dense_units = {4};
  spec.num_classes = 3;
  return spec;
}

Network::Network(ModelSpec spec, std::uint64_t init_seed) : spec_(std::move(spec)) {
  validate(spec_);
  Rng rng(init_seed);
  auto add = [&](std::string name, std::size_t fan_in, std::size_t fan_out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    layers_.push_back({name + ".weight", params_.size(), fan_in * fan_out});
    for (std::size_t i = 0; i < fan_in * fan_out; ++i) params_.push_back(rng.uniform(-limit, limit));
    layers_.push_back({name + ".bias", params_.size(), fan_out});
    params_.resize(params_.size() + fan_out, 0.0);
  };
  int h = spec_.input_height, w = spec_.input_width, c = 1;
  for (std::size_t l = 0; l < spec_.conv_filters.size(); ++l) {
    conv_in_.push_back({h, w, c});
    add("conv" + std::to_string(l), 9 * static_cast<std::size_t>(c), spec_.conv_filters[l]);
    c = spec_.conv_filters[l];
    h /= 2;
    w /= 2;
  }
  std::size_t d = static_cast<std::size_t>(h) * w * c;
  for (std::size_t l = 0; l < spec_.dense_units.size(); ++l) {
    add("dense" + std::to_string(l), d, spec_.dense_units[l]);
    d = spec_.dense_units[l];
  }
  add("output", d, spec_.num_classes);
}

struct Network::Workspace {
  AlignedDoubles input;                // copy of the inputs for dense-only nets
  std::vector<AlignedDoubles> cols;    // per conv stage
  std::vector<AlignedDoubles> conv;    // post-ReLU conv output
  std::vector<AlignedDoubles> pooled;  // per conv stage
  std::vector<std::vector<int>> where;
  std::vector<AlignedDoubles> dense;   // post-ReLU dense output
  AlignedDoubles grad;
  AlignedDoubles dpool, dconv, dcols;
};

double Network::run(std::span<const double> inputs, int n, std::span<double> logits_out,
                    std::span<const int> labels, std::vector<double>* grad, LossKind loss) const {
  const int k = spec_.num_classes;
  const std::size_t pixels = static_cast<std::size_t>(spec_.input_height) * spec_.input_width;
  if (n < 1 || inputs.size() != pixels * n) {
    throw ValidationError("network input has " + std::to_string(inputs.size()) +
                          " values, expected " + std::to_string(pixels * std::max(n, 0)));
  }
  const std::size_t nconv = spec_.conv_filters.size();
  const std::size_t ndense = spec_.dense_units.size();
  // Reused across calls; the buffers are large and allocation-heavy.
  thread_local Workspace ws;
  ws.cols.resize(nconv);
  ws.conv.resize(nconv);
  ws.pooled.resize(nconv);
  ws.where.resize(nconv);
  ws.dense.resize(ndense);

  // Forward.
  if (nconv == 0) ws.input.assign(inputs.begin(), inputs.end());
  const double* act = nconv == 0 ? ws.input.data() : inputs.data();
  for (std::size_t l = 0; l < nconv; ++l) {
    const auto [h, w, c] = conv_in_[l];
    const int f = spec_.conv_filters[l];
    const std::size_t p = static_cast<std::size_t>(n) * h * w;
    ws.cols[l].resize(p * 9 * c);
    im2col(act, n, h, w, c, ws.cols[l].data());
    ConstMatMap wt(params_.data() + layers_[2 * l].offset, f, 9 * c);
    ConstVecMap b(params_.data() + layers_[2 * l + 1].offset, f);
    ws.conv[l].resize(p * f);
    MatMap out(ws.conv[l].data(), f, static_cast<Eigen::Index>(p));
    out.noalias() = wt * ConstMatMap(ws.cols[l].data(), 9 * c, static_cast<Eigen::Index>(p));
    out.colwise() += b;
    out = out.cwiseMax(0.0);
    const std::size_t po = static_cast<std::size_t>(n) * (h / 2) * (w / 2) * f;
    ws.pooled[l].resize(po);
    ws.where[l].resize(po);
    max_pool(ws.conv[l].data(), n, h, w, f, ws.pooled[l].data(), ws.where[l].data());
    act = ws.pooled[l].data();
  }
  std::size_t d = nconv == 0 ? pixels
                             : static_cast<std::size_t>(conv_in_.back().height / 2) *
                                   (conv_in_.back().width / 2) * spec_.conv_filters.back();
  const std::size_t dense_layer0 = 2 * nconv;
  for (std::size_t l = 0; l < ndense; ++l) {
    const int u = spec_.dense_units[l];
    ConstMatMap wt(params_.data() + layers_[dense_layer0 + 2 * l].offset, u,
                   static_cast<Eigen::Index>(d));
    ConstVecMap b(params_.data() + layers_[dense_layer0 + 2 * l + 1].offset, u);
    ws.dense[l].resize(static_cast<std::size_t>(u) * n);
    MatMap out(ws.dense[l].data(), u, n);
    out.noalias() = wt * ConstMatMap(act, static_cast<Eigen::Index>(d), n);
    out.colwise() += b;
    out = out.cwiseMax(0.0);
    act = ws.dense[l].data();
    d = u;
  }
  const std::size_t out_layer = dense_layer0 + 2 * ndense;
  ConstMatMap wo(params_.data() + layers_[out_layer].offset, k, static_cast<Eigen::Index>(d));
  ConstVecMap bo(params_.data() + layers_[out_layer + 1].offset, k);
  Mat z = wo * ConstMatMap(act, static_cast<Eigen::Index>(d), n);
  z.colwise() += bo;
  if (!logits_out.empty()) std::copy_n(z.data(), static_cast<std::size_t>(k) * n, logits_out.data());
  if (labels.empty()) return 0.0;

  // Loss and its gradient with respect to the logits.
  if (labels.size() != static_cast<std::size_t>(n)) {
    throw ValidationError("label count does not match batch size");
  }
  Mat dz(k, n);
  double total = 0.0;
  for (int s = 0; s < n; ++s) {
    const int y = labels[s];
    if (y < 0 || y >= k) throw ValidationError("training label " + std::to_string(y) + " out of range");
    if (loss == LossKind::kCrossEntropy) {
      const double m = z.col(s).maxCoeff();
      double sum = 0.0;
      for (int j = 0; j < k; ++j) sum += std::exp(z(j, s) - m);
      const double lse = m + std::log(sum);
      total += lse - z(y, s);
      for (int j = 0; j < k; ++j) dz(j, s) = std::exp(z(j, s) - lse) - (j == y ? 1.0 : 0.0);
    } else {
      for (int j = 0; j < k; ++j) {
        const double e = z(j, s) - (j == y ? 1.0 : 0.0);
        total += 0.5 * e * e;
        dz(j, s) = e;
      }
    }
  }
  dz /= static_cast<double>(n);
  const double mean_loss = total / n;
  if (grad == nullptr) return mean_loss;

  // Backward.
  ws.grad.assign(params_.size(), 0.0);
  auto gmat = [&](std::size_t layer, Eigen::Index rows, Eigen::Index cols) {
    return MatMap(ws.grad.data() + layers_[layer].offset, rows, cols);
  };
  auto gvec = [&](std::size_t layer, Eigen::Index rows) {
    return VecMap(ws.grad.data() + layers_[layer].offset, rows);
  };
  auto dense_input = [&](std::size_t l) -> const double* {
    if (l > 0) return ws.dense[l - 1].data();
    return nconv == 0 ? ws.input.data() : ws.pooled.back().data();
  };
  const Eigen::Index d_last = static_cast<Eigen::Index>(d);
  gmat(out_layer, k, d_last).noalias() = dz * ConstMatMap(act, d_last, n).transpose();
  gvec(out_layer + 1, k) = dz.rowwise().sum();
  Mat delta = wo.transpose() * dz;  // gradient w.r.t. the input of the output layer
  for (std::size_t l = ndense; l-- > 0;) {
    const int u = spec_.dense_units[l];
    ConstMatMap out(ws.dense[l].data(), u, n);
    delta = (out.array() > 0.0).select(delta, 0.0);
    const Eigen::Index din = l > 0 ? spec_.dense_units[l - 1]
                                   : static_cast<Eigen::Index>(
                                         nconv == 0 ? pixels
                                                    : ws.pooled.back().size() / n);
    gmat(dense_layer0 + 2 * l, u, din).noalias() =
        delta * ConstMatMap(dense_input(l), din, n).transpose();
    gvec(dense_layer0 + 2 * l + 1, u) = delta.rowwise().sum();
    ConstMatMap wt(params_.data() + layers_[dense_layer0 + 2 * l].offset, u, din);
    Mat next = wt.transpose() * delta;
    delta = std::move(next);
  }
  // `delta` is now d(loss)/d(pooled output of the last conv stage), laid
  // out the same way as ws.pooled.back().
  auto& dpool = ws.dpool;
  auto& dconv = ws.dconv;
  auto& dcols = ws.dcols;
  dpool.assign(delta.data(), delta.data() + delta.size());
  for (std::size_t l = nconv; l-- > 0;) {
    const auto [h, w, c] = conv_in_[l];
    const int f = spec_.conv_filters[l];
    const std::size_t p = static_cast<std::size_t>(n) * h * w;
    dconv.assign(p * f, 0.0);
    const auto& where = ws.where[l];
    const auto& conv = ws.conv[l];
    for (std::size_t i = 0; i < dpool.size(); ++i) {
      const std::size_t src = static_cast<std::size_t>(where[i]);
      if (conv[src] > 0.0) dconv[src] += dpool[i];
    }
    ConstMatMap dout(dconv.data(), f, static_cast<Eigen::Index>(p));
    ConstMatMap cols(ws.cols[l].data(), 9 * c, static_cast<Eigen::Index>(p));
    gmat(2 * l, f, 9 * c).noalias() = dout * cols.transpose();
    gvec(2 * l + 1, f) = dout.rowwise().sum();
    if (l == 0) break;
    ConstMatMap wt(params_.data() + layers_[2 * l].offset, f, 9 * c);
    dcols.resize(p * 9 * c);
    MatMap(dcols.data(), 9 * c, static_cast<Eigen::Index>(p)).noalias() = wt.transpose() * dout;
    dpool.resize(p * c);
    col2im(dcols.data(), n, h, w, c, dpool.data());
  }
  grad->assign(ws.grad.begin(), ws.grad.end());
  return mean_loss;
}

void Network::forward(std::span<const double> inputs, int n, std::span<double> logits) const {
  if (logits.size() != static_cast<std::size_t>(n) * spec_.num_classes) {
    throw ValidationError("logit buffer has the wrong size");
  }
  run(inputs, n, logits, {}, nullptr, LossKind::kCrossEntropy);
}

double Network::loss(std::span<const double> inputs, std::span<const int> labels,
                     LossKind kind) const {
  return run(inputs, static_cast<int>(labels.size()), {}, labels, nullptr, kind);
}

double Network::loss_and_gradient(std::span<const double> inputs, std::span<const int> labels,
                                  std::vector<double>& grad, LossKind kind) const {
  return run(inputs, static_cast<int>(labels.size()), {}, labels, &grad, kind);
}

void Network::normalize(std::span<const float> grid_db, std::span<double> out) const {
  const std::size_t pixels = static_cast<std::size_t>(spec_.input_height) * spec_.input_width;
  if (grid_db.size() != pixels || out.size() != pixels) {
    throw ValidationError("ROI is " + std::to_string(grid_db.size()) + " cells, model expects " +
                          std::to_string(pixels));
  }
  for (std::size_t i = 0; i < pixels; ++i) out[i] = (grid_db[i] - input_offset) * input_scale;
}

namespace {

void check_shape(const Network& net, const SpectrumROI& roi) {
  const auto& spec = net.spec();
  if (roi.height != spec.input_height || roi.width != spec.input_width ||
      roi.magnitude_db.size() != static_cast<std::size_t>(roi.height) * roi.width) {
    throw ValidationError("ROI " + roi.sample_id() + " is " + std::to_string(roi.height) + "x" +
                          std::to_string(roi.width) + ", model expects " +
                          std::to_string(spec.input_height) + "x" +
                          std::to_string(spec.input_width));
  }
}

std::vector<double> normalized_inputs(const Network& net, const RoiDataset& data) {
  const std::size_t pixels =
      static_cast<std::size_t>(net.spec().input_height) * net.spec().input_width;
  std::vector<double> x(pixels * data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    check_shape(net, data.records[i]);
    net.normalize(data.records[i].magnitude_db, std::span<double>(x).subspan(i * pixels, pixels));
  }
  return x;
}

template <typename Fn>
void for_each_batch(const Network& net, std::span<const double> x, std::size_t count,
                    int batch_size, Fn&& fn) {
  const std::size_t pixels =
      static_cast<std::size_t>(net.spec().input_height) * net.spec().input_width;
  const std::size_t k = static_cast<std::size_t>(net.spec().num_classes);
  std::vector<double> logits;
  for (std::size_t start = 0; start < count; start += batch_size) {
    const std::size_t n = std::min<std::size_t>(batch_size, count - start);
    logits.resize(n * k);
    net.forward(x.subspan(start * pixels, n * pixels), static_cast<int>(n), logits);
    for (std::size_t s = 0; s < n; ++s) {
      fn(start + s, std::span<const double>(logits).subspan(s * k, k));
    }
  }
}

double accuracy_of(const Network& net, std::span<const double> x, std::span<const int> labels) {
  if (labels.empty()) return 0.0;
  std::size_t correct = 0;
  for_each_batch(net, x, labels.size(), 256, [&](std::size_t i, std::span<const double> z) {
    if (argmax(z) == labels[i]) ++correct;
  });
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

std::vector<int> labels_of(const RoiDataset& data) {
  std::vector<int> labels;
  labels.reserve(data.size());
  for (const auto& r : data.records) {
    if (r.label < 0 || r.label >= data.num_classes) {
      throw ValidationError("ROI " + r.sample_id() + " has label " + std::to_string(r.label) +
                            ", not a training class");
    }
    labels.push_back(r.label);
  }
  return labels;
}

}  // namespace

TrainedModel train_one(const ModelSpec& spec, const TrainConfig& cfg, int seed_id,
                       const RoiDataset& train, const RoiDataset& valid) {
  if (train.split.kind != SplitKind::kEnv1Train) {
    throw ProtocolError("classifier must be trained on Env1-Train, got " + train.split.to_string());
  }
  if (valid.split.kind != SplitKind::kEnv1Valid) {
    throw ProtocolError("model selection must use Env1-Valid, got " + valid.split.to_string());
  }
  if (train.empty() || valid.empty()) throw ValidationError("empty training or validation set");
  if (train.num_classes != spec.num_classes || valid.num_classes != spec.num_classes) {
    throw ValidationError("dataset class count does not match the model");
  }
  if (cfg.epochs < 0 || cfg.batch_size < 1 || !(cfg.learning_rate > 0.0) ||
      !(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) {
    throw ValidationError("invalid training hyper-parameters");
  }
  if (seed_id < 0 || static_cast<std::size_t>(seed_id) >= cfg.seeds.size()) {
    throw ValidationError("seed id out of range");
  }
  const std::uint64_t seed = cfg.seeds[seed_id];
  TrainedModel result{.seed_id = seed_id,
                      .seed = seed,
                      .network = Network(spec, mix_seed(seed, 0x1417)),
                      .best_epoch = 0,
                      .best_valid_accuracy = 0.0,
                      .log = {},
                      .failure = std::nullopt};
  Network& net = result.network;

  // Input normalization from the training pixels only.
  double sum = 0.0, sum_sq = 0.0;
  std::size_t count = 0;
  for (const auto& r : train.records) {
    for (float v : r.magnitude_db) {
      sum += v;
      sum_sq += static_cast<double>(v) * v;
    }
    count += r.magnitude_db.size();
  }
  const double mean = sum / static_cast<double>(count);
  const double var = std::max(sum_sq / static_cast<double>(count) - mean * mean, 0.0);
  net.input_offset = mean;
  net.input_scale = var > 0.0 ? 1.0 / std::sqrt(var) : 1.0;

  const std::vector<double> x_train = normalized_inputs(net, train);
  const std::vector<double> x_valid = normalized_inputs(net, valid);
  const std::vector<int> y_train = labels_of(train);
  const std::vector<int> y_valid = labels_of(valid);
  const std::size_t pixels = static_cast<std::size_t>(spec.input_height) * spec.input_width;

  std::vector<double> best = std::vector<double>(net.parameters().begin(), net.parameters().end());
  result.best_valid_accuracy = accuracy_of(net, x_valid, y_valid);
  std::vector<double> velocity(net.num_parameters(), 0.0);
  std::vector<double> grad;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(seed, 0x5b0f));
  std::vector<double> batch_x;
  std::vector<int> batch_y;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min<std::size_t>(cfg.batch_size, order.size() - start);
      batch_x.resize(n * pixels);
      batch_y.resize(n);
      for (std::size_t s = 0; s < n; ++s) {
        const std::size_t i = order[start + s];
        std::copy_n(x_train.begin() + static_cast<std::ptrdiff_t>(i * pixels), pixels,
                    batch_x.begin() + static_cast<std::ptrdiff_t>(s * pixels));
        batch_y[s] = y_train[i];
      }
      const double loss = net.loss_and_gradient(batch_x, batch_y, grad);
      if (!std::isfinite(loss)) {
        result.failure = "non-finite training loss at epoch " + std::to_string(epoch) +
                         " for seed " + std::to_string(seed);
        std::copy(best.begin(), best.end(), net.parameters().begin());
        return result;
      }
      loss_sum += loss * static_cast<double>(n);
      auto params = net.parameters();
      for (std::size_t j = 0; j < params.size(); ++j) {
        velocity[j] = cfg.momentum * velocity[j] - cfg.learning_rate * grad[j];
        params[j] += velocity[j];
      }
    }
    const double acc = accuracy_of(net, x_valid, y_valid);
    result.log.push_back({epoch, loss_sum / static_cast<double>(order.size()), acc});
    if (acc > result.best_valid_accuracy || result.best_epoch == 0) {
      result.best_valid_accuracy = acc;
      result.best_epoch = epoch;
      best.assign(net.parameters().begin(), net.parameters().end());
    }
  }
  std::copy(best.begin(), best.end(), net.parameters().begin());
  return result;
}

std::vector<TrainedModel> train(const ModelSpec& spec, const TrainConfig& cfg,
                                const RoiDataset& train_set, const RoiDataset& valid) {
  if (cfg.seeds.empty()) throw ValidationError("no training seeds");
  std::vector<TrainedModel> models;
  models.reserve(cfg.seeds.size());
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
    models.push_back(train_one(spec, cfg, static_cast<int>(i), train_set, valid));
  }
  return models;
}

double accuracy(const Network& net, const RoiDataset& data) {
  return accuracy_of(net, normalized_inputs(net, data), labels_of(data));
}

LogitDataset predict_logits(const Network& net, const RoiDataset& data, int seed_id,
                            int batch_size) {
  if (batch_size < 1) throw ValidationError("batch size must be positive");
  if (data.num_classes != net.spec().num_classes) {
    throw ValidationError("dataset has " + std::to_string(data.num_classes) +
                          " classes, model has " + std::to_string(net.spec().num_classes));
  }
  LogitDataset out;
  out.split = data.split;
  out.num_classes = data.num_classes;
  out.generator_seed = data.generator_seed;
  out.records.resize(data.size());
  const std::vector<double> x = normalized_inputs(net, data);
  for_each_batch(net, x, data.size(), batch_size, [&](std::size_t i, std::span<const double> z) {
    auto& rec = out.records[i];
    rec.sample_id = data.records[i].sample_id();
    rec.label = data.records[i].label;
    rec.seed_id = seed_id;
    rec.logits.assign(z.begin(), z.end());
  });
  return out;
}

double gradient_check(const ModelSpec& spec, const GradientCheckOptions& options) {
  if (options.samples < 1 || !(options.step > 0.0)) {
    throw ValidationError("gradient check needs samples >= 1 and step > 0");
  }
  Network net(spec, options.seed);
  Rng rng(mix_seed(options.seed, 0x9c));
  const std::size_t pixels = static_cast<std::size_t>(spec.input_height) * spec.input_width;
  std::vector<double> x(pixels * options.samples);
  for (double& v : x) v = rng.normal();
  std::vector<int> y(options.samples);
  for (int& v : y) v = static_cast<int>(rng.below(spec.num_classes));

  std::vector<double> analytic;
  net.loss_and_gradient(x, y, analytic, options.loss);
  if (options.corrupt_gradient) options.corrupt_gradient(net, analytic);

  auto params = net.parameters();
  double worst = 0.0;
  for (std::size_t j = 0; j < params.size(); ++j) {
    const double saved = params[j];
    params[j] = saved + options.step;
    const double up = net.loss(x, y, options.loss);
    params[j] = saved - options.step;
    const double down = net.loss(x, y, options.loss);
    params[j] = saved;
    const double numeric = (up - down) / (2.0 * options.step);
    const double scale = std::max({std::abs(analytic[j]), std::abs(numeric), 1e-6});
    worst = std::max(worst, std::abs(analytic[j] - numeric) / scale);
  }
  return worst;
}

namespace {

nlohmann::ordered_json spec_json(const ModelSpec& spec) {
  nlohmann::ordered_json j;
  j["input_height"] = spec.input_height;
  j["input_width"] = spec.input_width;
  j["conv_filters"] = spec.conv_filters;
  j["dense_units"] = spec.dense_units;
  j["num_classes"] = spec.num_classes;
  return j;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainedModel& model) {
  nlohmann::ordered_json header;
  header["spec"] = spec_json(model.network.spec());
  header["input_offset"] = model.network.input_offset;
  header["input_scale"] = model.network.input_scale;
  header["seed_id"] = model.seed_id;
  header["seed"] = model.seed;
  header["best_epoch"] = model.best_epoch;
  header["best_valid_accuracy"] = model.best_valid_accuracy;
  auto& layers = header["layers"] = nlohmann::ordered_json::array();
  for (const auto& l : model.network.layers()) {
    layers.push_back({{"name", l.name}, {"offset", l.offset}, {"size", l.size}});
  }
  header["num_parameters"] = model.network.num_parameters();
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof(kMagic));
  std::uint64_t len = text.size();
  if constexpr (std::endian::native == std::endian::big) len = __builtin_bswap64(len);
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (double v : model.network.parameters()) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    out.write(reinterpret_cast<const char*>(&bits), sizeof(bits));
  }
  if (!out) throw IoError("write failed for checkpoint " + path.string());
}

TrainedModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError(path.string() + " is not a speccal checkpoint");
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if constexpr (std::endian::native == std::endian::big) len = __builtin_bswap64(len);
  if (!in || len > (1u << 24)) throw IoError("corrupt checkpoint header in " + path.string());
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError("truncated checkpoint header in " + path.string());
  try {
    const auto h = nlohmann::json::parse(text);
    ModelSpec spec;
    spec.input_height = h.at("spec").at("input_height").get<int>();
    spec.input_width = h.at("spec").at("input_width").get<int>();
    spec.conv_filters = h.at("spec").at("conv_filters").get<std::vector<int>>();
    spec.dense_units = h.at("spec").at("dense_units").get<std::vector<int>>();
    spec.num_classes = h.at("spec").at("num_classes").get<int>();
    TrainedModel model{.seed_id = h.at("seed_id").get<int>(),
                       .seed = h.at("seed").get<std::uint64_t>(),
                       .network = Network(spec, 0),
                       .best_epoch = h.at("best_epoch").get<int>(),
                       .best_valid_accuracy = h.at("best_valid_accuracy").get<double>(),
                       .log = {},
                       .failure = std::nullopt};
    model.network.input_offset = h.at("input_offset").get<double>();
    model.network.input_scale = h.at("input_scale").get<double>();
    if (h.at("num_parameters").get<std::size_t>() != model.network.num_parameters()) {
      throw IoError("checkpoint parameter count does not match its spec");
    }
    for (double& v : model.network.parameters()) {
      std::uint64_t bits = 0;
      in.read(reinterpret_cast<char*>(&bits), sizeof(bits));
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
      v = std::bit_cast<double>(bits);
    }
    if (!in) throw IoError("truncated parameters in checkpoint " + path.string());
    if (in.peek() != std::char_traits<char>::eof()) {
      throw IoError("trailing bytes in checkpoint " + path.string());
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad checkpoint header in " + path.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw IoError("bad checkpoint spec in " + path.string() + ": " + e.what());
  }
}

void write_training_log(std::ostream& out, const std::vector<EpochLog>& log) {
  out << "epoch,train_loss,valid_acc\n";
  for (const auto& e : log) {
    out << e.epoch << ',' << format_double(e.train_loss) << ',' << format_double(e.valid_accuracy)
        << '\n';
  }
}

}  // namespace speccal

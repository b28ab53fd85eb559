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

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gtest/gtest.h"
#include "speccal/error.h"
#include "speccal/random.h"
#include "speccal/spectra_sim.h"

namespace speccal {
namespace {

namespace fs = std::filesystem;

// Two classes of 8x8 grids: a bright patch in the top half (class 0) or in
// the bottom half (class 1) over weak noise.
RoiDataset separable(std::size_t n, SplitTag split, std::uint64_t seed) {
  RoiDataset ds;
  ds.split = std::move(split);
  ds.num_classes = 2;
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    SpectrumROI r;
    r.label = static_cast<int>(i % 2);
    r.scene_id = static_cast<int>(seed);
    r.frame_id = static_cast<int>(i);
    r.height = 8;
    r.width = 8;
    r.magnitude_db.resize(64);
    for (int y = 0; y < 8; ++y) {
      for (int x = 0; x < 8; ++x) {
        const bool lit = (r.label == 0) == (y < 4);
        r.magnitude_db[y * 8 + x] = static_cast<float>((lit ? 10.0 : -10.0) + rng.normal());
      }
    }
    ds.records.push_back(std::move(r));
  }
  return ds;
}

ModelSpec toy_spec() {
  ModelSpec spec;
  spec.input_height = 8;
  spec.input_width = 8;
  spec.conv_filters = {2};
  spec.dense_units = {4};
  spec.num_classes = 2;
  return spec;
}

TEST(ModelSpecTest, Validation) {
  EXPECT_NO_THROW(validate(ModelSpec{}));
  EXPECT_NO_THROW(validate(tiny_model_spec()));
  ModelSpec bad;
  bad.num_classes = 1;
  EXPECT_THROW(validate(bad), ValidationError);
  bad = ModelSpec{};
  bad.conv_filters = {4, 4, 4, 4, 4, 4};
  EXPECT_THROW(validate(bad), ValidationError);
  bad = ModelSpec{};
  bad.dense_units = {0};
  EXPECT_THROW(validate(bad), ValidationError);
}

TEST(NetworkTest, LayoutAndInitialization) {
  const Network net(ModelSpec{}, 3);
  // conv 1->8, conv 8->16, dense 16*8*8->64, output 64->7.
  const std::size_t expected =
      (8 * 9 + 8) + (16 * 9 * 8 + 16) + (64 * 1024 + 64) + (7 * 64 + 7);
  EXPECT_EQ(net.num_parameters(), expected);
  ASSERT_EQ(net.layers().size(), 8u);
  EXPECT_EQ(net.layers()[0].name, "conv0.weight");
  EXPECT_EQ(net.layers().back().name, "output.bias");
  const auto& w = net.layers()[0];
  const double bound = std::sqrt(6.0 / 9.0);
  for (std::size_t j = w.offset; j < w.offset + w.size; ++j) {
    EXPECT_LE(std::abs(net.parameters()[j]), bound);
  }
  const auto& b = net.layers()[1];
  for (std::size_t j = b.offset; j < b.offset + b.size; ++j) {
    EXPECT_EQ(net.parameters()[j], 0.0);
  }
  EXPECT_EQ(Network(ModelSpec{}, 3), net);
  EXPECT_FALSE(Network(ModelSpec{}, 4) == net);
}

TEST(GradientCheckTest, LinearModelQuadraticLossIsExact) {
  ModelSpec linear;
  linear.input_height = 3;
  linear.input_width = 3;
  linear.conv_filters = {};
  linear.dense_units = {};
  linear.num_classes = 3;
  GradientCheckOptions opts;
  opts.loss = LossKind::kQuadratic;
  EXPECT_LT(gradient_check(linear, opts), 1e-8);
}

TEST(GradientCheckTest, TinyConvNetAgreesWithFiniteDifferences) {
  EXPECT_LT(gradient_check(tiny_model_spec()), 1e-3);
  GradientCheckOptions opts;
  opts.loss = LossKind::kQuadratic;
  opts.seed = 11;
  EXPECT_LT(gradient_check(tiny_model_spec(), opts), 1e-3);
}

TEST(GradientCheckTest, SignFlipInOneLayerIsCaught) {
  GradientCheckOptions opts;
  opts.corrupt_gradient = [](const Network& net, std::vector<double>& grad) {
    for (const auto& l : net.layers()) {
      if (l.name != "dense0.weight") continue;
      for (std::size_t j = l.offset; j < l.offset + l.size; ++j) grad[j] = -grad[j];
    }
  };
  EXPECT_GT(gradient_check(tiny_model_spec(), opts), 1e-3);
}

TEST(TrainTest, SeparableToyReachesPerfectValidation) {
  const RoiDataset train_set = separable(200, SplitTag::env1_train(), 1);
  const RoiDataset valid = separable(60, SplitTag::env1_valid(), 2);
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.batch_size = 16;
  cfg.seeds = {5};
  const TrainedModel m = train_one(toy_spec(), cfg, 0, train_set, valid);
  EXPECT_FALSE(m.failure);
  EXPECT_DOUBLE_EQ(m.best_valid_accuracy, 1.0);
  EXPECT_DOUBLE_EQ(accuracy(m.network, valid), 1.0);
  ASSERT_EQ(m.log.size(), 20u);
}

TEST(TrainTest, ZeroEpochsReturnsInitializationAtChance) {
  const auto sets = generate_dataset(default_scene(Environment::kEnv1, 9), SplitCounts{700, 700, 70});
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.seeds = {3};
  const TrainedModel m = train_one(ModelSpec{}, cfg, 0, sets[0], sets[1]);
  EXPECT_EQ(m.best_epoch, 0);
  EXPECT_TRUE(m.log.empty());
  EXPECT_TRUE(std::equal(m.network.parameters().begin(), m.network.parameters().end(),
                         Network(ModelSpec{}, mix_seed(3, 0x1417)).parameters().begin()));
  EXPECT_NEAR(accuracy(m.network, sets[1]), 1.0 / 7.0, 0.1);
}

TEST(TrainTest, SameSeedIsBitIdentical) {
  const RoiDataset train_set = separable(100, SplitTag::env1_train(), 1);
  const RoiDataset valid = separable(20, SplitTag::env1_valid(), 2);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.seeds = {8, 9};
  const auto a = train(toy_spec(), cfg, train_set, valid);
  const auto b = train(toy_spec(), cfg, train_set, valid);
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a[0].network, b[0].network);
  EXPECT_EQ(a[1].network, b[1].network);
  EXPECT_FALSE(a[0].network == a[1].network);
}

TEST(TrainTest, KeepsEarliestBestEpoch) {
  const auto sets = generate_dataset(default_scene(Environment::kEnv1, 9), SplitCounts{700, 140, 70});
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.seeds = {2};
  const TrainedModel m = train_one(ModelSpec{}, cfg, 0, sets[0], sets[1]);
  double best = -1.0;
  int best_epoch = 0;
  for (const auto& e : m.log) {
    EXPECT_TRUE(std::isfinite(e.train_loss));
    if (e.valid_accuracy > best) {
      best = e.valid_accuracy;
      best_epoch = e.epoch;
    }
  }
  EXPECT_EQ(m.best_epoch, best_epoch);
  EXPECT_DOUBLE_EQ(m.best_valid_accuracy, best);
  EXPECT_DOUBLE_EQ(accuracy(m.network, sets[1]), best);
}

TEST(TrainTest, DivergenceAbortsWithDiagnostic) {
  const RoiDataset train_set = separable(100, SplitTag::env1_train(), 1);
  const RoiDataset valid = separable(20, SplitTag::env1_valid(), 2);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.learning_rate = 1e300;
  cfg.seeds = {1};
  const TrainedModel m = train_one(toy_spec(), cfg, 0, train_set, valid);
  ASSERT_TRUE(m.failure.has_value());
  for (double p : m.network.parameters()) ASSERT_TRUE(std::isfinite(p));
}

TEST(TrainTest, RefusesWrongSplits) {
  const RoiDataset a = separable(20, SplitTag::env1_train(), 1);
  const RoiDataset v = separable(20, SplitTag::env1_valid(), 2);
  const RoiDataset t = separable(20, SplitTag::env1_test(), 3);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.seeds = {1};
  EXPECT_THROW(train_one(toy_spec(), cfg, 0, t, v), ProtocolError);
  EXPECT_THROW(train_one(toy_spec(), cfg, 0, a, t), ProtocolError);
  EXPECT_THROW(train_one(toy_spec(), cfg, 0, v, a), ProtocolError);
}

TEST(PredictTest, OodRecordsKeepSentinelAndWidth) {
  const RoiDataset ood = generate_ood(20, 1);
  const Network net(ModelSpec{}, 1);
  const LogitDataset logits = predict_logits(net, ood, 4);
  EXPECT_EQ(logits.split, SplitTag::ood());
  ASSERT_EQ(logits.size(), 20u);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    EXPECT_EQ(logits.records[i].label, kOodLabel);
    EXPECT_EQ(logits.records[i].seed_id, 4);
    EXPECT_EQ(logits.records[i].logits.size(), 7u);
    EXPECT_EQ(logits.records[i].sample_id, ood.records[i].sample_id());
  }
}

TEST(PredictTest, BatchSizeDoesNotChangeLogits) {
  const RoiDataset ood = generate_ood(30, 1);
  const Network net(ModelSpec{}, 1);
  // Batched matrix products may sum in a different order; only round-off may
  // differ.
  const LogitDataset a = predict_logits(net, ood, 0, 7);
  const LogitDataset b = predict_logits(net, ood, 0, 256);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.records[i].sample_id, b.records[i].sample_id);
    for (std::size_t k = 0; k < 7; ++k) {
      EXPECT_NEAR(a.records[i].logits[k], b.records[i].logits[k],
                  1e-12 * (1.0 + std::abs(b.records[i].logits[k])));
    }
  }
}

TEST(PredictTest, ShapeMismatchIsAnError) {
  const RoiDataset toy = separable(4, SplitTag::env1_test(), 1);
  const Network net(ModelSpec{}, 1);
  EXPECT_THROW(predict_logits(net, toy, 0), ValidationError);
}

TEST(CheckpointTest, RoundTrip) {
  const fs::path dir = fs::temp_directory_path() / "speccal-ckpt";
  fs::create_directories(dir);
  const RoiDataset train_set = separable(60, SplitTag::env1_train(), 1);
  const RoiDataset valid = separable(20, SplitTag::env1_valid(), 2);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.seeds = {4};
  const TrainedModel m = train_one(toy_spec(), cfg, 0, train_set, valid);
  save_checkpoint(dir / "m.ckpt", m);
  const TrainedModel back = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(back.network, m.network);
  EXPECT_EQ(back.seed, m.seed);
  EXPECT_EQ(back.best_epoch, m.best_epoch);
  EXPECT_EQ(back.network.layers().size(), m.network.layers().size());

  std::ofstream(dir / "m.ckpt", std::ios::app) << "x";
  EXPECT_THROW(load_checkpoint(dir / "m.ckpt"), IoError);
  EXPECT_THROW(load_checkpoint(dir / "none.ckpt"), IoError);
}

TEST(TrainingLogTest, Schema) {
  std::ostringstream out;
  write_training_log(out, {{1, 0.5, 0.25}});
  EXPECT_EQ(out.str().substr(0, out.str().find('\n')), "epoch,train_loss,valid_acc");
}

}  // namespace
}  // namespace speccal

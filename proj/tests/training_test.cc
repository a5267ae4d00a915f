/*
 * Copyright 2026 The voxmae Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "voxmae/training.h"

#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "gtest/gtest.h"
#include "gradcheck.h"
#include "voxmae/checkpoint.h"

namespace voxmae {
namespace {

using nn::Matrix;
using nn::Tape;

constexpr double kPi = 3.14159265358979323846;

// Single-stride record with the given logits.
template <typename T>
DecodeRecord<T> Record(const Stride& s, std::vector<VoxelCoord> coords, std::vector<double> logits) {
  DecodeRecord<T> r;
  r.stride = s;
  r.coords = std::make_shared<nn::CoordSet>(coords);
  r.logits.resize(static_cast<Eigen::Index>(logits.size()), 1);
  for (size_t i = 0; i < logits.size(); ++i) r.logits(i, 0) = static_cast<T>(logits[i]);
  r.kept.assign(logits.size(), true);
  return r;
}

LabelPyramid SingleLevel(LabelMap m) {
  return LabelPyramid({Stride::Unit()}, {std::move(m)});
}

TEST(WeightedBceTest, SingleOccupiedAtHalf) {
  LabelMap m;
  m[VoxelCoord{0, 0, 0}.Key()] = VoxelLabel::Occupied();
  const auto loss = weighted_bce<double>({Record<double>(Stride::Unit(), {{0, 0, 0}}, {0.0})},
                                         SingleLevel(m));
  EXPECT_NEAR(loss.total, 0.6931, 1e-4);
  EXPECT_NEAR(loss.total, std::log(2.0), 1e-12);
  EXPECT_EQ(loss.normalizer, 1u);
  EXPECT_FALSE(loss.degenerate);
}

TEST(WeightedBceTest, UnknownOnlyIsDegenerate) {
  const auto loss = weighted_bce<double>({Record<double>(Stride::Unit(), {{0, 0, 0}}, {1.3})},
                                         SingleLevel({}));
  EXPECT_EQ(loss.total, 0.0);
  EXPECT_EQ(loss.normalizer, 0u);
  EXPECT_TRUE(loss.degenerate);
  EXPECT_EQ(loss.per_stride.at(Stride::Unit()).n_unknown, 1u);
}

TEST(WeightedBceTest, HalfDiagonalEmptyContributesNothing) {
  const double diag = std::sqrt(3.0);
  LabelMap m;
  m[VoxelCoord{0, 0, 0}.Key()] = VoxelLabel::Empty(diag / 2, diag);
  for (double logit : {-3.0, 0.0, 4.0}) {
    std::vector<Matrix<double>> grads;
    const auto loss = weighted_bce<double>({Record<double>(Stride::Unit(), {{0, 0, 0}}, {logit})},
                                           SingleLevel(m), &grads);
    EXPECT_EQ(loss.total, 0.0);
    EXPECT_EQ(loss.normalizer, 1u);
    EXPECT_EQ(grads[0](0, 0), 0.0);
  }
}

TEST(WeightedBceTest, ClampBoundsTheLossAndKillsTheGradient) {
  LabelMap m;
  m[VoxelCoord{0, 0, 0}.Key()] = VoxelLabel::Occupied();
  std::vector<Matrix<double>> grads;
  const auto loss = weighted_bce<double>({Record<double>(Stride::Unit(), {{0, 0, 0}}, {-40.0})},
                                         SingleLevel(m), &grads);
  EXPECT_NEAR(loss.total, -std::log(kProbabilityClamp), 1e-9);
  EXPECT_EQ(grads[0](0, 0), 0.0);
  const auto saturated = weighted_bce<double>(
      {Record<double>(Stride::Unit(), {{0, 0, 0}}, {40.0})}, SingleLevel(m));
  EXPECT_LT(saturated.total, 1e-5);
  EXPECT_GE(saturated.total, 0.0);
}

// Logit gradients against central differences of the loss, and exact
// insensitivity to Unknown logits.
TEST(WeightedBceTest, LogitGradientsAndUnknownInvariance) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 2.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double diag = std::sqrt(3.0);
  LabelMap m;
  std::vector<VoxelCoord> coords;
  std::vector<double> logits;
  for (int i = 0; i < 40; ++i) {
    const VoxelCoord v{i, 0, 0};
    coords.push_back(v);
    logits.push_back(n(rng));
    const double r = u(rng);
    if (r < 0.3) {
      m[v.Key()] = VoxelLabel::Occupied();
    } else if (r < 0.7) {
      m[v.Key()] = VoxelLabel::Empty(0.5 * diag * u(rng), diag);
    }
  }
  auto eval = [&](const std::vector<double>& l, std::vector<Matrix<double>>* g) {
    return weighted_bce<double>({Record<double>(Stride::Unit(), coords, l)}, SingleLevel(m), g);
  };
  std::vector<Matrix<double>> grads;
  const double base = eval(logits, &grads).total;
  const double h = 1e-5;
  for (size_t i = 0; i < logits.size(); ++i) {
    auto plus = logits, minus = logits;
    plus[i] += h;
    minus[i] -= h;
    const double fd = (eval(plus, nullptr).total - eval(minus, nullptr).total) / (2 * h);
    EXPECT_NEAR(grads[0](static_cast<Eigen::Index>(i), 0), fd, 1e-8);
    if (!m.contains(coords[i].Key())) {
      EXPECT_EQ(grads[0](static_cast<Eigen::Index>(i), 0), 0.0);
      auto moved = logits;
      moved[i] += 17.0;
      EXPECT_EQ(eval(moved, nullptr).total, base);
    }
  }
}

TEST(WeightedBceTest, NormalizerSpansAllStrides) {
  LabelMap fine, coarse;
  fine[VoxelCoord{0, 0, 0}.Key()] = VoxelLabel::Occupied();
  coarse[VoxelCoord{0, 0, 0}.Key()] = VoxelLabel::Occupied();
  const LabelPyramid p({Stride::Unit(), {2, 2, 2}}, {fine, coarse});
  const auto loss = weighted_bce<double>(
      {Record<double>({2, 2, 2}, {{0, 0, 0}}, {0.0}), Record<double>(Stride::Unit(), {{0, 0, 0}, {1, 1, 1}}, {0.0, 0.0})},
      p);
  EXPECT_EQ(loss.normalizer, 2u);
  EXPECT_NEAR(loss.total, std::log(2.0), 1e-12);
}

// --- end-to-end gradient check ------------------------------------------

TEST(GradientCheckTest, AllParametersMatchCentralDifferences) {
  const gradcheck::Result r = gradcheck::Run(3, 5);
  EXPECT_LE(r.max_active, 50u);
  EXPECT_GT(r.checked, 300u);
  EXPECT_GT(r.unknown_logits, 0u);
  EXPECT_LE(r.max_relative_error, 1e-4) << r.worst;
  EXPECT_TRUE(r.unknown_logit_grads_zero);
}

// --- optimizer and schedule ---------------------------------------------

TEST(AdamTest, FirstStepMovesByLearningRateAgainstTheGradient) {
  nn::Parameter<double> p;
  p.value = Matrix<double>::Constant(1, 3, 1.0);
  p.grad.resize(1, 3);
  p.grad << 0.5, -2.0, 0.0;
  AdamState<double> st;
  adam_step<double>({&p}, st, 0.1);
  EXPECT_NEAR(p.value(0, 0), 0.9, 1e-6);
  EXPECT_NEAR(p.value(0, 1), 1.1, 1e-6);
  EXPECT_EQ(p.value(0, 2), 1.0);
  EXPECT_EQ(st.step, 1u);
  EXPECT_NEAR(st.m[0](0, 1), -0.2, 1e-12);
  EXPECT_NEAR(st.v[0](0, 1), 0.004, 1e-12);
}

TEST(AdamTest, MatchesReferenceRecurrence) {
  nn::Parameter<double> p;
  p.value = Matrix<double>::Constant(1, 1, 2.0);
  p.grad.resize(1, 1);
  AdamState<double> st;
  double x = 2.0, m = 0, v = 0;
  for (int t = 1; t <= 20; ++t) {
    const double g = 2 * x;  // gradient of x^2
    p.grad(0, 0) = g;
    adam_step<double>({&p}, st, 0.05);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    x -= 0.05 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    EXPECT_NEAR(p.value(0, 0), x, 1e-12);
  }
}

TEST(OneCycleTest, KeyPoints) {
  OneCycleSchedule s;
  s.max_lr = 0.003;
  s.total_steps = 1000;
  EXPECT_DOUBLE_EQ(s.LearningRate(0), 0.003 / 25);
  EXPECT_EQ(s.WarmupSteps(), 400u);
  EXPECT_DOUBLE_EQ(s.LearningRate(400), 0.003);
  EXPECT_DOUBLE_EQ(s.LearningRate(999), 0.003 / 1e4);
  EXPECT_NEAR(s.LearningRate(200), (0.003 / 25 + 0.003) / 2, 1e-15);
}

TEST(OneCycleTest, ContinuousAndPeaksOnce) {
  for (uint64_t n : {2ull, 3ull, 10ull, 37ull, 15000ull}) {
    OneCycleSchedule s;
    s.total_steps = n;
    int peaks = 0;
    double max_jump = 0.0;
    for (uint64_t t = 0; t < n; ++t) {
      const double lr = s.LearningRate(t);
      EXPECT_LE(lr, s.max_lr);
      EXPECT_GT(lr, 0.0);
      if (lr == s.max_lr) ++peaks;
      if (t > 0) max_jump = std::max(max_jump, std::abs(lr - s.LearningRate(t - 1)));
    }
    EXPECT_EQ(peaks, 1) << "n = " << n;
    if (n >= 100) EXPECT_LT(max_jump, 5.0 * s.max_lr / (0.4 * n));
  }
}

TEST(AugmentationTest, DisabledIsIdentityAndRigidOtherwise) {
  std::mt19937_64 rng(3);
  AugmentationConfig off;
  off.enabled = false;
  const Vec3 pivot(1, 2, 0);
  const Augmentation id = Augmentation::Sample(off, pivot, rng);
  EXPECT_EQ(id.Apply(Vec3(3, -1, 2)), Vec3(3, -1, 2));

  const AugmentationConfig on;
  for (int i = 0; i < 100; ++i) {
    const Augmentation a = Augmentation::Sample(on, pivot, rng);
    EXPECT_LE(std::abs(a.yaw), kPi / 4);
    EXPECT_GE(a.scale, 0.95);
    EXPECT_LE(a.scale, 1.05);
    const Vec3 p(4, 5, 0.7), q(-2, 1, 1.9);
    EXPECT_NEAR((a.Apply(p) - a.Apply(q)).norm(), a.scale * (p - q).norm(), 1e-12);
    EXPECT_NEAR(a.Apply(Vec3(7, 7, 0)).z(), 0.0, 1e-12);  // ground height preserved
  }
  Augmentation flip;
  flip.flip_x = true;
  EXPECT_TRUE(flip.Apply(Vec3(1, 2, 3)).isApprox(Vec3(-1, 2, 3)));
}

TEST(FrameRngTest, DependsOnEveryComponent) {
  auto draw = [](uint64_t a, uint64_t b, uint64_t c) { return frame_rng(a, b, c)(); };
  EXPECT_EQ(draw(1, 2, 3), draw(1, 2, 3));
  EXPECT_NE(draw(1, 2, 3), draw(1, 2, 4));
  EXPECT_NE(draw(1, 2, 3), draw(1, 3, 3));
  EXPECT_NE(draw(1, 2, 3), draw(2, 2, 3));
}

// --- trainer and checkpoints ---------------------------------------------

TrainConfig SmallTrainConfig() {
  TrainConfig c;
  c.grid.origin = Vec3(-4, -4, -0.125);
  c.grid.voxel_size = Vec3(0.25, 0.25, 0.25);
  c.grid.extent = {32, 32, 16};
  c.model.encoder.channels = {8, 8, 16, 16};
  c.model.decoder.blocks = {{16, {1, 1, 3}, {1, 1, 2}}, {16, {2, 2, 2}, {2, 2, 2}},
                            {8, {2, 2, 2}, {2, 2, 2}}, {8, {2, 2, 2}, {2, 2, 2}}};
  c.epochs = 1;
  c.seed = 7;
  return c;
}

TrainFrame SmallFrame(uint64_t seed, uint64_t id) {
  std::mt19937_64 rng(seed);
  RandomSceneOptions o;
  o.min_boxes = 3;
  o.max_boxes = 3;
  o.region_lo = Vec3(-3.5, -3.5, 0);
  o.region_hi = Vec3(3.5, 3.5, 0);
  o.max_size = Vec3(1.5, 1.5, 1.5);
  o.keep_clear_radius = 1.0;
  const Scene scene = random_scene(o, rng);
  const SensorModel sensor =
      SensorModel::Uniform(Vec3(0, 0, 1.7), 16, -0.5, 0.05, 48, -kPi, 2 * kPi, 20.0);
  TrainFrame f;
  f.frame_id = id;
  f.image = simulate(scene, sensor, seed);
  f.ground_z = 0.0;
  return f;
}

TEST(TrainerTest, IdenticalFramesGiveIdenticalLosses) {
  Trainer t(SmallTrainConfig(), 1);
  const TrainFrame f = SmallFrame(1, 5);
  const std::vector<TrainFrame> batch = {f, f};
  const StepResult r = t.Step(batch);
  ASSERT_EQ(r.frames.size(), 2u);
  EXPECT_EQ(r.frames[0].total, r.frames[1].total);
  EXPECT_GT(r.loss, 0.0);
  EXPECT_DOUBLE_EQ(r.learning_rate, 0.003 / 25);
}

TEST(TrainerTest, EmptyFrameIsSkipped) {
  Trainer t(SmallTrainConfig(), 1);
  TrainFrame f = SmallFrame(1, 0);
  std::fill(f.image.ranges.begin(), f.image.ranges.end(), RangeImage::kNoReturn);
  const std::vector<TrainFrame> batch = {f};
  const StepResult r = t.Step(batch);
  EXPECT_TRUE(r.skipped);
  EXPECT_EQ(t.step(), 1u);
}

TEST(TrainerTest, ShortOverfitReducesLoss) {
  TrainConfig c = SmallTrainConfig();
  c.keep_fraction = 1.0;
  c.spherical_mask = false;
  c.augmentation.enabled = false;
  c.epochs = 60;
  Trainer t(c, 1);
  const std::vector<TrainFrame> frames = {SmallFrame(2, 0)};
  std::vector<double> losses;
  t.Fit(frames, [&](const StepResult& r) { losses.push_back(r.loss); });
  ASSERT_EQ(losses.size(), 60u);
  EXPECT_LT(losses.back(), 0.5 * losses.front());
}

std::string Bytes(const ModelCheckpoint& c) {
  std::stringstream s;
  write_checkpoint(s, c);
  return s.str();
}

TEST(CheckpointTest, TrainingIsBitwiseReproducible) {
  auto run = [] {
    TrainConfig c = SmallTrainConfig();
    c.epochs = 5;
    Trainer t(c, 2);
    t.Fit({SmallFrame(3, 0), SmallFrame(4, 1)}, {});
    return Bytes(capture_checkpoint(t));
  };
  const std::string a = run(), b = run();
  EXPECT_EQ(a, b);
}

TEST(CheckpointTest, RoundTripReproducesForwardOutputs) {
  TrainConfig c = SmallTrainConfig();
  c.epochs = 3;
  Trainer t(c, 1);
  const TrainFrame f = SmallFrame(5, 0);
  t.Fit({f}, {});
  const ModelCheckpoint saved = capture_checkpoint(t);
  std::stringstream buf;
  write_checkpoint(buf, saved);
  const ModelCheckpoint loaded = read_checkpoint(buf);
  EXPECT_EQ(Bytes(loaded), Bytes(saved));

  Trainer other(c, 1);
  restore_checkpoint(loaded, other);
  EXPECT_EQ(other.step(), 3u);
  ReconstructOptions ro;
  ro.limits.ground_plane_z = 0.0;
  const LidarFrame pts = to_points(f.image);
  EXPECT_EQ(reconstruct(t.model(), pts, c.grid, ro), reconstruct(other.model(), pts, c.grid, ro));
  EXPECT_EQ(Bytes(capture_checkpoint(other)), Bytes(saved));
}

TEST(CheckpointTest, CorruptFilesNameTheField) {
  Trainer t(SmallTrainConfig(), 1);
  const std::string bytes = Bytes(capture_checkpoint(t));
  auto error_of = [](const std::string& data) -> std::string {
    std::stringstream s(data);
    try {
      read_checkpoint(s);
    } catch (const FormatError& e) {
      return e.what();
    }
    return "";
  };
  EXPECT_NE(error_of(bytes.substr(0, bytes.size() / 2)).find("truncated"), std::string::npos);
  EXPECT_NE(error_of(bytes.substr(0, bytes.size() - 3)).find("seed"), std::string::npos);
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_NE(error_of(bad).find("magic"), std::string::npos);
  bad = bytes;
  bad[4] = 2;
  EXPECT_NE(error_of(bad).find("version"), std::string::npos);
  EXPECT_NE(error_of(bytes + "x").find("trailer"), std::string::npos);
}

TEST(CheckpointTest, DifferentDecoderIsAShapeMismatch) {
  TrainConfig c = SmallTrainConfig();
  Trainer a(c, 1);
  const ModelCheckpoint ckpt = capture_checkpoint(a);
  TrainConfig d = c;
  d.model.decoder.blocks[2].channels = 12;
  Model<float> other(d.model, 1);
  const auto before = other.decoder[0].up.weight.value;
  try {
    restore_checkpoint<float>(ckpt, other, nullptr);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("decoder.2"), std::string::npos) << e.what();
  }
  EXPECT_EQ(other.decoder[0].up.weight.value, before);  // untouched on failure
}

}  // namespace
}  // namespace voxmae

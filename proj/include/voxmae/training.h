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

#ifndef VOXMAE_TRAINING_H_
#define VOXMAE_TRAINING_H_

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "voxmae/lidar.h"
#include "voxmae/model.h"
#include "voxmae/supervision.h"

namespace voxmae {

inline constexpr double kProbabilityClamp = 1e-7;

struct StrideLoss {
  // -sum of w * l over the stride's records (non-negative).
  double sum_weighted_bce = 0.0;
  size_t n_occupied = 0;
  size_t n_empty = 0;
  size_t n_unknown = 0;
};

struct LossBreakdown {
  double total = 0.0;
  std::map<Stride, StrideLoss> per_stride;
  // Occupied plus Empty records over all strides.
  size_t normalizer = 0;
  // Set when the normalizer is zero; total is then 0.
  bool degenerate = false;
};

// Distance-weighted binary cross-entropy over every decoder record. When
// `logit_grads` is given it receives d(total)/d(logit) per record.
template <typename T>
LossBreakdown weighted_bce(const std::vector<DecodeRecord<T>>& records,
                           const LabelPyramid& pyramid,
                           std::vector<nn::Matrix<T>>* logit_grads = nullptr);

template <typename T>
struct ForwardResult {
  DecodeOutput<T> decoded;
  LossBreakdown loss;
  std::vector<nn::Matrix<T>> logit_grads;
};

// Encode, decode and score one frame. Records operations on `tape` when given.
template <typename T>
ForwardResult<T> forward_loss(Model<T>& model, const nn::SparseTensor<T>& input,
                              const LabelPyramid& pyramid, const SafetyLimits& limits, Mode mode,
                              std::mt19937_64& rng, nn::Tape<T>* tape);

// Back-propagates scale * d(loss)/d(logit) into the parameter gradients.
// Does nothing for a degenerate frame.
template <typename T>
void backward_loss(const ForwardResult<T>& result, nn::Tape<T>& tape, T scale);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<nn::Matrix<T>> m;
  std::vector<nn::Matrix<T>> v;
  uint64_t step = 0;
};

// One bias-corrected Adam update of every parameter from its accumulated grad.
template <typename T>
void adam_step(const std::vector<nn::Parameter<T>*>& params, AdamState<T>& state, double lr,
               const AdamConfig& config = {});

// Linear warm-up from max_lr / div_factor to max_lr over the first
// warmup_fraction of the steps, then cosine annealing to
// max_lr / final_div_factor at the last step.
struct OneCycleSchedule {
  double max_lr = 0.003;
  uint64_t total_steps = 1;
  double warmup_fraction = 0.4;
  double div_factor = 25.0;
  double final_div_factor = 1e4;

  uint64_t WarmupSteps() const;
  double LearningRate(uint64_t step) const;
};

struct AugmentationConfig {
  bool enabled = true;
  double flip_probability = 0.5;
  double max_rotation = 0.7853981633974483;  // pi / 4
  double min_scale = 0.95;
  double max_scale = 1.05;
};

// Rigid flip/rotation/scale about a pivot on the ground plane below the grid
// center, so the ground height is unchanged.
struct Augmentation {
  bool flip_x = false;
  bool flip_y = false;
  double yaw = 0.0;
  double scale = 1.0;
  Vec3 pivot = Vec3::Zero();

  static Augmentation Sample(const AugmentationConfig& config, const Vec3& pivot,
                             std::mt19937_64& rng);
  Vec3 Apply(const Vec3& p) const;
  LidarFrame Apply(const LidarFrame& frame) const;
};

struct TrainConfig {
  int epochs = 30;
  size_t batch_size = 1;
  double max_lr = 0.003;
  AdamConfig adam;
  uint64_t seed = 0;
  double keep_fraction = 0.6;
  bool spherical_mask = true;
  AugmentationConfig augmentation;
  GridConfig grid;
  SafetyLimits limits;
  ModelConfig model;
  int num_threads = 1;

  void Validate() const;
};

struct TrainFrame {
  uint64_t frame_id = 0;
  RangeImage image;
  // Ground height for pruning; estimated from the points when unset.
  std::optional<double> ground_z;
};

struct StepResult {
  uint64_t step = 0;
  double learning_rate = 0.0;
  // Mean of the non-degenerate frame losses.
  double loss = 0.0;
  std::vector<LossBreakdown> frames;
  bool skipped = false;
  size_t peak_active = 0;
};

// Seeds the per-frame stream from (seed, frame id, step).
std::mt19937_64 frame_rng(uint64_t seed, uint64_t frame_id, uint64_t step);

class Trainer {
 public:
  // `steps_per_epoch` sizes the learning-rate schedule.
  Trainer(const TrainConfig& config, uint64_t steps_per_epoch);

  StepResult Step(std::span<const TrainFrame> batch);

  // Runs every epoch over `frames`, shuffled per epoch. `on_step` may be
  // empty.
  void Fit(const std::vector<TrainFrame>& frames,
           const std::function<void(const StepResult&)>& on_step);

  Model<float>& model() { return model_; }
  AdamState<float>& optimizer() { return adam_; }
  const OneCycleSchedule& schedule() const { return schedule_; }
  const TrainConfig& config() const { return config_; }
  uint64_t step() const { return step_; }
  void set_step(uint64_t step) { step_ = step; }

  // Labels of a frame under the given augmentation; cached by frame id when
  // augmentation is disabled.
  const LabelPyramid& Pyramid(const TrainFrame& frame, const Augmentation& aug,
                              LabelPyramid& scratch);

 private:
  TrainConfig config_;
  Model<float> model_;
  AdamState<float> adam_;
  OneCycleSchedule schedule_;
  uint64_t step_ = 0;
  std::map<uint64_t, LabelPyramid> pyramid_cache_;
};

// Number of optimizer steps per epoch for `num_frames` frames.
uint64_t steps_per_epoch(size_t num_frames, size_t batch_size);

}  // namespace voxmae

#endif  // VOXMAE_TRAINING_H_

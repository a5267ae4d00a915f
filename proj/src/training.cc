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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace voxmae {
namespace {

constexpr double kPi = 3.14159265358979323846;

}  // namespace

template <typename T>
LossBreakdown weighted_bce(const std::vector<DecodeRecord<T>>& records,
                           const LabelPyramid& pyramid,
                           std::vector<nn::Matrix<T>>* logit_grads) {
  LossBreakdown out;
  std::vector<std::vector<VoxelLabel>> labels(records.size());
  double sum = 0.0;
  for (size_t r = 0; r < records.size(); ++r) {
    const DecodeRecord<T>& rec = records[r];
    labels[r] = lookup(pyramid, rec.stride, rec.coords->coords());
    StrideLoss& sl = out.per_stride[rec.stride];
    for (size_t i = 0; i < labels[r].size(); ++i) {
      const VoxelLabel& lab = labels[r][i];
      switch (lab.category) {
        case VoxelCategory::kOccupied: ++sl.n_occupied; break;
        case VoxelCategory::kEmpty: ++sl.n_empty; break;
        case VoxelCategory::kUnknown: ++sl.n_unknown; continue;
      }
      const double x = std::clamp(nn::sigmoid(static_cast<double>(rec.logits(i, 0))),
                                  kProbabilityClamp, 1.0 - kProbabilityClamp);
      const double y = lab.target();
      const double l = y * std::log(x) + (1.0 - y) * std::log(1.0 - x);
      sl.sum_weighted_bce -= lab.weight * l;
    }
    out.normalizer += sl.n_occupied + sl.n_empty;
    sum += sl.sum_weighted_bce;
  }
  if (logit_grads != nullptr) {
    logit_grads->clear();
    for (const auto& rec : records) logit_grads->push_back(nn::Matrix<T>::Zero(rec.logits.rows(), 1));
  }
  if (out.normalizer == 0) {
    out.degenerate = true;
    return out;
  }
  const double inv = 1.0 / static_cast<double>(out.normalizer);
  out.total = sum * inv;
  if (logit_grads == nullptr) return out;
  for (size_t r = 0; r < records.size(); ++r) {
    for (size_t i = 0; i < labels[r].size(); ++i) {
      const VoxelLabel& lab = labels[r][i];
      if (lab.category == VoxelCategory::kUnknown || lab.weight == 0.0) continue;
      const double x = nn::sigmoid(static_cast<double>(records[r].logits(i, 0)));
      // The clamp has zero derivative outside its range.
      if (x < kProbabilityClamp || x > 1.0 - kProbabilityClamp) continue;
      (*logit_grads)[r](i, 0) = static_cast<T>(lab.weight * (x - lab.target()) * inv);
    }
  }
  return out;
}

template <typename T>
ForwardResult<T> forward_loss(Model<T>& model, const nn::SparseTensor<T>& input,
                              const LabelPyramid& pyramid, const SafetyLimits& limits, Mode mode,
                              std::mt19937_64& rng, nn::Tape<T>* tape) {
  ForwardResult<T> r;
  const auto bottleneck = encode(model, input, mode, tape);
  r.decoded = decode(model, bottleneck, limits, mode, rng, tape);
  r.loss = weighted_bce(r.decoded.records, pyramid, &r.logit_grads);
  return r;
}

template <typename T>
void backward_loss(const ForwardResult<T>& result, nn::Tape<T>& tape, T scale) {
  if (result.loss.degenerate) return;
  bool any = false;
  for (size_t r = 0; r < result.decoded.records.size(); ++r) {
    const int node = result.decoded.records[r].logit_node;
    if (node < 0) continue;
    tape.Seed(node, result.logit_grads[r] * scale);
    any = true;
  }
  if (any) tape.Backward();
}

template <typename T>
void adam_step(const std::vector<nn::Parameter<T>*>& params, AdamState<T>& state, double lr,
               const AdamConfig& config) {
  if (state.m.empty()) {
    for (const auto* p : params) {
      state.m.push_back(nn::Matrix<T>::Zero(p->value.rows(), p->value.cols()));
      state.v.push_back(nn::Matrix<T>::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adam: parameter count changed");
  ++state.step;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (size_t k = 0; k < params.size(); ++k) {
    nn::Parameter<T>& p = *params[k];
    T* m = state.m[k].data();
    T* v = state.v[k].data();
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const double g = p.grad.data()[i];
      const double mi = config.beta1 * m[i] + (1.0 - config.beta1) * g;
      const double vi = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = lr * (mi / c1) / (std::sqrt(vi / c2) + config.epsilon);
      p.value.data()[i] = static_cast<T>(p.value.data()[i] - update);
    }
  }
}

uint64_t OneCycleSchedule::WarmupSteps() const {
  if (total_steps < 2) return 0;
  const auto w = static_cast<uint64_t>(std::floor(warmup_fraction * static_cast<double>(total_steps)));
  return std::clamp<uint64_t>(w, 1, total_steps - 1);
}

double OneCycleSchedule::LearningRate(uint64_t step) const {
  const double initial = max_lr / div_factor;
  const double final_lr = max_lr / final_div_factor;
  if (total_steps < 2) return initial;
  const uint64_t w = WarmupSteps();
  if (step <= w) return initial + (max_lr - initial) * static_cast<double>(step) / static_cast<double>(w);
  const uint64_t last = total_steps - 1;
  if (step >= last) return w == last ? max_lr : final_lr;
  const double progress = static_cast<double>(step - w) / static_cast<double>(last - w);
  return final_lr + (max_lr - final_lr) * 0.5 * (1.0 + std::cos(kPi * progress));
}

Augmentation Augmentation::Sample(const AugmentationConfig& config, const Vec3& pivot,
                                  std::mt19937_64& rng) {
  Augmentation a;
  a.pivot = pivot;
  if (!config.enabled) return a;
  std::bernoulli_distribution flip(config.flip_probability);
  std::uniform_real_distribution<double> rot(-config.max_rotation, config.max_rotation);
  std::uniform_real_distribution<double> scale(config.min_scale, config.max_scale);
  a.flip_x = flip(rng);
  a.flip_y = flip(rng);
  a.yaw = rot(rng);
  a.scale = scale(rng);
  return a;
}

Vec3 Augmentation::Apply(const Vec3& p) const {
  Vec3 q = p - pivot;
  if (flip_x) q.x() = -q.x();
  if (flip_y) q.y() = -q.y();
  const double c = std::cos(yaw), s = std::sin(yaw);
  q = Vec3(c * q.x() - s * q.y(), s * q.x() + c * q.y(), q.z());
  return pivot + scale * q;
}

LidarFrame Augmentation::Apply(const LidarFrame& frame) const {
  LidarFrame out;
  out.points.reserve(frame.points.size());
  for (const LidarPoint& p : frame.points) out.points.push_back({Apply(p.position), p.sensor_id});
  for (const auto& [id, o] : frame.sensor_origins) out.sensor_origins[id] = Apply(o);
  return out;
}

void TrainConfig::Validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(max_lr > 0.0)) throw ConfigError("max_lr must be positive");
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
    throw ConfigError("keep_fraction must lie in (0, 1]");
  }
  if (augmentation.min_scale <= 0.0 || augmentation.min_scale > augmentation.max_scale) {
    throw ConfigError("augmentation scale range is invalid");
  }
  if (num_threads < 1) throw ConfigError("threads must be at least 1");
  grid.Validate();
  limits.Validate();
  model.Validate();
}

std::mt19937_64 frame_rng(uint64_t seed, uint64_t frame_id, uint64_t step) {
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32),
                    static_cast<uint32_t>(frame_id), static_cast<uint32_t>(frame_id >> 32),
                    static_cast<uint32_t>(step), static_cast<uint32_t>(step >> 32)};
  return std::mt19937_64(seq);
}

uint64_t steps_per_epoch(size_t num_frames, size_t batch_size) {
  return (num_frames + batch_size - 1) / batch_size;
}

Trainer::Trainer(const TrainConfig& config, uint64_t steps_per_epoch)
    : config_(config), model_((config.Validate(), config.model), config.seed) {
  schedule_.max_lr = config.max_lr;
  schedule_.total_steps = std::max<uint64_t>(1, steps_per_epoch * static_cast<uint64_t>(config.epochs));
}

const LabelPyramid& Trainer::Pyramid(const TrainFrame& frame, const Augmentation& aug,
                                     LabelPyramid& scratch) {
  const bool cacheable = !config_.augmentation.enabled;
  if (cacheable) {
    auto it = pyramid_cache_.find(frame.frame_id);
    if (it != pyramid_cache_.end()) return it->second;
  }
  const LidarFrame full = aug.Apply(to_points(frame.image));
  CategorizeOptions opts;
  opts.num_threads = config_.num_threads;
  const LabelMap base = categorize(full, config_.grid, opts);
  auto strides = config_.model.decoder.SupervisionStrides(config_.model.encoder.CumulativeStride());
  LabelPyramid pyramid = build_pyramid(base, config_.grid, strides);
  if (cacheable) return pyramid_cache_.emplace(frame.frame_id, std::move(pyramid)).first->second;
  scratch = std::move(pyramid);
  return scratch;
}

StepResult Trainer::Step(std::span<const TrainFrame> batch) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  StepResult result;
  result.step = step_;
  result.learning_rate = schedule_.LearningRate(step_);
  model_.ZeroGrad();

  struct Pending {
    std::unique_ptr<nn::Tape<float>> tape;
    ForwardResult<float> forward;
  };
  std::vector<Pending> pending;
  double loss_sum = 0.0;
  for (const TrainFrame& frame : batch) {
    std::mt19937_64 rng = frame_rng(config_.seed, frame.frame_id, step_);
    const Vec3 center = config_.grid.origin + 0.5 * (config_.grid.Upper() - config_.grid.origin);
    const LidarFrame raw = to_points(frame.image);
    const double ground = frame.ground_z ? *frame.ground_z
                                         : estimate_ground_z(raw).value_or(config_.grid.origin.z());
    const Augmentation aug =
        Augmentation::Sample(config_.augmentation, Vec3(center.x(), center.y(), ground), rng);
    LabelPyramid scratch;
    const LabelPyramid& pyramid = Pyramid(frame, aug, scratch);

    LidarFrame masked;
    if (config_.spherical_mask) {
      const auto [mr, mc] = sample_mask_params(rng);
      masked = aug.Apply(to_points(spherical_mask(frame.image, mr, mc)));
    } else {
      masked = aug.Apply(raw);
    }
    const Voxelization vox = voxelize(masked, config_.grid);
    const auto selected = voxel_mask_indices(vox.coords.size(), config_.keep_fraction, rng);
    if (selected.empty()) {
      LossBreakdown degenerate;
      degenerate.degenerate = true;
      result.frames.push_back(degenerate);
      continue;
    }
    SafetyLimits limits = config_.limits;
    if (!limits.ground_plane_z) limits.ground_plane_z = ground;

    Pending p;
    p.tape = std::make_unique<nn::Tape<float>>();
    const auto input = encoder_input<float>(vox, selected, config_.grid, config_.model.encoder, p.tape.get());
    p.forward = forward_loss(model_, input, pyramid, limits, Mode::kTrain, rng, p.tape.get());
    result.peak_active = std::max(result.peak_active, p.forward.decoded.peak_active);
    result.frames.push_back(p.forward.loss);
    if (!p.forward.loss.degenerate) {
      loss_sum += p.forward.loss.total;
      pending.push_back(std::move(p));
    }
  }

  if (pending.empty()) {
    result.skipped = true;
    ++step_;
    return result;
  }
  const float scale = 1.0f / static_cast<float>(pending.size());
  result.loss = loss_sum / static_cast<double>(pending.size());
  for (Pending& p : pending) backward_loss(p.forward, *p.tape, scale);
  adam_step(model_.Parameters(), adam_, result.learning_rate, config_.adam);
  ++step_;
  return result;
}

void Trainer::Fit(const std::vector<TrainFrame>& frames,
                  const std::function<void(const StepResult&)>& on_step) {
  if (frames.empty()) throw std::invalid_argument("fit: no frames");
  for (int epoch = 0; epoch < config_.epochs; ++epoch) {
    std::vector<size_t> order(frames.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::mt19937_64 rng = frame_rng(config_.seed, ~uint64_t{0}, static_cast<uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t b = 0; b < order.size(); b += config_.batch_size) {
      std::vector<TrainFrame> batch;
      for (size_t i = b; i < std::min(order.size(), b + config_.batch_size); ++i) {
        batch.push_back(frames[order[i]]);
      }
      const StepResult r = Step(batch);
      if (on_step) on_step(r);
    }
  }
}

#define VOXMAE_INSTANTIATE_TRAINING(T)                                                            \
  template LossBreakdown weighted_bce(const std::vector<DecodeRecord<T>>&, const LabelPyramid&,   \
                                      std::vector<nn::Matrix<T>>*);                               \
  template ForwardResult<T> forward_loss(Model<T>&, const nn::SparseTensor<T>&,                 \
                                         const LabelPyramid&, const SafetyLimits&, Mode,          \
                                         std::mt19937_64&, nn::Tape<T>*);                         \
  template void backward_loss(const ForwardResult<T>&, nn::Tape<T>&, T);                          \
  template void adam_step(const std::vector<nn::Parameter<T>*>&, AdamState<T>&, double,           \
                          const AdamConfig&);

VOXMAE_INSTANTIATE_TRAINING(float)
VOXMAE_INSTANTIATE_TRAINING(double)

}  // namespace voxmae

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

#ifndef VOXMAE_TESTS_GRADCHECK_H_
#define VOXMAE_TESTS_GRADCHECK_H_

// End-to-end central-difference check of every model parameter on a tiny
// two-block encoder/decoder in double precision.

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <string>

#include "voxmae/model.h"
#include "voxmae/training.h"

namespace voxmae::gradcheck {

inline ModelConfig TwoBlockConfig() {
  ModelConfig c;
  c.encoder.channels = {3, 4};
  c.encoder.strides = {{2, 2, 2}, {2, 2, 2}};
  c.encoder.kernels = {{2, 2, 2}, {2, 2, 2}};
  c.encoder.centroid_offsets = true;
  c.decoder.blocks = {{4, {2, 2, 2}, {2, 2, 2}}, {3, {2, 2, 2}, {2, 2, 2}}};
  c.decoder.prune_threshold = 0.0;  // nothing is pruned, so the loss is smooth
  return c;
}

struct Setup {
  GridConfig grid;
  Voxelization vox;
  LabelPyramid pyramid;
};

inline Setup MakeSetup(uint64_t seed) {
  std::mt19937_64 rng(seed);
  Setup s;
  // 6 x 4 x 2 cells: at most 48 active voxels at any stride.
  s.grid.extent = {6, 4, 2};
  std::uniform_int_distribution<int> cx(0, 5), cy(0, 3), cz(0, 1);
  std::uniform_real_distribution<double> off(-0.5, 0.5);
  std::set<VoxelCoord> coords;
  while (coords.size() < 14) coords.insert({cx(rng), cy(rng), cz(rng)});
  for (const auto& v : coords) {
    s.vox.coords.push_back(v);
    s.vox.offsets.push_back(Vec3(off(rng), off(rng), off(rng)));
  }
  // Random labels (including Unknown) at both supervised strides.
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<LabelMap> levels(2);
  const std::vector<Stride> strides = {Stride::Unit(), {2, 2, 2}};
  for (int l = 0; l < 2; ++l) {
    const auto ext = s.grid.ExtentAt(strides[l]);
    const double diag = s.grid.Diagonal(strides[l]);
    for (int x = 0; x < ext[0]; ++x) {
      for (int y = 0; y < ext[1]; ++y) {
        for (int z = 0; z < ext[2]; ++z) {
          const double r = u(rng);
          const VoxelCoord v{x, y, z};
          if (r < 0.35) {
            levels[l][v.Key()] = VoxelLabel::Occupied();
          } else if (r < 0.75) {
            levels[l][v.Key()] = VoxelLabel::Empty(0.45 * diag * u(rng), diag);
          }
        }
      }
    }
  }
  s.pyramid = LabelPyramid(strides, levels);
  return s;
}

inline double Loss(Model<double>& m, const Setup& s, nn::Tape<double>* tape,
                   ForwardResult<double>* keep = nullptr) {
  std::mt19937_64 rng(0);
  std::vector<size_t> all(s.vox.coords.size());
  for (size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto input = encoder_input<double>(s.vox, all, s.grid, m.config().encoder, tape);
  auto r = forward_loss(m, input, s.pyramid, SafetyLimits{}, Mode::kTrain, rng, tape);
  const double total = r.loss.total;
  if (keep != nullptr) *keep = std::move(r);
  return total;
}

struct Result {
  size_t checked = 0;
  size_t max_active = 0;
  double max_relative_error = 0.0;
  std::string worst;
  bool unknown_logit_grads_zero = true;
  size_t unknown_logits = 0;
};

// Relative error |analytic - numeric| / max(|analytic|, |numeric|, 1e-6)
// with step 1e-3, over every parameter entry.
inline Result Run(uint64_t setup_seed, uint64_t model_seed) {
  const Setup s = MakeSetup(setup_seed);
  Model<double> m(TwoBlockConfig(), model_seed);
  // Non-trivial affine batch-norm parameters.
  std::mt19937_64 rng(model_seed + 3);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  for (auto* p : m.Parameters()) {
    if (p->name.find("gamma") != std::string::npos) {
      for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = u(rng);
    }
  }
  Result res;
  nn::Tape<double> tape;
  m.ZeroGrad();
  ForwardResult<double> fr;
  Loss(m, s, &tape, &fr);
  for (size_t k = 0; k < fr.decoded.records.size(); ++k) {
    const auto& r = fr.decoded.records[k];
    res.max_active = std::max(res.max_active, r.coords->size());
    const auto labels = lookup(s.pyramid, r.stride, r.coords->coords());
    for (size_t i = 0; i < labels.size(); ++i) {
      if (labels[i].category != VoxelCategory::kUnknown) continue;
      ++res.unknown_logits;
      if (fr.logit_grads[k](static_cast<Eigen::Index>(i), 0) != 0.0) res.unknown_logit_grads_zero = false;
    }
  }
  backward_loss(fr, tape, 1.0);

  const double h = 1e-3;
  for (auto* p : m.Parameters()) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double orig = p->value.data()[i];
      p->value.data()[i] = orig + h;
      const double up = Loss(m, s, nullptr);
      p->value.data()[i] = orig - h;
      const double down = Loss(m, s, nullptr);
      p->value.data()[i] = orig;
      const double fd = (up - down) / (2 * h);
      const double an = p->grad.data()[i];
      const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6});
      if (rel > res.max_relative_error) {
        res.max_relative_error = rel;
        res.worst = p->name + "[" + std::to_string(i) + "] analytic " + std::to_string(an) +
                    " numeric " + std::to_string(fd);
      }
      ++res.checked;
    }
  }
  return res;
}

}  // namespace voxmae::gradcheck

#endif  // VOXMAE_TESTS_GRADCHECK_H_

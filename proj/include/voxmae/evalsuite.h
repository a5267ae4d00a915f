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

#ifndef VOXMAE_EVALSUITE_H_
#define VOXMAE_EVALSUITE_H_

#include <cstdint>
#include <optional>
#include <vector>

#include "json.hpp"
#include "voxmae/geometry.h"
#include "voxmae/lidar.h"
#include "voxmae/supervision.h"

namespace voxmae {

// Rates are unset when their denominator is zero.
struct ReconMetrics {
  std::optional<double> occupied_recall;
  std::optional<double> empty_false_positive_rate;
  std::optional<double> unknown_completion_recall;
  size_t n_recon = 0;
  size_t n_occupied = 0;
  size_t n_occupied_hit = 0;
  size_t n_empty = 0;
  size_t n_empty_hit = 0;
  size_t n_unknown_solid = 0;
  size_t n_unknown_solid_hit = 0;
};

// Stride-1 voxels whose cell overlaps the interior of some box (the ground
// plane is not solid), sorted.
std::vector<VoxelCoord> solid_voxels(const Scene& scene, const GridConfig& grid);

// Compares a stride-1 reconstruction with the labels of the unmasked frame and
// with the scene's solid geometry.
ReconMetrics evaluate_reconstruction(const std::vector<VoxelCoord>& recon, const Scene& scene,
                                     const LabelPyramid& pyramid, const GridConfig& grid);

// Pools the counts of several frames and recomputes the rates.
ReconMetrics aggregate(const std::vector<ReconMetrics>& frames);

nlohmann::json to_json(const ReconMetrics& m);

struct MaskingConfig {
  bool spherical = true;
  double keep_fraction = 0.6;
};

// Mean fraction of in-grid points that survive spherical masking followed by
// voxel masking, over `n_trials` draws cycling through `frames`.
double masking_stats(const std::vector<RangeImage>& frames, const GridConfig& grid,
                     const MaskingConfig& config, int n_trials, uint64_t seed);

}  // namespace voxmae

#endif  // VOXMAE_EVALSUITE_H_

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

#include "voxmae/evalsuite.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "voxmae/model.h"

namespace voxmae {
namespace {

std::optional<double> Ratio(size_t num, size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

void FillRates(ReconMetrics& m) {
  m.occupied_recall = Ratio(m.n_occupied_hit, m.n_occupied);
  m.empty_false_positive_rate = Ratio(m.n_empty_hit, m.n_empty);
  m.unknown_completion_recall = Ratio(m.n_unknown_solid_hit, m.n_unknown_solid);
}

size_t CountInGrid(const LidarFrame& frame, const GridConfig& grid) {
  size_t n = 0;
  for (const LidarPoint& p : frame.points) n += world_to_voxel(p.position, grid).has_value();
  return n;
}

nlohmann::json Rate(const std::optional<double>& r) {
  return r ? nlohmann::json(*r) : nlohmann::json(nullptr);
}

}  // namespace

std::vector<VoxelCoord> solid_voxels(const Scene& scene, const GridConfig& grid) {
  std::set<VoxelCoord> out;
  for (const Box& b : scene.boxes) {
    const double c = std::abs(std::cos(b.yaw)), s = std::abs(std::sin(b.yaw));
    const Vec3 half(0.5 * (c * b.size.x() + s * b.size.y()), 0.5 * (s * b.size.x() + c * b.size.y()),
                    0.5 * b.size.z());
    std::array<int, 3> lo{}, hi{};
    for (int k = 0; k < 3; ++k) {
      lo[k] = std::max(0, static_cast<int>(std::floor((b.center[k] - half[k] - grid.origin[k]) /
                                                      grid.voxel_size[k])));
      hi[k] = std::min(grid.extent[k] - 1,
                       static_cast<int>(std::floor((b.center[k] + half[k] - grid.origin[k]) /
                                                   grid.voxel_size[k])));
    }
    for (int x = lo[0]; x <= hi[0]; ++x) {
      for (int y = lo[1]; y <= hi[1]; ++y) {
        for (int z = lo[2]; z <= hi[2]; ++z) {
          const Vec3 cell_lo = grid.origin + grid.voxel_size.cwiseProduct(Vec3(x, y, z));
          const Vec3 cell_hi = cell_lo + grid.voxel_size;
          if (box_overlaps_aabb(b, cell_lo, cell_hi)) out.insert({x, y, z});
        }
      }
    }
  }
  return {out.begin(), out.end()};
}

ReconMetrics evaluate_reconstruction(const std::vector<VoxelCoord>& recon, const Scene& scene,
                                     const LabelPyramid& pyramid, const GridConfig& grid) {
  const std::set<VoxelCoord> r(recon.begin(), recon.end());
  ReconMetrics m;
  m.n_recon = r.size();
  const LabelMap& labels = pyramid.Level(Stride::Unit());
  for (const auto& [key, label] : labels) {
    const bool hit = r.count(VoxelCoord::FromKey(key)) > 0;
    if (label.category == VoxelCategory::kOccupied) {
      ++m.n_occupied;
      m.n_occupied_hit += hit;
    } else if (label.category == VoxelCategory::kEmpty) {
      ++m.n_empty;
      m.n_empty_hit += hit;
    }
  }
  for (const VoxelCoord& v : solid_voxels(scene, grid)) {
    const auto it = labels.find(v.Key());
    if (it != labels.end() && it->second.category != VoxelCategory::kUnknown) continue;
    ++m.n_unknown_solid;
    m.n_unknown_solid_hit += r.count(v);
  }
  FillRates(m);
  return m;
}

ReconMetrics aggregate(const std::vector<ReconMetrics>& frames) {
  ReconMetrics m;
  for (const ReconMetrics& f : frames) {
    m.n_recon += f.n_recon;
    m.n_occupied += f.n_occupied;
    m.n_occupied_hit += f.n_occupied_hit;
    m.n_empty += f.n_empty;
    m.n_empty_hit += f.n_empty_hit;
    m.n_unknown_solid += f.n_unknown_solid;
    m.n_unknown_solid_hit += f.n_unknown_solid_hit;
  }
  FillRates(m);
  return m;
}

nlohmann::json to_json(const ReconMetrics& m) {
  return {
      {"occupied_recall", Rate(m.occupied_recall)},
      {"empty_false_positive_rate", Rate(m.empty_false_positive_rate)},
      {"unknown_completion_recall", Rate(m.unknown_completion_recall)},
      {"counts",
       {{"reconstructed", m.n_recon},
        {"occupied", m.n_occupied},
        {"occupied_reconstructed", m.n_occupied_hit},
        {"empty", m.n_empty},
        {"empty_reconstructed", m.n_empty_hit},
        {"unknown_solid", m.n_unknown_solid},
        {"unknown_solid_reconstructed", m.n_unknown_solid_hit}}},
  };
}

double masking_stats(const std::vector<RangeImage>& frames, const GridConfig& grid,
                     const MaskingConfig& config, int n_trials, uint64_t seed) {
  if (frames.empty()) throw ConfigError("masking_stats needs at least one frame");
  if (n_trials < 1000) throw ConfigError("masking_stats needs at least 1000 trials");
  std::mt19937_64 rng(seed);
  double sum = 0.0;
  int counted = 0;
  for (int t = 0; t < n_trials; ++t) {
    const RangeImage& img = frames[static_cast<size_t>(t) % frames.size()];
    const size_t original = CountInGrid(to_points(img), grid);
    if (original == 0) continue;
    RangeImage masked = img;
    if (config.spherical) {
      const auto [mr, mc] = sample_mask_params(rng);
      masked = spherical_mask(img, mr, mc);
    }
    const LidarFrame pts = to_points(masked);
    const Voxelization vox = voxelize(pts, grid);
    std::set<VoxelCoord> kept;
    for (size_t i : voxel_mask_indices(vox.coords.size(), config.keep_fraction, rng)) {
      kept.insert(vox.coords[i]);
    }
    size_t survivors = 0;
    for (const LidarPoint& p : pts.points) {
      const auto v = world_to_voxel(p.position, grid);
      if (v && kept.count(*v)) ++survivors;
    }
    sum += static_cast<double>(survivors) / static_cast<double>(original);
    ++counted;
  }
  return counted == 0 ? 0.0 : sum / counted;
}

}  // namespace voxmae

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

#ifndef VOXMAE_SUPERVISION_H_
#define VOXMAE_SUPERVISION_H_

#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>
#include <span>
#include <vector>

#include <absl/container/flat_hash_map.h>

#include "voxmae/geometry.h"
#include "voxmae/lidar.h"

namespace voxmae {

// Numeric values double as merge precedence (max wins) and as the on-disk code.
enum class VoxelCategory : uint8_t { kUnknown = 0, kEmpty = 1, kOccupied = 2 };

const char* ToString(VoxelCategory c);

struct VoxelLabel {
  VoxelCategory category = VoxelCategory::kUnknown;
  double weight = 0.0;
  // Distance from the voxel center to the nearest traversing beam; only
  // meaningful for kEmpty.
  double min_dist = 0.0;

  double target() const { return category == VoxelCategory::kOccupied ? 1.0 : 0.0; }
  static VoxelLabel Occupied() { return {VoxelCategory::kOccupied, 1.0, 0.0}; }
  static VoxelLabel Unknown() { return {}; }
  static VoxelLabel Empty(double min_dist, double diagonal);
};

// Weight of an empty voxel whose center lies `dist` from the nearest beam,
// for a voxel diagonal `diagonal`: 1 - 2 dist / diagonal, floored at 0.
double empty_weight(double dist, double diagonal);

// Keyed by VoxelCoord::Key(). Absent coordinates are Unknown.
using LabelMap = absl::flat_hash_map<uint64_t, VoxelLabel>;

struct CategorizeOptions {
  int num_threads = 1;
};

// Stride-1 occupancy categorization of the original (unmasked) frame.
LabelMap categorize(const LidarFrame& frame, const GridConfig& grid,
                    const CategorizeOptions& options = {});

class LabelPyramid {
 public:
  LabelPyramid() = default;
  LabelPyramid(std::vector<Stride> strides, std::vector<LabelMap> levels);

  // Strides ordered finest first.
  const std::vector<Stride>& strides() const { return strides_; }
  bool HasStride(const Stride& s) const;
  const LabelMap& Level(const Stride& s) const;
  VoxelLabel Get(const Stride& s, const VoxelCoord& v) const;

 private:
  std::vector<Stride> strides_;
  std::vector<LabelMap> levels_;
};

// Propagates stride-1 labels to every stride in `strides` (any order; each
// must be a power-of-two multiple of the next finer one). Stride (1,1,1) may
// be listed and then holds `base` itself.
LabelPyramid build_pyramid(const LabelMap& base, const GridConfig& grid,
                           std::vector<Stride> strides);

// Unknown (weight 0) for coordinates not in the map. Throws
// std::invalid_argument when `stride` is not part of the pyramid.
std::vector<VoxelLabel> lookup(const LabelPyramid& pyramid, const Stride& stride,
                               std::span<const VoxelCoord> coords);

struct CategoryCounts {
  size_t occupied = 0;
  size_t empty = 0;
  size_t unknown = 0;
};
CategoryCounts count_categories(const LabelMap& labels);

// "VLBL" little-endian label pyramid file.
inline constexpr uint16_t kLabelFileVersion = 1;
void write_label_pyramid(std::ostream& out, const LabelPyramid& pyramid);
LabelPyramid read_label_pyramid(std::istream& in);
void save_label_pyramid(const std::filesystem::path& path, const LabelPyramid& pyramid);
LabelPyramid load_label_pyramid(const std::filesystem::path& path);

}  // namespace voxmae

#endif  // VOXMAE_SUPERVISION_H_

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

#ifndef VOXMAE_GEOMETRY_H_
#define VOXMAE_GEOMETRY_H_

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace voxmae {

using Vec3 = Eigen::Vector3d;

// Raised for invalid configuration (bad strides, grid sizes, file schemas
// that parse but disagree with the model). The CLI maps it to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Power-of-two voxel stride per axis.
struct Stride {
  int x = 1;
  int y = 1;
  int z = 1;

  static constexpr Stride Unit() { return {1, 1, 1}; }
  int operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
  int volume() const { return x * y * z; }
  Stride operator*(const Stride& o) const { return {x * o.x, y * o.y, z * o.z}; }
  // Componentwise division; throws ConfigError unless exact.
  Stride operator/(const Stride& o) const;
  auto operator<=>(const Stride&) const = default;
  std::string ToString() const;
};

bool IsPowerOfTwo(int v);
void ValidateStride(const Stride& s);

struct VoxelCoord {
  int32_t ix = 0;
  int32_t iy = 0;
  int32_t iz = 0;

  int32_t operator[](int axis) const { return axis == 0 ? ix : (axis == 1 ? iy : iz); }
  int32_t& operator[](int axis) { return axis == 0 ? ix : (axis == 1 ? iy : iz); }
  auto operator<=>(const VoxelCoord&) const = default;

  // 21 bits per axis; ordering of keys equals lexicographic (ix, iy, iz).
  uint64_t Key() const {
    return (static_cast<uint64_t>(ix) << 42) | (static_cast<uint64_t>(iy) << 21) |
           static_cast<uint64_t>(iz);
  }
  static VoxelCoord FromKey(uint64_t key) {
    constexpr uint64_t kMask = (uint64_t{1} << 21) - 1;
    return {static_cast<int32_t>(key >> 42), static_cast<int32_t>((key >> 21) & kMask),
            static_cast<int32_t>(key & kMask)};
  }
};

struct GridConfig {
  Vec3 origin = Vec3::Zero();
  Vec3 voxel_size = Vec3::Ones();
  std::array<int, 3> extent = {1, 1, 1};

  // Throws ConfigError when an invariant is violated.
  void Validate() const;
  // Number of cells along `axis` at `stride` (ceiling division).
  int ExtentAt(int axis, const Stride& stride) const;
  std::array<int, 3> ExtentAt(const Stride& stride) const;
  bool Contains(const VoxelCoord& v, const Stride& stride) const;
  Vec3 Upper() const;
  // Length of the voxel diagonal at `stride`.
  double Diagonal(const Stride& stride) const;
};

struct Ray {
  Vec3 origin;
  Vec3 endpoint;
  bool hit = true;
};

struct TraversalStep {
  VoxelCoord voxel;
  double entry_t;
  double exit_t;
};

// Parameter tolerance used at DDA boundary crossings (normalized ray units).
inline constexpr double kTraversalEpsilon = 1e-9;

std::optional<VoxelCoord> world_to_voxel(const Vec3& p, const GridConfig& grid,
                                         const Stride& stride = Stride::Unit());

Vec3 voxel_center(const VoxelCoord& v, const GridConfig& grid,
                  const Stride& stride = Stride::Unit());

// Clips the parametric segment origin + t (endpoint - origin), t in [0, 1],
// against the grid bounds. Returns the surviving [t0, t1] or nullopt.
std::optional<std::pair<double, double>> clip_to_grid(const Ray& ray, const GridConfig& grid);

// Stride-1 voxels whose interior meets the open segment, in order of entry.
// The voxel holding the endpoint is part of the result when it lies in the grid.
std::vector<TraversalStep> traverse(const Ray& ray, const GridConfig& grid);

// Distance from p to the closed segment [a, b].
double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b);

}  // namespace voxmae

#endif  // VOXMAE_GEOMETRY_H_

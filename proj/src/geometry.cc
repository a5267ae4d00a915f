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

#include "voxmae/geometry.h"

#include <algorithm>
#include <cmath>
#include <limits>

namespace voxmae {

Stride Stride::operator/(const Stride& o) const {
  if (o.x <= 0 || o.y <= 0 || o.z <= 0 || x % o.x != 0 || y % o.y != 0 || z % o.z != 0) {
    throw ConfigError("stride " + ToString() + " is not divisible by " + o.ToString());
  }
  return {x / o.x, y / o.y, z / o.z};
}

std::string Stride::ToString() const {
  return std::to_string(x) + "x" + std::to_string(y) + "x" + std::to_string(z);
}

bool IsPowerOfTwo(int v) { return v >= 1 && (v & (v - 1)) == 0; }

void ValidateStride(const Stride& s) {
  if (!IsPowerOfTwo(s.x) || !IsPowerOfTwo(s.y) || !IsPowerOfTwo(s.z)) {
    throw ConfigError("stride " + s.ToString() + " must be powers of two");
  }
}

void GridConfig::Validate() const {
  for (int a = 0; a < 3; ++a) {
    if (!(voxel_size[a] > 0.0) || !std::isfinite(voxel_size[a])) {
      throw ConfigError("grid.voxel_size must be positive");
    }
    if (extent[a] < 1) throw ConfigError("grid.extent must be >= 1");
    if (extent[a] >= (1 << 21)) throw ConfigError("grid.extent exceeds 2^21 cells per axis");
    if (!std::isfinite(origin[a])) throw ConfigError("grid.origin must be finite");
  }
}

int GridConfig::ExtentAt(int axis, const Stride& stride) const {
  const int s = stride[axis];
  return (extent[axis] + s - 1) / s;
}

std::array<int, 3> GridConfig::ExtentAt(const Stride& stride) const {
  return {ExtentAt(0, stride), ExtentAt(1, stride), ExtentAt(2, stride)};
}

bool GridConfig::Contains(const VoxelCoord& v, const Stride& stride) const {
  for (int a = 0; a < 3; ++a) {
    if (v[a] < 0 || v[a] >= ExtentAt(a, stride)) return false;
  }
  return true;
}

Vec3 GridConfig::Upper() const {
  return origin + voxel_size.cwiseProduct(Vec3(extent[0], extent[1], extent[2]));
}

double GridConfig::Diagonal(const Stride& stride) const {
  return voxel_size.cwiseProduct(Vec3(stride.x, stride.y, stride.z)).norm();
}

std::optional<VoxelCoord> world_to_voxel(const Vec3& p, const GridConfig& grid,
                                         const Stride& stride) {
  VoxelCoord v;
  for (int a = 0; a < 3; ++a) {
    const double cell = grid.voxel_size[a] * stride[a];
    const double idx = std::floor((p[a] - grid.origin[a]) / cell);
    if (!(idx >= 0.0) || idx >= grid.ExtentAt(a, stride)) return std::nullopt;
    v[a] = static_cast<int32_t>(idx);
  }
  return v;
}

Vec3 voxel_center(const VoxelCoord& v, const GridConfig& grid, const Stride& stride) {
  Vec3 c;
  for (int a = 0; a < 3; ++a) {
    c[a] = grid.origin[a] + grid.voxel_size[a] * stride[a] * (v[a] + 0.5);
  }
  return c;
}

std::optional<std::pair<double, double>> clip_to_grid(const Ray& ray, const GridConfig& grid) {
  double t0 = 0.0;
  double t1 = 1.0;
  const Vec3 lo = grid.origin;
  const Vec3 hi = grid.Upper();
  const Vec3 d = ray.endpoint - ray.origin;
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (ray.origin[a] < lo[a] || ray.origin[a] > hi[a]) return std::nullopt;
      continue;
    }
    double ta = (lo[a] - ray.origin[a]) / d[a];
    double tb = (hi[a] - ray.origin[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return std::nullopt;
  }
  return std::make_pair(t0, t1);
}

std::vector<TraversalStep> traverse(const Ray& ray, const GridConfig& grid) {
  std::vector<TraversalStep> out;
  const auto clipped = clip_to_grid(ray, grid);
  if (!clipped) return out;
  const auto [t0, t1] = *clipped;
  if (t1 - t0 <= kTraversalEpsilon) return out;

  // Work in grid units so that cell boundaries sit on integers.
  const Vec3 o = (ray.origin - grid.origin).cwiseQuotient(grid.voxel_size);
  const Vec3 d = (ray.endpoint - ray.origin).cwiseQuotient(grid.voxel_size);
  constexpr double kInf = std::numeric_limits<double>::infinity();

  std::array<int, 3> cell{};
  std::array<int, 3> step{};
  std::array<double, 3> t_max{};
  std::array<double, 3> t_delta{};
  for (int a = 0; a < 3; ++a) {
    const double x0 = o[a] + t0 * d[a];
    if (d[a] > 0.0) {
      cell[a] = static_cast<int>(std::floor(x0));
      step[a] = 1;
    } else if (d[a] < 0.0) {
      // The segment leaves x0 downwards, so its interior lies in the lower cell.
      cell[a] = static_cast<int>(std::ceil(x0)) - 1;
      step[a] = -1;
    } else {
      if (x0 < 0.0 || x0 >= grid.extent[a]) return out;
      cell[a] = static_cast<int>(std::floor(x0));
      step[a] = 0;
    }
    cell[a] = std::clamp(cell[a], 0, grid.extent[a] - 1);
    if (step[a] > 0) {
      t_max[a] = (cell[a] + 1 - o[a]) / d[a];
      t_delta[a] = 1.0 / d[a];
    } else if (step[a] < 0) {
      t_max[a] = (cell[a] - o[a]) / d[a];
      t_delta[a] = -1.0 / d[a];
    } else {
      t_max[a] = kInf;
      t_delta[a] = kInf;
    }
  }

  double entry = t0;
  while (true) {
    const double exit = std::min({t_max[0], t_max[1], t_max[2], t1});
    if (exit - entry > kTraversalEpsilon) {
      out.push_back({VoxelCoord{cell[0], cell[1], cell[2]}, entry, exit});
    }
    if (exit >= t1 - kTraversalEpsilon) break;
    bool inside = true;
    for (int a = 0; a < 3; ++a) {
      if (t_max[a] <= exit + kTraversalEpsilon) {
        cell[a] += step[a];
        t_max[a] += t_delta[a];
        if (cell[a] < 0 || cell[a] >= grid.extent[a]) inside = false;
      }
    }
    if (!inside) break;
    entry = std::max(entry, exit);
  }
  return out;
}

double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 == 0.0) return (p - a).norm();
  const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

}  // namespace voxmae

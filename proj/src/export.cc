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

#include "voxmae/export.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "fmt/format.h"

namespace voxmae {

std::array<uint8_t, 3> z_colormap(double t) {
  t = std::clamp(t, 0.0, 1.0);
  auto channel = [t](double center) {
    const double v = std::clamp(1.5 - 4.0 * std::abs(t - center), 0.0, 1.0);
    return static_cast<uint8_t>(std::lround(255.0 * v));
  };
  return {channel(0.75), channel(0.5), channel(0.25)};
}

void write_ply(std::ostream& out, const std::vector<VoxelCoord>& voxels, const GridConfig& grid) {
  std::vector<Vec3> centers;
  centers.reserve(voxels.size());
  for (const VoxelCoord& v : voxels) centers.push_back(voxel_center(v, grid));
  double zmin = 0.0, zmax = 0.0;
  if (!centers.empty()) {
    const auto [lo, hi] = std::minmax_element(
        centers.begin(), centers.end(), [](const Vec3& a, const Vec3& b) { return a.z() < b.z(); });
    zmin = lo->z();
    zmax = hi->z();
  }
  out << "ply\nformat ascii 1.0\ncomment voxmae reconstruction\n"
      << "element vertex " << centers.size() << "\n"
      << "property float x\nproperty float y\nproperty float z\n"
      << "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  for (const Vec3& c : centers) {
    const double t = zmax > zmin ? (c.z() - zmin) / (zmax - zmin) : 0.5;
    const auto rgb = z_colormap(t);
    out << fmt::format("{} {} {} {} {} {}\n", static_cast<float>(c.x()), static_cast<float>(c.y()),
                       static_cast<float>(c.z()), rgb[0], rgb[1], rgb[2]);
  }
}

void save_ply(const std::filesystem::path& path, const std::vector<VoxelCoord>& voxels,
              const GridConfig& grid) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  write_ply(out, voxels, grid);
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

}  // namespace voxmae

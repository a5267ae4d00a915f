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

#ifndef VOXMAE_EXPORT_H_
#define VOXMAE_EXPORT_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <ostream>
#include <vector>

#include "voxmae/geometry.h"

namespace voxmae {

// Jet-style colormap for t in [0, 1] (clamped): blue, cyan, yellow, red.
std::array<uint8_t, 3> z_colormap(double t);

// ASCII PLY of stride-1 voxel centers with x,y,z,red,green,blue per vertex.
// Colors span the z range of the exported voxels.
void write_ply(std::ostream& out, const std::vector<VoxelCoord>& voxels, const GridConfig& grid);
void save_ply(const std::filesystem::path& path, const std::vector<VoxelCoord>& voxels,
              const GridConfig& grid);

}  // namespace voxmae

#endif  // VOXMAE_EXPORT_H_

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

#ifndef VOXMAE_CONFIG_H_
#define VOXMAE_CONFIG_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "voxmae/geometry.h"
#include "voxmae/lidar.h"
#include "voxmae/training.h"

namespace voxmae {

// All parsers throw ConfigError naming the offending key; unknown keys are
// rejected.

// A scene file either lists fixed boxes or, with a [random] table, describes
// a generator that draws a new scene per frame.
struct SceneSpec {
  Scene fixed;
  std::optional<RandomSceneOptions> random;

  Scene Draw(std::mt19937_64& rng) const;
};

SceneSpec parse_scene(const std::string& toml_text);
SceneSpec load_scene(const std::filesystem::path& path);
// Serializes a concrete scene (ground_z and [[box]] tables).
std::string scene_to_toml(const Scene& scene);
void save_scene(const std::filesystem::path& path, const Scene& scene);

// [sensor] table: position, rows, min_inclination, max_inclination (or an
// explicit inclinations list), cols, azimuth_start, fov, max_range,
// range_noise_sigma.
SensorModel parse_sensor(const std::string& toml_text);
SensorModel load_sensor(const std::filesystem::path& path);

struct RunConfig {
  // Directory of simulated frames (with manifest.json), resolved against the
  // config file's directory.
  std::optional<std::filesystem::path> frames_dir;
  TrainConfig train;
  // Write a checkpoint every this many steps (0: only at the end).
  uint64_t checkpoint_every = 0;
  // Voxel keep fraction used by reconstruct and eval.
  double eval_keep_fraction = 1.0;
};

RunConfig parse_run_config(const std::string& toml_text,
                           const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

// Value of VOXMAE_SEED, if set; throws ConfigError when it is not an
// unsigned integer.
std::optional<uint64_t> seed_from_env();

}  // namespace voxmae

#endif  // VOXMAE_CONFIG_H_

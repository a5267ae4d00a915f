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

#ifndef VOXMAE_LIDAR_H_
#define VOXMAE_LIDAR_H_

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "voxmae/geometry.h"

namespace voxmae {

struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 Apply(const Vec3& p) const { return rotation * p + translation; }
};

// Spinning LiDAR: one row per beam inclination, one column per azimuth step.
struct SensorModel {
  Pose pose;
  std::vector<double> inclinations;
  double azimuth_start = 0.0;
  double azimuth_step = 0.0;
  int n_cols = 0;
  double max_range = 0.0;
  double range_noise_sigma = 0.0;

  void Validate() const;
  int rows() const { return static_cast<int>(inclinations.size()); }
  // Unit beam direction in the world frame.
  Vec3 Direction(int row, int col) const;

  // `rows` inclinations evenly spaced in [min_inclination, max_inclination] and
  // `cols` azimuths covering [azimuth_start, azimuth_start + fov).
  static SensorModel Uniform(const Vec3& position, int rows, double min_inclination,
                             double max_inclination, int cols, double azimuth_start,
                             double fov, double max_range);
};

struct RangeImage {
  static constexpr double kNoReturn = -1.0;

  SensorModel sensor;
  std::vector<double> ranges;  // row-major, rows x sensor.n_cols

  RangeImage() = default;
  explicit RangeImage(SensorModel s)
      : sensor(std::move(s)),
        ranges(static_cast<size_t>(sensor.rows()) * sensor.n_cols, kNoReturn) {}

  int rows() const { return sensor.rows(); }
  int cols() const { return sensor.n_cols; }
  double& at(int r, int c) { return ranges[static_cast<size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return ranges[static_cast<size_t>(r) * cols() + c]; }
  bool IsReturn(int r, int c) const { return at(r, c) >= 0.0; }
  size_t CountReturns() const;
};

// Box rotated by `yaw` about the vertical axis through its center.
struct Box {
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Ones();
  double yaw = 0.0;
};

struct Scene {
  std::vector<Box> boxes;
  std::optional<double> ground_z;

  void Validate() const;
};

struct LidarPoint {
  Vec3 position;
  uint8_t sensor_id = 0;
};

struct LidarFrame {
  std::vector<LidarPoint> points;
  std::map<uint8_t, Vec3> sensor_origins;

  void Validate() const;
  // Concatenates frames; sensor ids must not collide unless their origins agree.
  static LidarFrame Merge(const std::vector<LidarFrame>& frames);
};

// Ray/box entry distance along a unit direction; nullopt when the ray misses
// or the box lies behind the origin.
std::optional<double> intersect_box(const Vec3& origin, const Vec3& dir, const Box& box);
std::optional<double> intersect_ground(const Vec3& origin, const Vec3& dir, double ground_z);

// True when the open interior of `box` overlaps the open interior of the
// axis-aligned cell [lo, hi].
bool box_overlaps_aabb(const Box& box, const Vec3& lo, const Vec3& hi);

RangeImage simulate(const Scene& scene, const SensorModel& sensor, uint64_t seed);

LidarFrame to_points(const RangeImage& img, uint8_t sensor_id = 0);

// Drops every pixel whose row is not a multiple of m_r or whose column is not
// a multiple of m_c.
RangeImage spherical_mask(const RangeImage& img, int m_r, int m_c);

std::pair<int, int> sample_mask_params(std::mt19937_64& rng);

struct RandomSceneOptions {
  int min_boxes = 3;
  int max_boxes = 6;
  Vec3 region_lo = Vec3(-6.0, -6.0, 0.0);
  Vec3 region_hi = Vec3(6.0, 6.0, 0.0);
  Vec3 min_size = Vec3(0.6, 0.6, 0.6);
  Vec3 max_size = Vec3(2.0, 2.0, 1.8);
  double max_yaw = 0.0;
  double ground_z = 0.0;
  // Boxes never cover this point in xy (keeps the sensor outside geometry).
  Vec3 keep_clear = Vec3::Zero();
  double keep_clear_radius = 1.0;
  // When set, box faces are snapped onto this grid's voxel boundaries (yaw 0).
  std::optional<GridConfig> align_to;
};

Scene random_scene(const RandomSceneOptions& options, std::mt19937_64& rng);

}  // namespace voxmae

#endif  // VOXMAE_LIDAR_H_

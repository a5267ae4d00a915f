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

#include "voxmae/lidar.h"

#include <algorithm>
#include <cmath>
#include <limits>

namespace voxmae {
namespace {

constexpr double kPi = 3.14159265358979323846;

// Interval overlap of the projections of two convex 2D polygons onto `axis`.
bool ProjectionsOverlap(const std::array<Eigen::Vector2d, 4>& a,
                        const std::array<Eigen::Vector2d, 4>& b, const Eigen::Vector2d& axis) {
  double a_lo = std::numeric_limits<double>::infinity(), a_hi = -a_lo;
  double b_lo = a_lo, b_hi = -a_lo;
  for (const auto& p : a) {
    const double v = p.dot(axis);
    a_lo = std::min(a_lo, v);
    a_hi = std::max(a_hi, v);
  }
  for (const auto& p : b) {
    const double v = p.dot(axis);
    b_lo = std::min(b_lo, v);
    b_hi = std::max(b_hi, v);
  }
  return a_lo < b_hi && b_lo < a_hi;
}

}  // namespace

void SensorModel::Validate() const {
  if (inclinations.empty()) throw ConfigError("sensor.inclinations must not be empty");
  if (n_cols < 1) throw ConfigError("sensor.n_cols must be >= 1");
  if (!(azimuth_step > 0.0)) throw ConfigError("sensor.azimuth_step must be > 0");
  if (!(max_range > 0.0)) throw ConfigError("sensor.max_range must be > 0");
  if (!(range_noise_sigma >= 0.0)) throw ConfigError("sensor.noise_sigma must be >= 0");
  if (inclinations.size() > 1) {
    const bool increasing = inclinations[1] > inclinations[0];
    for (size_t i = 1; i < inclinations.size(); ++i) {
      if ((inclinations[i] > inclinations[i - 1]) != increasing ||
          inclinations[i] == inclinations[i - 1]) {
        throw ConfigError("sensor.inclinations must be strictly monotonic");
      }
    }
  }
}

Vec3 SensorModel::Direction(int row, int col) const {
  const double incl = inclinations[row];
  const double azim = azimuth_start + col * azimuth_step;
  const Vec3 local(std::cos(incl) * std::cos(azim), std::cos(incl) * std::sin(azim),
                   std::sin(incl));
  return pose.rotation * local;
}

SensorModel SensorModel::Uniform(const Vec3& position, int rows, double min_inclination,
                                 double max_inclination, int cols, double azimuth_start,
                                 double fov, double max_range) {
  SensorModel s;
  s.pose.translation = position;
  s.inclinations.resize(rows);
  for (int r = 0; r < rows; ++r) {
    s.inclinations[r] =
        rows == 1 ? min_inclination
                  : min_inclination + (max_inclination - min_inclination) * r / (rows - 1);
  }
  s.n_cols = cols;
  s.azimuth_start = azimuth_start;
  s.azimuth_step = fov / cols;
  s.max_range = max_range;
  return s;
}

size_t RangeImage::CountReturns() const {
  return static_cast<size_t>(
      std::count_if(ranges.begin(), ranges.end(), [](double r) { return r >= 0.0; }));
}

void Scene::Validate() const {
  for (const Box& b : boxes) {
    if (!(b.size.minCoeff() > 0.0)) throw ConfigError("box.size components must be > 0");
  }
}

void LidarFrame::Validate() const {
  for (const LidarPoint& p : points) {
    if (!sensor_origins.count(p.sensor_id)) {
      throw ConfigError("point references sensor id " + std::to_string(p.sensor_id) +
                        " without an origin");
    }
  }
}

LidarFrame LidarFrame::Merge(const std::vector<LidarFrame>& frames) {
  LidarFrame out;
  for (const LidarFrame& f : frames) {
    for (const auto& [id, origin] : f.sensor_origins) {
      auto [it, inserted] = out.sensor_origins.emplace(id, origin);
      if (!inserted && it->second != origin) {
        throw ConfigError("sensor id " + std::to_string(id) + " used with two origins");
      }
    }
    out.points.insert(out.points.end(), f.points.begin(), f.points.end());
  }
  return out;
}

std::optional<double> intersect_box(const Vec3& origin, const Vec3& dir, const Box& box) {
  // Slab test in the box frame.
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  const Vec3 rel = origin - box.center;
  const Vec3 o(c * rel.x() + s * rel.y(), -s * rel.x() + c * rel.y(), rel.z());
  const Vec3 d(c * dir.x() + s * dir.y(), -s * dir.x() + c * dir.y(), dir.z());
  const Vec3 half = 0.5 * box.size;
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (o[a] <= -half[a] || o[a] >= half[a]) return std::nullopt;
      continue;
    }
    double t1 = (-half[a] - o[a]) / d[a];
    double t2 = (half[a] - o[a]) / d[a];
    if (t1 > t2) std::swap(t1, t2);
    t_near = std::max(t_near, t1);
    t_far = std::min(t_far, t2);
  }
  if (t_near > t_far || t_near <= 0.0) return std::nullopt;
  return t_near;
}

std::optional<double> intersect_ground(const Vec3& origin, const Vec3& dir, double ground_z) {
  if (dir.z() >= 0.0 || origin.z() <= ground_z) return std::nullopt;
  return (ground_z - origin.z()) / dir.z();
}

bool box_overlaps_aabb(const Box& box, const Vec3& lo, const Vec3& hi) {
  const double z_lo = box.center.z() - 0.5 * box.size.z();
  const double z_hi = box.center.z() + 0.5 * box.size.z();
  if (!(z_lo < hi.z() && lo.z() < z_hi)) return false;
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  const Eigen::Vector2d ux(c, s), uy(-s, c);
  const Eigen::Vector2d ctr(box.center.x(), box.center.y());
  const double hx = 0.5 * box.size.x(), hy = 0.5 * box.size.y();
  const std::array<Eigen::Vector2d, 4> rect = {ctr + hx * ux + hy * uy, ctr - hx * ux + hy * uy,
                                               ctr - hx * ux - hy * uy, ctr + hx * ux - hy * uy};
  const std::array<Eigen::Vector2d, 4> cell = {
      Eigen::Vector2d(lo.x(), lo.y()), Eigen::Vector2d(hi.x(), lo.y()),
      Eigen::Vector2d(hi.x(), hi.y()), Eigen::Vector2d(lo.x(), hi.y())};
  return ProjectionsOverlap(rect, cell, Eigen::Vector2d::UnitX()) &&
         ProjectionsOverlap(rect, cell, Eigen::Vector2d::UnitY()) &&
         ProjectionsOverlap(rect, cell, ux) && ProjectionsOverlap(rect, cell, uy);
}

RangeImage simulate(const Scene& scene, const SensorModel& sensor, uint64_t seed) {
  sensor.Validate();
  RangeImage img(sensor);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const Vec3 origin = sensor.pose.translation;
  for (int r = 0; r < img.rows(); ++r) {
    for (int c = 0; c < img.cols(); ++c) {
      const Vec3 dir = sensor.Direction(r, c);
      double best = std::numeric_limits<double>::infinity();
      for (const Box& box : scene.boxes) {
        if (auto t = intersect_box(origin, dir, box)) best = std::min(best, *t);
      }
      if (scene.ground_z) {
        if (auto t = intersect_ground(origin, dir, *scene.ground_z)) best = std::min(best, *t);
      }
      if (best <= sensor.max_range) {
        if (sensor.range_noise_sigma > 0.0) {
          best = std::clamp(best + sensor.range_noise_sigma * noise(rng), 1e-6, sensor.max_range);
        }
        img.at(r, c) = best;
      }
    }
  }
  return img;
}

LidarFrame to_points(const RangeImage& img, uint8_t sensor_id) {
  LidarFrame frame;
  const Vec3 origin = img.sensor.pose.translation;
  frame.sensor_origins[sensor_id] = origin;
  for (int r = 0; r < img.rows(); ++r) {
    for (int c = 0; c < img.cols(); ++c) {
      if (!img.IsReturn(r, c)) continue;
      frame.points.push_back({origin + img.at(r, c) * img.sensor.Direction(r, c), sensor_id});
    }
  }
  return frame;
}

RangeImage spherical_mask(const RangeImage& img, int m_r, int m_c) {
  if (m_r < 1 || m_r > 4 || m_c < 1 || m_c > 4) {
    throw ConfigError("spherical mask moduli must lie in [1, 4]");
  }
  RangeImage out = img;
  for (int r = 0; r < out.rows(); ++r) {
    for (int c = 0; c < out.cols(); ++c) {
      if (r % m_r != 0 || c % m_c != 0) out.at(r, c) = RangeImage::kNoReturn;
    }
  }
  return out;
}

std::pair<int, int> sample_mask_params(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> dist(1, 4);
  const int m_r = dist(rng);
  const int m_c = dist(rng);
  return {m_r, m_c};
}

Scene random_scene(const RandomSceneOptions& options, std::mt19937_64& rng) {
  Scene scene;
  scene.ground_z = options.ground_z;
  std::uniform_int_distribution<int> count(options.min_boxes, options.max_boxes);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int n = count(rng);
  int attempts = 0;
  while (static_cast<int>(scene.boxes.size()) < n && attempts++ < 100 * n) {
    Box b;
    for (int a = 0; a < 3; ++a) {
      b.size[a] = options.min_size[a] + (options.max_size[a] - options.min_size[a]) * unit(rng);
    }
    b.center.x() =
        options.region_lo.x() + (options.region_hi.x() - options.region_lo.x()) * unit(rng);
    b.center.y() =
        options.region_lo.y() + (options.region_hi.y() - options.region_lo.y()) * unit(rng);
    b.center.z() = options.ground_z + 0.5 * b.size.z();
    b.yaw = options.max_yaw * (2.0 * unit(rng) - 1.0);
    if (options.align_to) {
      const GridConfig& g = *options.align_to;
      Vec3 lo = b.center - 0.5 * b.size;
      Vec3 hi = b.center + 0.5 * b.size;
      for (int a = 0; a < 3; ++a) {
        const double vs = g.voxel_size[a];
        lo[a] = g.origin[a] + std::round((lo[a] - g.origin[a]) / vs) * vs;
        hi[a] = g.origin[a] + std::round((hi[a] - g.origin[a]) / vs) * vs;
        if (hi[a] <= lo[a]) hi[a] = lo[a] + vs;
      }
      b.center = 0.5 * (lo + hi);
      b.size = hi - lo;
      b.yaw = 0.0;
    }
    // Reject boxes that would swallow the sensor footprint.
    const double r = options.keep_clear_radius + 0.5 * std::hypot(b.size.x(), b.size.y());
    if (std::hypot(b.center.x() - options.keep_clear.x(), b.center.y() - options.keep_clear.y()) <
        r) {
      continue;
    }
    scene.boxes.push_back(b);
  }
  return scene;
}

}  // namespace voxmae

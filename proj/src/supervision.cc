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

#include "voxmae/supervision.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <thread>

#include "voxmae/binary_io.h"

namespace voxmae {
namespace {

using DistanceMap = absl::flat_hash_map<uint64_t, double>;

void TraceBeams(const LidarFrame& frame, const GridConfig& grid,
                const absl::flat_hash_map<uint64_t, bool>& hits, size_t begin, size_t end,
                DistanceMap& out) {
  for (size_t i = begin; i < end; ++i) {
    const LidarPoint& p = frame.points[i];
    const Vec3& origin = frame.sensor_origins.at(p.sensor_id);
    if (origin == p.position) continue;
    for (const TraversalStep& step : traverse({origin, p.position, true}, grid)) {
      const uint64_t key = step.voxel.Key();
      if (hits.contains(key)) continue;
      const double d = point_segment_distance(voxel_center(step.voxel, grid), origin, p.position);
      auto [it, inserted] = out.try_emplace(key, d);
      if (!inserted) it->second = std::min(it->second, d);
    }
  }
}

std::vector<uint64_t> SortedKeys(const LabelMap& m) {
  std::vector<uint64_t> keys;
  keys.reserve(m.size());
  for (const auto& [k, v] : m) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  return keys;
}

}  // namespace

const char* ToString(VoxelCategory c) {
  switch (c) {
    case VoxelCategory::kOccupied:
      return "occupied";
    case VoxelCategory::kEmpty:
      return "empty";
    case VoxelCategory::kUnknown:
      return "unknown";
  }
  return "?";
}

double empty_weight(double dist, double diagonal) {
  return std::clamp(1.0 - 2.0 * dist / diagonal, 0.0, 1.0);
}

VoxelLabel VoxelLabel::Empty(double min_dist, double diagonal) {
  return {VoxelCategory::kEmpty, empty_weight(min_dist, diagonal), min_dist};
}

LabelMap categorize(const LidarFrame& frame, const GridConfig& grid,
                    const CategorizeOptions& options) {
  grid.Validate();
  frame.Validate();
  // Hit voxels first, so that Occupied wins over Empty regardless of beam order.
  absl::flat_hash_map<uint64_t, bool> hits;
  for (const LidarPoint& p : frame.points) {
    if (auto v = world_to_voxel(p.position, grid)) hits.emplace(v->Key(), true);
  }

  const size_t n = frame.points.size();
  const int workers = std::max(1, std::min<int>(options.num_threads, static_cast<int>(n / 64 + 1)));
  std::vector<DistanceMap> partial(workers);
  if (workers == 1) {
    TraceBeams(frame, grid, hits, 0, n, partial[0]);
  } else {
    std::vector<std::thread> threads;
    for (int w = 0; w < workers; ++w) {
      threads.emplace_back([&, w] {
        TraceBeams(frame, grid, hits, n * w / workers, n * (w + 1) / workers, partial[w]);
      });
    }
    for (auto& t : threads) t.join();
  }

  DistanceMap& empties = partial[0];
  for (int w = 1; w < workers; ++w) {
    for (const auto& [key, d] : partial[w]) {
      auto [it, inserted] = empties.try_emplace(key, d);
      if (!inserted) it->second = std::min(it->second, d);
    }
  }

  const double diagonal = grid.Diagonal(Stride::Unit());
  LabelMap labels;
  labels.reserve(hits.size() + empties.size());
  for (const auto& [key, unused] : hits) labels.emplace(key, VoxelLabel::Occupied());
  for (const auto& [key, d] : empties) labels.emplace(key, VoxelLabel::Empty(d, diagonal));
  return labels;
}

LabelPyramid::LabelPyramid(std::vector<Stride> strides, std::vector<LabelMap> levels)
    : strides_(std::move(strides)), levels_(std::move(levels)) {
  if (strides_.size() != levels_.size()) {
    throw std::invalid_argument("label pyramid needs one level per stride");
  }
}

bool LabelPyramid::HasStride(const Stride& s) const {
  return std::find(strides_.begin(), strides_.end(), s) != strides_.end();
}

const LabelMap& LabelPyramid::Level(const Stride& s) const {
  const auto it = std::find(strides_.begin(), strides_.end(), s);
  if (it == strides_.end()) {
    throw std::invalid_argument("stride " + s.ToString() + " is not part of the label pyramid");
  }
  return levels_[static_cast<size_t>(it - strides_.begin())];
}

VoxelLabel LabelPyramid::Get(const Stride& s, const VoxelCoord& v) const {
  const LabelMap& level = Level(s);
  const auto it = level.find(v.Key());
  return it == level.end() ? VoxelLabel::Unknown() : it->second;
}

LabelPyramid build_pyramid(const LabelMap& base, const GridConfig& grid,
                           std::vector<Stride> strides) {
  grid.Validate();
  for (const Stride& s : strides) ValidateStride(s);
  std::sort(strides.begin(), strides.end(),
            [](const Stride& a, const Stride& b) { return a.volume() < b.volume(); });
  strides.erase(std::unique(strides.begin(), strides.end()), strides.end());

  std::vector<LabelMap> levels;
  levels.reserve(strides.size());
  const LabelMap* finer = &base;
  Stride finer_stride = Stride::Unit();
  for (const Stride& s : strides) {
    const Stride ratio = s / finer_stride;  // throws unless divisible
    if (ratio == Stride::Unit()) {
      levels.push_back(*finer);
      continue;
    }
    const auto fine_extent = grid.ExtentAt(finer_stride);

    struct Agg {
      bool occupied = false;
      bool unknown = false;
      int empty = 0;
      double min_dist = std::numeric_limits<double>::infinity();
    };
    absl::flat_hash_map<uint64_t, Agg> parents;
    parents.reserve(finer->size());
    for (const auto& [key, label] : *finer) {
      const VoxelCoord c = VoxelCoord::FromKey(key);
      const VoxelCoord p{c.ix / ratio.x, c.iy / ratio.y, c.iz / ratio.z};
      Agg& agg = parents[p.Key()];
      switch (label.category) {
        case VoxelCategory::kOccupied:
          agg.occupied = true;
          break;
        case VoxelCategory::kUnknown:
          agg.unknown = true;
          break;
        case VoxelCategory::kEmpty:
          ++agg.empty;
          agg.min_dist = std::min(agg.min_dist, label.min_dist);
          break;
      }
    }

    const double diagonal = grid.Diagonal(s);
    LabelMap level;
    level.reserve(parents.size());
    for (const auto& [key, agg] : parents) {
      const VoxelCoord p = VoxelCoord::FromKey(key);
      // Children that fall outside the grid do not exist and are not counted.
      int children = 1;
      for (int a = 0; a < 3; ++a) {
        const int lo = p[a] * ratio[a];
        children *= std::min(lo + ratio[a], fine_extent[a]) - lo;
      }
      VoxelLabel label;
      if (agg.occupied) {
        label = VoxelLabel::Occupied();
      } else if (agg.unknown || agg.empty < children) {
        label = VoxelLabel::Unknown();
      } else {
        label = VoxelLabel::Empty(agg.min_dist, diagonal);
      }
      level.emplace(key, label);
    }
    levels.push_back(std::move(level));
    finer = &levels.back();
    finer_stride = s;
  }
  return LabelPyramid(std::move(strides), std::move(levels));
}

std::vector<VoxelLabel> lookup(const LabelPyramid& pyramid, const Stride& stride,
                               std::span<const VoxelCoord> coords) {
  const LabelMap& level = pyramid.Level(stride);
  std::vector<VoxelLabel> out;
  out.reserve(coords.size());
  for (const VoxelCoord& v : coords) {
    const auto it = level.find(v.Key());
    out.push_back(it == level.end() ? VoxelLabel::Unknown() : it->second);
  }
  return out;
}

CategoryCounts count_categories(const LabelMap& labels) {
  CategoryCounts c;
  for (const auto& [key, label] : labels) {
    switch (label.category) {
      case VoxelCategory::kOccupied:
        ++c.occupied;
        break;
      case VoxelCategory::kEmpty:
        ++c.empty;
        break;
      case VoxelCategory::kUnknown:
        ++c.unknown;
        break;
    }
  }
  return c;
}

void write_label_pyramid(std::ostream& out, const LabelPyramid& pyramid) {
  BinaryWriter w(out);
  w.WriteMagic("VLBL");
  w.Write<uint16_t>(kLabelFileVersion);
  w.Write<uint32_t>(static_cast<uint32_t>(pyramid.strides().size()));
  for (const Stride& s : pyramid.strides()) {
    w.Write<uint16_t>(static_cast<uint16_t>(s.x));
    w.Write<uint16_t>(static_cast<uint16_t>(s.y));
    w.Write<uint16_t>(static_cast<uint16_t>(s.z));
    const LabelMap& level = pyramid.Level(s);
    w.Write<uint64_t>(level.size());
    for (uint64_t key : SortedKeys(level)) {
      const VoxelCoord v = VoxelCoord::FromKey(key);
      const VoxelLabel& l = level.at(key);
      w.Write<uint32_t>(static_cast<uint32_t>(v.ix));
      w.Write<uint32_t>(static_cast<uint32_t>(v.iy));
      w.Write<uint32_t>(static_cast<uint32_t>(v.iz));
      w.Write<uint8_t>(static_cast<uint8_t>(l.category));
      w.Write<float>(static_cast<float>(l.weight));
      w.Write<float>(static_cast<float>(l.category == VoxelCategory::kEmpty ? l.min_dist : 0.0));
    }
  }
}

LabelPyramid read_label_pyramid(std::istream& in) {
  BinaryReader r(in, "VLBL");
  r.ExpectMagic("VLBL");
  r.ExpectVersion(kLabelFileVersion);
  const auto n_strides = r.Read<uint32_t>("stride count");
  if (n_strides > 32) r.Fail("stride count", std::to_string(n_strides));
  std::vector<Stride> strides;
  std::vector<LabelMap> levels;
  for (uint32_t i = 0; i < n_strides; ++i) {
    Stride s;
    s.x = r.Read<uint16_t>("stride");
    s.y = r.Read<uint16_t>("stride");
    s.z = r.Read<uint16_t>("stride");
    if (!IsPowerOfTwo(s.x) || !IsPowerOfTwo(s.y) || !IsPowerOfTwo(s.z)) {
      r.Fail("stride", s.ToString());
    }
    const auto count = r.Read<uint64_t>("entry count");
    LabelMap level;
    level.reserve(static_cast<size_t>(std::min<uint64_t>(count, 1u << 24)));
    for (uint64_t e = 0; e < count; ++e) {
      VoxelCoord v;
      v.ix = static_cast<int32_t>(r.Read<uint32_t>("ix"));
      v.iy = static_cast<int32_t>(r.Read<uint32_t>("iy"));
      v.iz = static_cast<int32_t>(r.Read<uint32_t>("iz"));
      const auto cat = r.Read<uint8_t>("category");
      if (cat > 2) r.Fail("category", std::to_string(cat));
      VoxelLabel l;
      l.category = static_cast<VoxelCategory>(cat);
      l.weight = r.Read<float>("weight");
      l.min_dist = r.Read<float>("min_dist");
      if (!(l.weight >= 0.0 && l.weight <= 1.0)) r.Fail("weight", std::to_string(l.weight));
      level.emplace(v.Key(), l);
    }
    strides.push_back(s);
    levels.push_back(std::move(level));
  }
  return LabelPyramid(std::move(strides), std::move(levels));
}

void save_label_pyramid(const std::filesystem::path& path, const LabelPyramid& pyramid) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_label_pyramid(out, pyramid);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

LabelPyramid load_label_pyramid(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_label_pyramid(in);
}

}  // namespace voxmae

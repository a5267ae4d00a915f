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

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "voxmae/model.h"

namespace voxmae {
namespace {

GridConfig LineGrid() {
  GridConfig g;
  g.origin = Vec3::Zero();
  g.voxel_size = Vec3::Ones();
  g.extent = {3, 1, 1};
  return g;
}

// Cell 0 occupied, cell 1 empty, cell 2 unobserved but inside a box.
struct HandCase {
  GridConfig grid = LineGrid();
  Scene scene;
  LabelPyramid pyramid;

  HandCase() {
    scene.boxes.push_back({Vec3(2.5, 0.5, 0.5), Vec3(0.5, 0.5, 0.5), 0.0});
    LabelMap labels;
    labels[VoxelCoord{0, 0, 0}.Key()] = VoxelLabel::Occupied();
    labels[VoxelCoord{1, 0, 0}.Key()] = VoxelLabel::Empty(0.0, grid.Diagonal(Stride::Unit()));
    pyramid = LabelPyramid({Stride::Unit()}, {labels});
  }
};

TEST(EvaluateReconstructionTest, HandCaseAllReconstructed) {
  HandCase h;
  const ReconMetrics m =
      evaluate_reconstruction({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}}, h.scene, h.pyramid, h.grid);
  EXPECT_DOUBLE_EQ(*m.occupied_recall, 1.0);
  EXPECT_DOUBLE_EQ(*m.empty_false_positive_rate, 1.0);
  EXPECT_DOUBLE_EQ(*m.unknown_completion_recall, 1.0);
  EXPECT_EQ(m.n_recon, 3u);
}

TEST(EvaluateReconstructionTest, EmptyReconstructionScoresZero) {
  HandCase h;
  const ReconMetrics m = evaluate_reconstruction({}, h.scene, h.pyramid, h.grid);
  EXPECT_DOUBLE_EQ(*m.occupied_recall, 0.0);
  EXPECT_DOUBLE_EQ(*m.empty_false_positive_rate, 0.0);
  EXPECT_DOUBLE_EQ(*m.unknown_completion_recall, 0.0);
}

TEST(EvaluateReconstructionTest, ObservedSolidIsNotCountedAsUnknown) {
  HandCase h;
  // Box now also covers the occupied cell 0.
  h.scene.boxes.push_back({Vec3(0.5, 0.5, 0.5), Vec3(0.5, 0.5, 0.5), 0.0});
  const ReconMetrics m = evaluate_reconstruction({{2, 0, 0}}, h.scene, h.pyramid, h.grid);
  EXPECT_EQ(m.n_unknown_solid, 1u);
  EXPECT_DOUBLE_EQ(*m.unknown_completion_recall, 1.0);
}

TEST(EvaluateReconstructionTest, UndefinedRatesAreNullInJson) {
  const GridConfig g = LineGrid();
  const LabelPyramid empty({Stride::Unit()}, {LabelMap{}});
  const ReconMetrics m = evaluate_reconstruction({{0, 0, 0}}, Scene{}, empty, g);
  EXPECT_FALSE(m.occupied_recall.has_value());
  EXPECT_FALSE(m.empty_false_positive_rate.has_value());
  EXPECT_FALSE(m.unknown_completion_recall.has_value());
  const nlohmann::json j = to_json(m);
  EXPECT_TRUE(j["occupied_recall"].is_null());
  EXPECT_EQ(j["counts"]["reconstructed"], 1);
}

SensorModel DenseSensor() {
  return SensorModel::Uniform(Vec3(0, 0, 2), 24, -1.2, -0.3, 48, 0.0, 2 * M_PI, 100.0);
}

GridConfig GroundGrid() {
  GridConfig g;
  g.origin = Vec3(-8, -8, -0.125);
  g.voxel_size = Vec3::Constant(0.25);
  g.extent = {64, 64, 16};
  return g;
}

TEST(EvaluateReconstructionTest, IdentityReconstructionHasFullRecall) {
  std::mt19937_64 rng(3);
  RandomSceneOptions opt;
  opt.region_lo = Vec3(-6, -6, 0);
  opt.region_hi = Vec3(6, 6, 0);
  const Scene scene = random_scene(opt, rng);
  const GridConfig grid = GroundGrid();
  const RangeImage img = simulate(scene, DenseSensor(), 1);
  const LabelMap labels = categorize(to_points(img), grid);
  const LabelPyramid pyramid({Stride::Unit()}, {labels});
  std::vector<VoxelCoord> occupied;
  for (const auto& [k, l] : labels) {
    if (l.category == VoxelCategory::kOccupied) occupied.push_back(VoxelCoord::FromKey(k));
  }
  ASSERT_FALSE(occupied.empty());
  const ReconMetrics m = evaluate_reconstruction(occupied, scene, pyramid, grid);
  EXPECT_EQ(*m.occupied_recall, 1.0);
  EXPECT_EQ(*m.empty_false_positive_rate, 0.0);
  // Deterministic.
  EXPECT_EQ(to_json(m), to_json(evaluate_reconstruction(occupied, scene, pyramid, grid)));
}

TEST(SolidVoxelsTest, MatchesExhaustiveCellScan) {
  std::mt19937_64 rng(11);
  const GridConfig grid = GroundGrid();
  for (int trial = 0; trial < 5; ++trial) {
    RandomSceneOptions opt;
    opt.max_yaw = 0.7;
    const Scene scene = random_scene(opt, rng);
    std::vector<VoxelCoord> expected;
    for (int x = 0; x < grid.extent[0]; ++x) {
      for (int y = 0; y < grid.extent[1]; ++y) {
        for (int z = 0; z < grid.extent[2]; ++z) {
          const Vec3 lo = grid.origin + grid.voxel_size.cwiseProduct(Vec3(x, y, z));
          const Vec3 hi = lo + grid.voxel_size;
          for (const Box& b : scene.boxes) {
            if (box_overlaps_aabb(b, lo, hi)) {
              expected.push_back({x, y, z});
              break;
            }
          }
        }
      }
    }
    EXPECT_EQ(solid_voxels(scene, grid), expected);
  }
}

TEST(AggregateTest, PoolsCounts) {
  ReconMetrics a, b;
  a.n_occupied = 4;
  a.n_occupied_hit = 4;
  b.n_occupied = 6;
  b.n_occupied_hit = 0;
  b.n_empty = 2;
  b.n_empty_hit = 1;
  const ReconMetrics m = aggregate({a, b});
  EXPECT_DOUBLE_EQ(*m.occupied_recall, 0.4);
  EXPECT_DOUBLE_EQ(*m.empty_false_positive_rate, 0.5);
  EXPECT_FALSE(m.unknown_completion_recall.has_value());
}

std::vector<RangeImage> DenseGroundImages() {
  Scene ground;
  ground.ground_z = 0.0;
  const RangeImage img = simulate(ground, DenseSensor(), 0);
  EXPECT_EQ(img.CountReturns(), img.ranges.size());
  return {img};
}

TEST(MaskingStatsTest, DisabledKeepsEverything) {
  const MaskingConfig off{false, 1.0};
  EXPECT_DOUBLE_EQ(masking_stats(DenseGroundImages(), GroundGrid(), off, 1000, 1), 1.0);
}

TEST(MaskingStatsTest, SphericalOnlyMatchesAnalyticExpectation) {
  // E[1/m] for m uniform in {1,2,3,4}, squared.
  const double e = (1.0 + 1.0 / 2 + 1.0 / 3 + 1.0 / 4) / 4.0;
  const MaskingConfig spherical{true, 1.0};
  const double f = masking_stats(DenseGroundImages(), GroundGrid(), spherical, 4000, 2);
  EXPECT_NEAR(e * e, 0.2713, 5e-5);
  EXPECT_NEAR(f, e * e, 0.01);
}

TEST(MaskingStatsTest, VoxelOnlyIsNearKeepFraction) {
  const MaskingConfig voxel{false, 0.6};
  const double f = masking_stats(DenseGroundImages(), GroundGrid(), voxel, 2000, 3);
  EXPECT_NEAR(f, 0.6, 0.03);
}

TEST(MaskingStatsTest, RejectsTooFewTrials) {
  EXPECT_THROW(masking_stats(DenseGroundImages(), GroundGrid(), {}, 999, 0), ConfigError);
  EXPECT_THROW(masking_stats({}, GroundGrid(), {}, 1000, 0), ConfigError);
}

}  // namespace
}  // namespace voxmae

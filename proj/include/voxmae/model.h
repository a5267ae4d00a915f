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

#ifndef VOXMAE_MODEL_H_
#define VOXMAE_MODEL_H_

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "voxmae/geometry.h"
#include "voxmae/lidar.h"
#include "voxmae/sparsenn.h"

namespace voxmae {

struct EncoderConfig {
  std::vector<int> channels = {16, 32, 64, 64};
  std::vector<Stride> strides = {{2, 2, 2}, {2, 2, 2}, {2, 2, 2}, {1, 1, 2}};
  // Kernel of each stage's downsampling convolution.
  std::vector<nn::KernelSize> kernels = {{2, 2, 2}, {2, 2, 2}, {2, 2, 2}, {1, 1, 3}};
  // Adds the mean point offset from the voxel center (in voxel units) to the
  // constant occupancy feature.
  bool centroid_offsets = false;

  int InputChannels() const { return centroid_offsets ? 4 : 1; }
  Stride CumulativeStride() const;
  void Validate() const;
};

struct DecoderBlockConfig {
  int channels = 16;
  nn::KernelSize kernel = {2, 2, 2};
  Stride stride = {2, 2, 2};
};

struct DecoderConfig {
  std::vector<DecoderBlockConfig> blocks = {{64, {1, 1, 3}, {1, 1, 2}},
                                            {64, {2, 2, 2}, {2, 2, 2}},
                                            {32, {2, 2, 2}, {2, 2, 2}},
                                            {16, {2, 2, 2}, {2, 2, 2}}};
  // Voxels whose predicted probability is below this value are pruned.
  double prune_threshold = 0.5;

  // Output stride of every block, coarsest first, starting from `bottleneck`.
  std::vector<Stride> SupervisionStrides(const Stride& bottleneck) const;
  void Validate(const Stride& bottleneck) const;
};

struct SafetyLimits {
  size_t max_voxels = 200000;
  // Voxels whose center lies more than `ground_margin` below this plane are
  // removed after every block. Disabled when unset.
  std::optional<double> ground_plane_z;
  double ground_margin = 0.1;

  void Validate() const;
};

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;

  void Validate() const;
  // FNV-1a over the architecture description; two configs with the same
  // digest produce identically shaped parameters.
  uint64_t Digest() const;
  std::string Describe() const;
};

template <typename T>
struct EncoderStage {
  nn::ConvParams<T> conv;
  nn::BatchNorm<T> bn1;
  nn::ConvParams<T> down;
  nn::BatchNorm<T> bn2;
};

template <typename T>
struct DecoderBlock {
  nn::ConvParams<T> up;
  nn::BatchNorm<T> bn1;
  nn::ConvParams<T> conv;
  nn::BatchNorm<T> bn2;
  nn::ConvParams<T> head;
};

template <typename T>
class Model {
 public:
  Model(const ModelConfig& config, uint64_t seed);

  const ModelConfig& config() const { return config_; }

  // Trainable tensors in a fixed order.
  std::vector<nn::Parameter<T>*> Parameters();
  // Batch-norm running statistics, named "<bn>.running_mean" / ".running_var".
  std::vector<std::pair<std::string, nn::Matrix<T>*>> Buffers();
  void ZeroGrad();

  std::vector<EncoderStage<T>> encoder;
  std::vector<DecoderBlock<T>> decoder;

 private:
  ModelConfig config_;
};

// Stride-1 occupied voxels of a frame (points outside the grid are dropped),
// sorted, with the mean in-voxel point offset in voxel units.
struct Voxelization {
  std::vector<VoxelCoord> coords;
  std::vector<Vec3> offsets;
};

Voxelization voxelize(const LidarFrame& frame, const GridConfig& grid);

// Indices of a uniformly random subset of size round(keep_fraction * n),
// ascending.
std::vector<size_t> voxel_mask_indices(size_t n, double keep_fraction, std::mt19937_64& rng);

std::vector<VoxelCoord> voxel_mask(const std::vector<VoxelCoord>& occupied, double keep_fraction,
                                   std::mt19937_64& rng);

// Encoder input for the selected voxels of a voxelization.
template <typename T>
nn::SparseTensor<T> encoder_input(const Voxelization& vox, const std::vector<size_t>& selected,
                                  const GridConfig& grid, const EncoderConfig& config,
                                  nn::Tape<T>* tape);

// Training mode uses batch statistics in batch norm and updates the running
// estimates; inference mode uses the running estimates.
enum class Mode { kTrain, kInfer };

template <typename T>
nn::SparseTensor<T> encode(Model<T>& model, const nn::SparseTensor<T>& input, Mode mode,
                           nn::Tape<T>* tape);

// Output of one decoder block.
template <typename T>
struct DecodeRecord {
  Stride stride;
  std::shared_ptr<const nn::CoordSet> coords;
  nn::Matrix<T> logits;  // rows x 1, before pruning
  int logit_node = -1;
  // Survivors of ground and threshold pruning.
  std::vector<bool> kept;
  // Parents removed at random before upsampling to respect the voxel budget.
  size_t randomly_pruned_parents = 0;

  size_t num_kept() const;
};

template <typename T>
struct DecodeOutput {
  std::vector<DecodeRecord<T>> records;
  // Largest active-site count seen during decoding.
  size_t peak_active = 0;

  // Surviving coordinates of the last block.
  std::vector<VoxelCoord> FinalCoords() const;
};

// Raised when a decode step would hold more active sites than allowed.
class BudgetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
DecodeOutput<T> decode(Model<T>& model, const nn::SparseTensor<T>& bottleneck,
                       const SafetyLimits& limits, Mode mode, std::mt19937_64& rng,
                       nn::Tape<T>* tape);

// 1st percentile of point heights; nullopt for an empty frame.
std::optional<double> estimate_ground_z(const LidarFrame& frame);

struct ReconstructOptions {
  double keep_fraction = 1.0;
  SafetyLimits limits;
  uint64_t seed = 0;
};

// Voxelize, mask, encode and decode in inference mode; returns the stride-1
// voxels that survive the last block.
template <typename T>
std::vector<VoxelCoord> reconstruct(Model<T>& model, const LidarFrame& frame,
                                    const GridConfig& grid, const ReconstructOptions& options);

}  // namespace voxmae

#endif  // VOXMAE_MODEL_H_

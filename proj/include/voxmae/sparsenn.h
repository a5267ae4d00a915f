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

#ifndef VOXMAE_SPARSENN_H_
#define VOXMAE_SPARSENN_H_

#include <array>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <absl/container/flat_hash_map.h>

#include "voxmae/geometry.h"

// Minimal sparse voxel network engine: convolutions over active sites,
// batch norm, ReLU, pruning, and a reverse-mode tape over feature matrices.
namespace voxmae::nn {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Sorted, duplicate-free coordinate list with O(1) lookup.
class CoordSet {
 public:
  CoordSet() = default;
  // Sorts and deduplicates.
  explicit CoordSet(std::vector<VoxelCoord> coords);

  const std::vector<VoxelCoord>& coords() const { return coords_; }
  size_t size() const { return coords_.size(); }
  bool empty() const { return coords_.empty(); }
  const VoxelCoord& operator[](size_t i) const { return coords_[i]; }
  // Row index of `v`, or -1.
  int Find(const VoxelCoord& v) const;

 private:
  std::vector<VoxelCoord> coords_;
  absl::flat_hash_map<uint64_t, int> index_;
};

template <typename T>
struct SparseTensor {
  Stride stride;
  std::shared_ptr<const CoordSet> coords = std::make_shared<CoordSet>();
  Matrix<T> features;
  GridConfig grid;
  // Tape node carrying d(loss)/d(features); -1 when not recorded.
  int node = -1;

  size_t size() const { return coords->size(); }
  bool empty() const { return coords->empty(); }
  int channels() const { return static_cast<int>(features.cols()); }
};

template <typename T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;

  void ZeroGrad() { grad.setZero(value.rows(), value.cols()); }
};

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&)>;

  int NewNode(Eigen::Index rows, Eigen::Index cols);
  // Registers the adjoint of the most recent operation.
  void Record(BackwardFn fn) { ops_.push_back(std::move(fn)); }
  // Accumulated gradient of a node; null when nothing flowed into it yet.
  const Matrix<T>* GradIfAny(int node) const;
  // Gradient accumulator for a node, zero-initialized on first use.
  Matrix<T>& Grad(int node);
  void Seed(int node, const Matrix<T>& grad);
  // Replays recorded adjoints in reverse order. Throws std::logic_error when
  // nothing was recorded or when called twice.
  void Backward();
  size_t num_ops() const { return ops_.size(); }

 private:
  struct Node {
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    Matrix<T> grad;
    bool touched = false;
  };
  std::vector<Node> nodes_;
  std::vector<BackwardFn> ops_;
  bool done_ = false;
};

template <typename T>
SparseTensor<T> make_input(const GridConfig& grid, const Stride& stride,
                           std::vector<VoxelCoord> coords, Matrix<T> features,
                           Tape<T>* tape);

using KernelSize = std::array<int, 3>;

// Offset range along one axis for a kernel of size k: [-(k-1)/2, k-1-(k-1)/2].
int KernelOffsetLow(int k);

template <typename T>
struct ConvParams {
  KernelSize kernel = {1, 1, 1};
  Stride stride;
  int in_channels = 0;
  int out_channels = 0;
  // (kernel volume * in_channels) x out_channels; offsets enumerated with z
  // fastest, then y, then x.
  Parameter<T> weight;
  Parameter<T> bias;  // 1 x out_channels

  int KernelVolume() const { return kernel[0] * kernel[1] * kernel[2]; }
  auto Tap(int k) { return weight.value.middleRows(k * in_channels, in_channels); }
  auto Tap(int k) const { return weight.value.middleRows(k * in_channels, in_channels); }
};

// Kaiming-uniform (fan-in, ReLU gain) weights and zero bias.
template <typename T>
ConvParams<T> make_conv(const std::string& name, KernelSize kernel, Stride stride, int in_channels,
                        int out_channels, std::mt19937_64& rng);

// Input/output row pairs for every kernel tap.
struct KernelMap {
  std::vector<std::vector<std::pair<int, int>>> taps;
  size_t num_pairs() const;
};

template <typename T>
SparseTensor<T> submanifold_conv(const SparseTensor<T>& x, ConvParams<T>& p, Tape<T>* tape);

template <typename T>
SparseTensor<T> strided_sparse_conv(const SparseTensor<T>& x, ConvParams<T>& p, Tape<T>* tape);

template <typename T>
SparseTensor<T> generative_transposed_conv(const SparseTensor<T>& x, ConvParams<T>& p,
                                           Tape<T>* tape);

// Number of children generative_transposed_conv would create before grid
// clipping: |x| * kernel volume.
size_t worst_case_children(size_t parents, const KernelSize& kernel);

template <typename T>
SparseTensor<T> prune(const SparseTensor<T>& x, const std::vector<bool>& keep, Tape<T>* tape);

// 1x1x1 convolution to one logit per active site.
template <typename T>
SparseTensor<T> occupancy_head(const SparseTensor<T>& x, ConvParams<T>& p, Tape<T>* tape);

template <typename T>
struct BatchNorm {
  static constexpr double kEpsilon = 1e-5;
  static constexpr double kMomentum = 0.1;

  int channels = 0;
  Parameter<T> gamma;  // 1 x C
  Parameter<T> beta;   // 1 x C
  Matrix<T> running_mean;
  Matrix<T> running_var;
};

template <typename T>
BatchNorm<T> make_batch_norm(const std::string& name, int channels);

// Training mode normalizes with the statistics of the active rows and updates
// the running estimates; evaluation mode uses the running estimates.
template <typename T>
SparseTensor<T> batch_norm(const SparseTensor<T>& x, BatchNorm<T>& bn, bool training,
                           Tape<T>* tape);

template <typename T>
SparseTensor<T> relu(const SparseTensor<T>& x, Tape<T>* tape);

template <typename T>
inline T sigmoid(T logit) {
  return T(1) / (T(1) + std::exp(-logit));
}

}  // namespace voxmae::nn

#endif  // VOXMAE_SPARSENN_H_

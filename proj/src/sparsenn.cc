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

#include "voxmae/sparsenn.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace voxmae::nn {
namespace {

constexpr int32_t kMaxCoord = (1 << 21) - 1;

bool Packable(const VoxelCoord& v) {
  return v.ix >= 0 && v.iy >= 0 && v.iz >= 0 && v.ix <= kMaxCoord && v.iy <= kMaxCoord &&
         v.iz <= kMaxCoord;
}

// Offsets of every kernel tap, z fastest.
std::vector<VoxelCoord> KernelOffsets(const KernelSize& kernel) {
  std::vector<VoxelCoord> offsets;
  offsets.reserve(static_cast<size_t>(kernel[0] * kernel[1] * kernel[2]));
  const int lx = KernelOffsetLow(kernel[0]);
  const int ly = KernelOffsetLow(kernel[1]);
  const int lz = KernelOffsetLow(kernel[2]);
  for (int x = 0; x < kernel[0]; ++x) {
    for (int y = 0; y < kernel[1]; ++y) {
      for (int z = 0; z < kernel[2]; ++z) offsets.push_back({lx + x, ly + y, lz + z});
    }
  }
  return offsets;
}

template <typename T>
void CheckParams(const ConvParams<T>& p, const SparseTensor<T>& x, const char* op) {
  const int in_channels = x.channels();
  if (!x.empty() && p.in_channels != in_channels) {
    throw std::invalid_argument(std::string(op) + " '" + p.weight.name + "': expected " +
                                std::to_string(p.in_channels) + " input channels, got " +
                                std::to_string(in_channels));
  }
  for (int a = 0; a < 3; ++a) {
    if (p.kernel[a] < 1) throw ConfigError(std::string(op) + ": kernel size must be >= 1");
  }
}

template <typename T>
void EnsureGrad(Parameter<T>& p) {
  if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) p.ZeroGrad();
}

// Shared gather-GEMM-scatter path of all convolution variants.
template <typename T>
SparseTensor<T> ApplyConv(const SparseTensor<T>& x, std::shared_ptr<const CoordSet> out_coords,
                          const Stride& out_stride, std::shared_ptr<const KernelMap> map,
                          ConvParams<T>& p, Tape<T>* tape) {
  SparseTensor<T> y;
  y.stride = out_stride;
  y.grid = x.grid;
  y.coords = std::move(out_coords);
  const auto n_out = static_cast<Eigen::Index>(y.coords->size());
  y.features = p.bias.value.replicate(n_out, 1);
  Matrix<T> gathered;
  Matrix<T> product;
  for (size_t k = 0; k < map->taps.size(); ++k) {
    const auto& pairs = map->taps[k];
    if (pairs.empty()) continue;
    gathered.resize(static_cast<Eigen::Index>(pairs.size()), p.in_channels);
    for (size_t r = 0; r < pairs.size(); ++r) gathered.row(r) = x.features.row(pairs[r].first);
    product.noalias() = gathered * p.Tap(static_cast<int>(k));
    for (size_t r = 0; r < pairs.size(); ++r) y.features.row(pairs[r].second) += product.row(r);
  }
  if (tape == nullptr) return y;

  y.node = tape->NewNode(n_out, p.out_channels);
  tape->Record([in = x.features, in_node = x.node, out_node = y.node, map, &p](Tape<T>& t) {
    const Matrix<T>* grad_out = t.GradIfAny(out_node);
    if (grad_out == nullptr) return;
    EnsureGrad(p.weight);
    EnsureGrad(p.bias);
    p.bias.grad += grad_out->colwise().sum();
    Matrix<T> a, g, dx;
    for (size_t k = 0; k < map->taps.size(); ++k) {
      const auto& pairs = map->taps[k];
      if (pairs.empty()) continue;
      const auto n = static_cast<Eigen::Index>(pairs.size());
      a.resize(n, in.cols());
      g.resize(n, grad_out->cols());
      for (Eigen::Index r = 0; r < n; ++r) {
        a.row(r) = in.row(pairs[r].first);
        g.row(r) = grad_out->row(pairs[r].second);
      }
      const Eigen::Index rows = in.cols();
      p.weight.grad.middleRows(static_cast<Eigen::Index>(k) * rows, rows).noalias() +=
          a.transpose() * g;
      if (in_node >= 0) {
        dx.noalias() = g * p.Tap(static_cast<int>(k)).transpose();
        Matrix<T>& grad_in = t.Grad(in_node);
        for (Eigen::Index r = 0; r < n; ++r) grad_in.row(pairs[r].first) += dx.row(r);
      }
    }
  });
  return y;
}

}  // namespace

CoordSet::CoordSet(std::vector<VoxelCoord> coords) : coords_(std::move(coords)) {
  for (const VoxelCoord& v : coords_) {
    if (!Packable(v)) throw std::invalid_argument("voxel coordinate out of range");
  }
  std::sort(coords_.begin(), coords_.end());
  coords_.erase(std::unique(coords_.begin(), coords_.end()), coords_.end());
  index_.reserve(coords_.size());
  for (size_t i = 0; i < coords_.size(); ++i) index_.emplace(coords_[i].Key(), static_cast<int>(i));
}

int CoordSet::Find(const VoxelCoord& v) const {
  if (!Packable(v)) return -1;
  const auto it = index_.find(v.Key());
  return it == index_.end() ? -1 : it->second;
}

template <typename T>
int Tape<T>::NewNode(Eigen::Index rows, Eigen::Index cols) {
  nodes_.push_back({rows, cols, {}, false});
  return static_cast<int>(nodes_.size()) - 1;
}

template <typename T>
const Matrix<T>* Tape<T>::GradIfAny(int node) const {
  const Node& n = nodes_.at(static_cast<size_t>(node));
  return n.touched ? &n.grad : nullptr;
}

template <typename T>
Matrix<T>& Tape<T>::Grad(int node) {
  Node& n = nodes_.at(static_cast<size_t>(node));
  if (!n.touched) {
    n.grad.setZero(n.rows, n.cols);
    n.touched = true;
  }
  return n.grad;
}

template <typename T>
void Tape<T>::Seed(int node, const Matrix<T>& grad) {
  Matrix<T>& g = Grad(node);
  if (g.rows() != grad.rows() || g.cols() != grad.cols()) {
    throw std::invalid_argument("seed gradient shape does not match its node");
  }
  g += grad;
}

template <typename T>
void Tape<T>::Backward() {
  if (ops_.empty()) throw std::logic_error("backward called on an empty tape");
  if (done_) throw std::logic_error("backward called twice on the same tape");
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)(*this);
  done_ = true;
}

template <typename T>
SparseTensor<T> make_input(const GridConfig& grid, const Stride& stride,
                           std::vector<VoxelCoord> coords, Matrix<T> features, Tape<T>* tape) {
  SparseTensor<T> x;
  x.grid = grid;
  x.stride = stride;
  // Keep feature rows aligned with the canonical (sorted) coordinate order.
  std::vector<int> order(coords.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return coords[a] < coords[b]; });
  for (size_t i = 1; i < order.size(); ++i) {
    if (coords[order[i]] == coords[order[i - 1]]) {
      throw std::invalid_argument("duplicate coordinate in sparse input");
    }
  }
  if (features.rows() != static_cast<Eigen::Index>(coords.size())) {
    throw std::invalid_argument("feature rows must match coordinate count");
  }
  Matrix<T> sorted(features.rows(), features.cols());
  std::vector<VoxelCoord> sorted_coords(coords.size());
  for (size_t i = 0; i < order.size(); ++i) {
    sorted.row(static_cast<Eigen::Index>(i)) = features.row(order[i]);
    sorted_coords[i] = coords[order[i]];
  }
  x.coords = std::make_shared<CoordSet>(std::move(sorted_coords));
  x.features = std::move(sorted);
  if (tape != nullptr) x.node = tape->NewNode(x.features.rows(), x.features.cols());
  return x;
}

int KernelOffsetLow(int k) { return -((k - 1) / 2); }

size_t KernelMap::num_pairs() const {
  size_t n = 0;
  for (const auto& t : taps) n += t.size();
  return n;
}

template <typename T>
ConvParams<T> make_conv(const std::string& name, KernelSize kernel, Stride stride, int in_channels,
                        int out_channels, std::mt19937_64& rng) {
  ConvParams<T> p;
  p.kernel = kernel;
  p.stride = stride;
  p.in_channels = in_channels;
  p.out_channels = out_channels;
  const int fan_in = p.KernelVolume() * in_channels;
  const double bound = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  p.weight.name = name + ".weight";
  p.weight.value.resize(fan_in, out_channels);
  for (Eigen::Index i = 0; i < p.weight.value.size(); ++i) {
    p.weight.value.data()[i] = static_cast<T>(dist(rng));
  }
  p.bias.name = name + ".bias";
  p.bias.value.setZero(1, out_channels);
  p.weight.ZeroGrad();
  p.bias.ZeroGrad();
  return p;
}

template <typename T>
SparseTensor<T> submanifold_conv(const SparseTensor<T>& x, ConvParams<T>& p, Tape<T>* tape) {
  CheckParams(p, x, "submanifold_conv");
  if (p.stride != Stride::Unit()) throw ConfigError("submanifold_conv requires unit stride");
  for (int a = 0; a < 3; ++a) {
    if (p.kernel[a] % 2 == 0) throw ConfigError("submanifold_conv requires odd kernel sizes");
  }
  const auto offsets = KernelOffsets(p.kernel);
  auto map = std::make_shared<KernelMap>();
  map->taps.resize(offsets.size());
  const CoordSet& coords = *x.coords;
  for (size_t k = 0; k < offsets.size(); ++k) {
    const VoxelCoord& off = offsets[k];
    auto& pairs = map->taps[k];
    for (size_t j = 0; j < coords.size(); ++j) {
      const VoxelCoord& c = coords[j];
      const int i = coords.Find({c.ix + off.ix, c.iy + off.iy, c.iz + off.iz});
      if (i >= 0) pairs.emplace_back(i, static_cast<int>(j));
    }
  }
  return ApplyConv(x, x.coords, x.stride, std::move(map), p, tape);
}

template <typename T>
SparseTensor<T> strided_sparse_conv(const SparseTensor<T>& x, ConvParams<T>& p, Tape<T>* tape) {
  CheckParams(p, x, "strided_sparse_conv");
  ValidateStride(p.stride);
  const Stride& s = p.stride;
  std::vector<VoxelCoord> out;
  out.reserve(x.size());
  for (const VoxelCoord& c : x.coords->coords()) out.push_back({c.ix / s.x, c.iy / s.y, c.iz / s.z});
  auto out_coords = std::make_shared<CoordSet>(std::move(out));

  const auto offsets = KernelOffsets(p.kernel);
  auto map = std::make_shared<KernelMap>();
  map->taps.resize(offsets.size());
  for (size_t k = 0; k < offsets.size(); ++k) {
    const VoxelCoord& off = offsets[k];
    auto& pairs = map->taps[k];
    for (size_t j = 0; j < out_coords->size(); ++j) {
      const VoxelCoord& o = (*out_coords)[j];
      const int i = x.coords->Find({o.ix * s.x + off.ix, o.iy * s.y + off.iy, o.iz * s.z + off.iz});
      if (i >= 0) pairs.emplace_back(i, static_cast<int>(j));
    }
  }
  return ApplyConv(x, std::move(out_coords), x.stride * s, std::move(map), p, tape);
}

template <typename T>
SparseTensor<T> generative_transposed_conv(const SparseTensor<T>& x, ConvParams<T>& p,
                                           Tape<T>* tape) {
  CheckParams(p, x, "generative_transposed_conv");
  ValidateStride(p.stride);
  const Stride out_stride = x.stride / p.stride;  // throws when a component drops below 1
  const Stride& s = p.stride;
  const auto extent = x.grid.ExtentAt(out_stride);
  const auto offsets = KernelOffsets(p.kernel);

  auto child_of = [&](const VoxelCoord& parent, const VoxelCoord& off) {
    return VoxelCoord{parent.ix * s.x + off.ix, parent.iy * s.y + off.iy, parent.iz * s.z + off.iz};
  };
  auto in_grid = [&](const VoxelCoord& c) {
    return c.ix >= 0 && c.iy >= 0 && c.iz >= 0 && c.ix < extent[0] && c.iy < extent[1] &&
           c.iz < extent[2];
  };

  std::vector<VoxelCoord> children;
  children.reserve(x.size() * offsets.size());
  for (const VoxelCoord& parent : x.coords->coords()) {
    for (const VoxelCoord& off : offsets) {
      const VoxelCoord c = child_of(parent, off);
      if (in_grid(c)) children.push_back(c);
    }
  }
  auto out_coords = std::make_shared<CoordSet>(std::move(children));

  auto map = std::make_shared<KernelMap>();
  map->taps.resize(offsets.size());
  for (size_t k = 0; k < offsets.size(); ++k) {
    auto& pairs = map->taps[k];
    for (size_t i = 0; i < x.size(); ++i) {
      const VoxelCoord c = child_of((*x.coords)[i], offsets[k]);
      if (!in_grid(c)) continue;
      pairs.emplace_back(static_cast<int>(i), out_coords->Find(c));
    }
  }
  return ApplyConv(x, std::move(out_coords), out_stride, std::move(map), p, tape);
}

size_t worst_case_children(size_t parents, const KernelSize& kernel) {
  return parents * static_cast<size_t>(kernel[0] * kernel[1] * kernel[2]);
}

template <typename T>
SparseTensor<T> prune(const SparseTensor<T>& x, const std::vector<bool>& keep, Tape<T>* tape) {
  if (keep.size() != x.size()) throw std::invalid_argument("prune mask length mismatch");
  auto rows = std::make_shared<std::vector<int>>();
  std::vector<VoxelCoord> kept;
  for (size_t i = 0; i < keep.size(); ++i) {
    if (keep[i]) {
      rows->push_back(static_cast<int>(i));
      kept.push_back((*x.coords)[i]);
    }
  }
  SparseTensor<T> y;
  y.stride = x.stride;
  y.grid = x.grid;
  y.coords = rows->size() == x.size() ? x.coords : std::make_shared<CoordSet>(std::move(kept));
  y.features.resize(static_cast<Eigen::Index>(rows->size()), x.features.cols());
  for (size_t r = 0; r < rows->size(); ++r) {
    y.features.row(static_cast<Eigen::Index>(r)) = x.features.row((*rows)[r]);
  }
  if (tape == nullptr || x.node < 0) return y;
  y.node = tape->NewNode(y.features.rows(), y.features.cols());
  tape->Record([rows, in_node = x.node, out_node = y.node](Tape<T>& t) {
    const Matrix<T>* g = t.GradIfAny(out_node);
    if (g == nullptr) return;
    Matrix<T>& grad_in = t.Grad(in_node);
    for (size_t r = 0; r < rows->size(); ++r) {
      grad_in.row((*rows)[r]) += g->row(static_cast<Eigen::Index>(r));
    }
  });
  return y;
}

template <typename T>
SparseTensor<T> occupancy_head(const SparseTensor<T>& x, ConvParams<T>& p, Tape<T>* tape) {
  if (p.kernel != KernelSize{1, 1, 1} || p.out_channels != 1) {
    throw ConfigError("occupancy_head expects a 1x1x1 kernel with one output channel");
  }
  return submanifold_conv(x, p, tape);
}

template <typename T>
BatchNorm<T> make_batch_norm(const std::string& name, int channels) {
  BatchNorm<T> bn;
  bn.channels = channels;
  bn.gamma.name = name + ".gamma";
  bn.gamma.value.setOnes(1, channels);
  bn.beta.name = name + ".beta";
  bn.beta.value.setZero(1, channels);
  bn.gamma.ZeroGrad();
  bn.beta.ZeroGrad();
  bn.running_mean.setZero(1, channels);
  bn.running_var.setOnes(1, channels);
  return bn;
}

template <typename T>
SparseTensor<T> batch_norm(const SparseTensor<T>& x, BatchNorm<T>& bn, bool training,
                           Tape<T>* tape) {
  SparseTensor<T> y;
  y.stride = x.stride;
  y.grid = x.grid;
  y.coords = x.coords;
  const Eigen::Index n = x.features.rows();
  const int c = bn.channels;
  if (n > 0 && x.features.cols() != c) {
    throw std::invalid_argument("batch_norm '" + bn.gamma.name + "': channel mismatch");
  }
  y.features.resize(n, c);
  if (n == 0) {
    if (tape != nullptr && x.node >= 0) y.node = tape->NewNode(0, c);
    return y;
  }

  // Statistics in double regardless of T.
  Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(c);
  Eigen::RowVectorXd var = Eigen::RowVectorXd::Zero(c);
  if (training) {
    for (Eigen::Index r = 0; r < n; ++r) mean += x.features.row(r).template cast<double>();
    mean /= static_cast<double>(n);
    for (Eigen::Index r = 0; r < n; ++r) {
      var += (x.features.row(r).template cast<double>() - mean).array().square().matrix();
    }
    var /= static_cast<double>(n);
    const double unbias = n > 1 ? static_cast<double>(n) / (n - 1) : 1.0;
    for (int ch = 0; ch < c; ++ch) {
      bn.running_mean(0, ch) = static_cast<T>((1.0 - BatchNorm<T>::kMomentum) * bn.running_mean(0, ch) +
                                              BatchNorm<T>::kMomentum * mean[ch]);
      bn.running_var(0, ch) = static_cast<T>((1.0 - BatchNorm<T>::kMomentum) * bn.running_var(0, ch) +
                                             BatchNorm<T>::kMomentum * var[ch] * unbias);
    }
  } else {
    mean = bn.running_mean.template cast<double>();
    var = bn.running_var.template cast<double>();
  }
  Eigen::RowVectorXd inv_std(c);
  for (int ch = 0; ch < c; ++ch) inv_std[ch] = 1.0 / std::sqrt(var[ch] + BatchNorm<T>::kEpsilon);

  auto x_hat = std::make_shared<Matrix<T>>(n, c);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (int ch = 0; ch < c; ++ch) {
      const double xh = (static_cast<double>(x.features(r, ch)) - mean[ch]) * inv_std[ch];
      (*x_hat)(r, ch) = static_cast<T>(xh);
      y.features(r, ch) = static_cast<T>(static_cast<double>(bn.gamma.value(0, ch)) * xh +
                                         static_cast<double>(bn.beta.value(0, ch)));
    }
  }
  if (tape == nullptr) return y;
  y.node = tape->NewNode(n, c);
  tape->Record([x_hat, inv_std, training, in_node = x.node, out_node = y.node, &bn](Tape<T>& t) {
    const Matrix<T>* g = t.GradIfAny(out_node);
    if (g == nullptr) return;
    EnsureGrad(bn.gamma);
    EnsureGrad(bn.beta);
    const Eigen::Index rows = g->rows();
    const int c = bn.channels;
    Eigen::RowVectorXd sum_g = Eigen::RowVectorXd::Zero(c);
    Eigen::RowVectorXd sum_gx = Eigen::RowVectorXd::Zero(c);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (int ch = 0; ch < c; ++ch) {
        sum_g[ch] += (*g)(r, ch);
        sum_gx[ch] += static_cast<double>((*g)(r, ch)) * (*x_hat)(r, ch);
      }
    }
    for (int ch = 0; ch < c; ++ch) {
      bn.beta.grad(0, ch) += static_cast<T>(sum_g[ch]);
      bn.gamma.grad(0, ch) += static_cast<T>(sum_gx[ch]);
    }
    if (in_node < 0) return;
    Matrix<T>& dx = t.Grad(in_node);
    const double inv_n = 1.0 / static_cast<double>(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (int ch = 0; ch < c; ++ch) {
        const double scale = static_cast<double>(bn.gamma.value(0, ch)) * inv_std[ch];
        double d = (*g)(r, ch);
        if (training) d -= inv_n * (sum_g[ch] + (*x_hat)(r, ch) * sum_gx[ch]);
        dx(r, ch) += static_cast<T>(scale * d);
      }
    }
  });
  return y;
}

template <typename T>
SparseTensor<T> relu(const SparseTensor<T>& x, Tape<T>* tape) {
  SparseTensor<T> y;
  y.stride = x.stride;
  y.grid = x.grid;
  y.coords = x.coords;
  y.features = x.features.cwiseMax(T(0));
  if (tape == nullptr || x.node < 0) return y;
  y.node = tape->NewNode(y.features.rows(), y.features.cols());
  tape->Record([in = x.features, in_node = x.node, out_node = y.node](Tape<T>& t) {
    const Matrix<T>* g = t.GradIfAny(out_node);
    if (g == nullptr) return;
    t.Grad(in_node).array() += (in.array() > T(0)).select(g->array(), T(0));
  });
  return y;
}

#define VOXMAE_INSTANTIATE_NN(T)                                                                 \
  template class Tape<T>;                                                                        \
  template SparseTensor<T> make_input(const GridConfig&, const Stride&, std::vector<VoxelCoord>, \
                                      Matrix<T>, Tape<T>*);                                      \
  template ConvParams<T> make_conv(const std::string&, KernelSize, Stride, int, int,             \
                                   std::mt19937_64&);                                            \
  template SparseTensor<T> submanifold_conv(const SparseTensor<T>&, ConvParams<T>&, Tape<T>*);   \
  template SparseTensor<T> strided_sparse_conv(const SparseTensor<T>&, ConvParams<T>&,           \
                                               Tape<T>*);                                        \
  template SparseTensor<T> generative_transposed_conv(const SparseTensor<T>&, ConvParams<T>&,    \
                                                      Tape<T>*);                                 \
  template SparseTensor<T> prune(const SparseTensor<T>&, const std::vector<bool>&, Tape<T>*);    \
  template SparseTensor<T> occupancy_head(const SparseTensor<T>&, ConvParams<T>&, Tape<T>*);     \
  template BatchNorm<T> make_batch_norm(const std::string&, int);                                \
  template SparseTensor<T> batch_norm(const SparseTensor<T>&, BatchNorm<T>&, bool, Tape<T>*);    \
  template SparseTensor<T> relu(const SparseTensor<T>&, Tape<T>*);

VOXMAE_INSTANTIATE_NN(float)
VOXMAE_INSTANTIATE_NN(double)

#undef VOXMAE_INSTANTIATE_NN

}  // namespace voxmae::nn

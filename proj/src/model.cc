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

#include "voxmae/model.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace voxmae {
namespace {

constexpr nn::KernelSize kSubmanifoldKernel = {3, 3, 3};

void CheckStrideStep(const Stride& s) {
  for (int k = 0; k < 3; ++k) {
    if (s[k] != 1 && s[k] != 2) {
      throw ConfigError("encoder stride components must be 1 or 2, got " + s.ToString());
    }
  }
}

void CheckKernel(const nn::KernelSize& k) {
  for (int v : k) {
    if (v < 1) throw ConfigError("kernel sizes must be positive");
  }
}

// Uniform k-subset of [0, n) in ascending order (partial Fisher-Yates).
std::vector<size_t> RandomSubset(size_t n, size_t k, std::mt19937_64& rng) {
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t{0});
  if (k >= n) return idx;
  for (size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

Stride EncoderConfig::CumulativeStride() const {
  Stride s = Stride::Unit();
  for (const Stride& step : strides) s = s * step;
  return s;
}

void EncoderConfig::Validate() const {
  if (channels.empty()) throw ConfigError("encoder needs at least one stage");
  if (strides.size() != channels.size() || kernels.size() != channels.size()) {
    throw ConfigError("encoder channels, strides and kernels must have equal length");
  }
  for (size_t i = 0; i < channels.size(); ++i) {
    if (channels[i] < 1) throw ConfigError("encoder channels must be positive");
    CheckStrideStep(strides[i]);
    CheckKernel(kernels[i]);
  }
}

std::vector<Stride> DecoderConfig::SupervisionStrides(const Stride& bottleneck) const {
  std::vector<Stride> out;
  Stride s = bottleneck;
  for (const DecoderBlockConfig& b : blocks) {
    s = s / b.stride;
    out.push_back(s);
  }
  return out;
}

void DecoderConfig::Validate(const Stride& bottleneck) const {
  if (blocks.empty()) throw ConfigError("decoder needs at least one block");
  for (const DecoderBlockConfig& b : blocks) {
    if (b.channels < 1) throw ConfigError("decoder channels must be positive");
    ValidateStride(b.stride);
    CheckKernel(b.kernel);
  }
  if (!(prune_threshold >= 0.0 && prune_threshold <= 1.0)) {
    throw ConfigError("prune_threshold must lie in [0, 1]");
  }
  const auto strides = SupervisionStrides(bottleneck);
  if (strides.back() != Stride::Unit()) {
    throw ConfigError("decoder strides end at " + strides.back().ToString() +
                      " instead of 1x1x1 (bottleneck " + bottleneck.ToString() + ")");
  }
}

void SafetyLimits::Validate() const {
  if (max_voxels == 0) throw ConfigError("max_voxels must be positive");
  if (!(ground_margin >= 0.0)) throw ConfigError("ground_margin must be non-negative");
}

void ModelConfig::Validate() const {
  encoder.Validate();
  decoder.Validate(encoder.CumulativeStride());
}

std::string ModelConfig::Describe() const {
  std::ostringstream os;
  auto kernel = [&](const nn::KernelSize& k) { os << k[0] << 'x' << k[1] << 'x' << k[2]; };
  os << "encoder(in=" << encoder.InputChannels();
  for (size_t i = 0; i < encoder.channels.size(); ++i) {
    os << ";" << encoder.channels[i] << "/";
    kernel(encoder.kernels[i]);
    os << "/" << encoder.strides[i].ToString();
  }
  os << ")decoder(";
  for (const DecoderBlockConfig& b : decoder.blocks) {
    os << b.channels << "/";
    kernel(b.kernel);
    os << "/" << b.stride.ToString() << ";";
  }
  os << ")";
  return os.str();
}

uint64_t ModelConfig::Digest() const {
  uint64_t h = 14695981039346656037ull;
  for (unsigned char c : Describe()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

template <typename T>
Model<T>::Model(const ModelConfig& config, uint64_t seed) : config_(config) {
  config_.Validate();
  std::mt19937_64 rng(seed);
  const EncoderConfig& enc = config_.encoder;
  int in = enc.InputChannels();
  for (size_t i = 0; i < enc.channels.size(); ++i) {
    const std::string p = "encoder." + std::to_string(i);
    const int c = enc.channels[i];
    EncoderStage<T> s;
    s.conv = nn::make_conv<T>(p + ".conv", kSubmanifoldKernel, Stride::Unit(), in, c, rng);
    s.bn1 = nn::make_batch_norm<T>(p + ".bn1", c);
    s.down = nn::make_conv<T>(p + ".down", enc.kernels[i], enc.strides[i], c, c, rng);
    s.bn2 = nn::make_batch_norm<T>(p + ".bn2", c);
    encoder.push_back(std::move(s));
    in = c;
  }
  for (size_t j = 0; j < config_.decoder.blocks.size(); ++j) {
    const DecoderBlockConfig& b = config_.decoder.blocks[j];
    const std::string p = "decoder." + std::to_string(j);
    DecoderBlock<T> d;
    d.up = nn::make_conv<T>(p + ".up", b.kernel, b.stride, in, b.channels, rng);
    d.bn1 = nn::make_batch_norm<T>(p + ".bn1", b.channels);
    d.conv = nn::make_conv<T>(p + ".conv", kSubmanifoldKernel, Stride::Unit(), b.channels,
                              b.channels, rng);
    d.bn2 = nn::make_batch_norm<T>(p + ".bn2", b.channels);
    d.head = nn::make_conv<T>(p + ".head", {1, 1, 1}, Stride::Unit(), b.channels, 1, rng);
    decoder.push_back(std::move(d));
    in = b.channels;
  }
}

template <typename T>
std::vector<nn::Parameter<T>*> Model<T>::Parameters() {
  std::vector<nn::Parameter<T>*> out;
  auto conv = [&](nn::ConvParams<T>& c) {
    out.push_back(&c.weight);
    out.push_back(&c.bias);
  };
  auto bn = [&](nn::BatchNorm<T>& b) {
    out.push_back(&b.gamma);
    out.push_back(&b.beta);
  };
  for (auto& s : encoder) {
    conv(s.conv);
    bn(s.bn1);
    conv(s.down);
    bn(s.bn2);
  }
  for (auto& d : decoder) {
    conv(d.up);
    bn(d.bn1);
    conv(d.conv);
    bn(d.bn2);
    conv(d.head);
  }
  return out;
}

template <typename T>
std::vector<std::pair<std::string, nn::Matrix<T>*>> Model<T>::Buffers() {
  std::vector<std::pair<std::string, nn::Matrix<T>*>> out;
  auto bn = [&](nn::BatchNorm<T>& b) {
    const std::string base = b.gamma.name.substr(0, b.gamma.name.size() - std::string(".gamma").size());
    out.emplace_back(base + ".running_mean", &b.running_mean);
    out.emplace_back(base + ".running_var", &b.running_var);
  };
  for (auto& s : encoder) {
    bn(s.bn1);
    bn(s.bn2);
  }
  for (auto& d : decoder) {
    bn(d.bn1);
    bn(d.bn2);
  }
  return out;
}

template <typename T>
void Model<T>::ZeroGrad() {
  for (auto* p : Parameters()) p->ZeroGrad();
}

Voxelization voxelize(const LidarFrame& frame, const GridConfig& grid) {
  std::map<VoxelCoord, std::pair<Vec3, int>> acc;
  for (const LidarPoint& p : frame.points) {
    const auto v = world_to_voxel(p.position, grid);
    if (!v) continue;
    auto& [sum, count] = acc.try_emplace(*v, Vec3::Zero(), 0).first->second;
    sum += p.position;
    ++count;
  }
  Voxelization out;
  out.coords.reserve(acc.size());
  out.offsets.reserve(acc.size());
  for (const auto& [v, sc] : acc) {
    out.coords.push_back(v);
    const Vec3 mean = sc.first / sc.second;
    out.offsets.push_back((mean - voxel_center(v, grid)).cwiseQuotient(grid.voxel_size));
  }
  return out;
}

std::vector<size_t> voxel_mask_indices(size_t n, double keep_fraction, std::mt19937_64& rng) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
    throw ConfigError("keep_fraction must lie in (0, 1]");
  }
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t{0});
  const size_t k = static_cast<size_t>(std::llround(keep_fraction * static_cast<double>(n)));
  return RandomSubset(n, k, rng);
}

std::vector<VoxelCoord> voxel_mask(const std::vector<VoxelCoord>& occupied, double keep_fraction,
                                   std::mt19937_64& rng) {
  std::vector<VoxelCoord> out;
  for (size_t i : voxel_mask_indices(occupied.size(), keep_fraction, rng)) {
    out.push_back(occupied[i]);
  }
  return out;
}

template <typename T>
nn::SparseTensor<T> encoder_input(const Voxelization& vox, const std::vector<size_t>& selected,
                                  const GridConfig& grid, const EncoderConfig& config,
                                  nn::Tape<T>* tape) {
  std::vector<VoxelCoord> coords;
  coords.reserve(selected.size());
  nn::Matrix<T> f(static_cast<Eigen::Index>(selected.size()), config.InputChannels());
  for (size_t r = 0; r < selected.size(); ++r) {
    const size_t i = selected[r];
    coords.push_back(vox.coords.at(i));
    f(r, 0) = T(1);
    if (config.centroid_offsets) {
      for (int k = 0; k < 3; ++k) f(r, 1 + k) = static_cast<T>(vox.offsets[i][k]);
    }
  }
  return nn::make_input<T>(grid, Stride::Unit(), std::move(coords), std::move(f), tape);
}

template <typename T>
nn::SparseTensor<T> encode(Model<T>& model, const nn::SparseTensor<T>& input, Mode mode,
                           nn::Tape<T>* tape) {
  if (input.empty()) throw std::invalid_argument("encode: empty input");
  const bool train = mode == Mode::kTrain;
  nn::SparseTensor<T> x = input;
  for (EncoderStage<T>& s : model.encoder) {
    x = nn::relu(nn::batch_norm(nn::submanifold_conv(x, s.conv, tape), s.bn1, train, tape), tape);
    x = nn::relu(nn::batch_norm(nn::strided_sparse_conv(x, s.down, tape), s.bn2, train, tape),
                 tape);
  }
  return x;
}

template <typename T>
size_t DecodeRecord<T>::num_kept() const {
  return static_cast<size_t>(std::count(kept.begin(), kept.end(), true));
}

template <typename T>
std::vector<VoxelCoord> DecodeOutput<T>::FinalCoords() const {
  std::vector<VoxelCoord> out;
  if (records.empty()) return out;
  const DecodeRecord<T>& last = records.back();
  for (size_t i = 0; i < last.kept.size(); ++i) {
    if (last.kept[i]) out.push_back((*last.coords)[i]);
  }
  return out;
}

template <typename T>
DecodeOutput<T> decode(Model<T>& model, const nn::SparseTensor<T>& bottleneck,
                       const SafetyLimits& limits, Mode mode, std::mt19937_64& rng,
                       nn::Tape<T>* tape) {
  limits.Validate();
  const DecoderConfig& cfg = model.config().decoder;
  const Stride expected = model.config().encoder.CumulativeStride();
  if (bottleneck.stride != expected) {
    throw ConfigError("decode: bottleneck stride " + bottleneck.stride.ToString() +
                      " does not match " + expected.ToString());
  }
  const auto strides = cfg.SupervisionStrides(bottleneck.stride);
  const bool train = mode == Mode::kTrain;

  DecodeOutput<T> out;
  nn::SparseTensor<T> x = bottleneck;
  auto check_budget = [&](size_t n, const char* where) {
    out.peak_active = std::max(out.peak_active, n);
    if (n > limits.max_voxels) {
      throw BudgetError(std::string("voxel budget exceeded ") + where + ": " + std::to_string(n) +
                        " > " + std::to_string(limits.max_voxels));
    }
  };
  check_budget(x.size(), "at the bottleneck");

  for (size_t j = 0; j < model.decoder.size(); ++j) {
    DecoderBlock<T>& block = model.decoder[j];
    DecodeRecord<T> rec;
    rec.stride = strides[j];
    if (x.empty()) {
      rec.coords = std::make_shared<nn::CoordSet>();
      rec.logits.resize(0, 1);
      out.records.push_back(std::move(rec));
      continue;
    }

    const int kvol = block.up.KernelVolume();
    if (nn::worst_case_children(x.size(), block.up.kernel) > limits.max_voxels) {
      const size_t allowed = limits.max_voxels / static_cast<size_t>(kvol);
      std::vector<bool> keep(x.size(), false);
      for (size_t i : RandomSubset(x.size(), allowed, rng)) keep[i] = true;
      rec.randomly_pruned_parents = x.size() - allowed;
      x = nn::prune(x, keep, tape);
    }

    nn::SparseTensor<T> h;
    if (x.empty()) {
      rec.coords = std::make_shared<nn::CoordSet>();
      rec.logits.resize(0, 1);
      out.records.push_back(std::move(rec));
      continue;
    }
    h = nn::generative_transposed_conv(x, block.up, tape);
    check_budget(h.size(), ("after upsampling to " + strides[j].ToString()).c_str());
    h = nn::relu(nn::batch_norm(h, block.bn1, train, tape), tape);
    h = nn::relu(nn::batch_norm(nn::submanifold_conv(h, block.conv, tape), block.bn2, train, tape),
                 tape);
    const nn::SparseTensor<T> logits = nn::occupancy_head(h, block.head, tape);

    rec.coords = h.coords;
    rec.logits = logits.features;
    rec.logit_node = logits.node;
    rec.kept.assign(h.size(), true);
    for (size_t i = 0; i < h.size(); ++i) {
      if (limits.ground_plane_z) {
        const double z = voxel_center((*h.coords)[i], h.grid, h.stride).z();
        if (z < *limits.ground_plane_z - limits.ground_margin) {
          rec.kept[i] = false;
          continue;
        }
      }
      const double prob = nn::sigmoid(static_cast<double>(logits.features(i, 0)));
      if (prob < cfg.prune_threshold) rec.kept[i] = false;
    }
    x = nn::prune(h, rec.kept, tape);
    out.records.push_back(std::move(rec));
  }
  return out;
}

std::optional<double> estimate_ground_z(const LidarFrame& frame) {
  if (frame.points.empty()) return std::nullopt;
  std::vector<double> z;
  z.reserve(frame.points.size());
  for (const LidarPoint& p : frame.points) z.push_back(p.position.z());
  const size_t k = static_cast<size_t>(std::floor(0.01 * static_cast<double>(z.size() - 1)));
  std::nth_element(z.begin(), z.begin() + static_cast<std::ptrdiff_t>(k), z.end());
  return z[k];
}

template <typename T>
std::vector<VoxelCoord> reconstruct(Model<T>& model, const LidarFrame& frame,
                                    const GridConfig& grid, const ReconstructOptions& options) {
  const Voxelization vox = voxelize(frame, grid);
  if (vox.coords.empty()) return {};
  std::mt19937_64 rng(options.seed);
  const auto selected = voxel_mask_indices(vox.coords.size(), options.keep_fraction, rng);
  if (selected.empty()) return {};
  const auto input =
      encoder_input<T>(vox, selected, grid, model.config().encoder, static_cast<nn::Tape<T>*>(nullptr));
  const auto bottleneck = encode(model, input, Mode::kInfer, static_cast<nn::Tape<T>*>(nullptr));
  return decode(model, bottleneck, options.limits, Mode::kInfer, rng,
                static_cast<nn::Tape<T>*>(nullptr))
      .FinalCoords();
}

#define VOXMAE_INSTANTIATE_MODEL(T)                                                              \
  template class Model<T>;                                                                       \
  template struct DecodeRecord<T>;                                                               \
  template struct DecodeOutput<T>;                                                               \
  template nn::SparseTensor<T> encoder_input(const Voxelization&, const std::vector<size_t>&,    \
                                             const GridConfig&, const EncoderConfig&,            \
                                             nn::Tape<T>*);                                      \
  template nn::SparseTensor<T> encode(Model<T>&, const nn::SparseTensor<T>&, Mode, nn::Tape<T>*); \
  template DecodeOutput<T> decode(Model<T>&, const nn::SparseTensor<T>&, const SafetyLimits&,    \
                                  Mode, std::mt19937_64&, nn::Tape<T>*);                         \
  template std::vector<VoxelCoord> reconstruct(Model<T>&, const LidarFrame&, const GridConfig&,  \
                                               const ReconstructOptions&);

VOXMAE_INSTANTIATE_MODEL(float)
VOXMAE_INSTANTIATE_MODEL(double)

}  // namespace voxmae

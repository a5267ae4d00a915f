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

#ifndef VOXMAE_TESTS_NN_ORACLES_H_
#define VOXMAE_TESTS_NN_ORACLES_H_

// Dense reference evaluations of the sparse convolution operators.

#include <random>
#include <vector>

#include "oracles.h"
#include "voxmae/sparsenn.h"

namespace voxmae::oracle {

using nn::ConvParams;
using nn::KernelOffsetLow;
using nn::SparseTensor;
using nn::Tape;

inline GridConfig CubeGrid(int n) {
  GridConfig g;
  g.extent = {n, n, n};
  return g;
}

// Random active subset of an n^3 grid with random features.
inline SparseTensor<double> RandomInput(std::mt19937_64& rng, const GridConfig& g, const Stride& stride,
                                 int channels, double density, Tape<double>* tape = nullptr) {
  std::bernoulli_distribution active(density);
  std::normal_distribution<double> feat(0.0, 1.0);
  const auto ext = g.ExtentAt(stride);
  std::vector<VoxelCoord> coords;
  for (int x = 0; x < ext[0]; ++x) {
    for (int y = 0; y < ext[1]; ++y) {
      for (int z = 0; z < ext[2]; ++z) {
        if (active(rng)) coords.push_back({x, y, z});
      }
    }
  }
  if (coords.empty()) coords.push_back({0, 0, 0});
  nn::Matrix<double> f(static_cast<Eigen::Index>(coords.size()), channels);
  for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = feat(rng);
  return nn::make_input<double>(g, stride, std::move(coords), std::move(f), tape);
}

inline DenseVolume Densify(const SparseTensor<double>& x) {
  DenseVolume v(x.grid.ExtentAt(x.stride), x.channels());
  for (size_t i = 0; i < x.size(); ++i) {
    const VoxelCoord& c = (*x.coords)[i];
    for (int ch = 0; ch < x.channels(); ++ch) v.at(c.ix, c.iy, c.iz, ch) = x.features(i, ch);
  }
  return v;
}

// Weight of tap (ox, oy, oz) given as offsets from the low corner.
inline double Tap(const ConvParams<double>& p, int ox, int oy, int oz, int cin, int cout) {
  const int k = (ox * p.kernel[1] + oy) * p.kernel[2] + oz;
  return p.weight.value(k * p.in_channels + cin, cout);
}

// out[o] = b + sum_off W[off] x[stride * o + off], evaluated densely.
inline std::vector<double> DenseConvAt(const DenseVolume& in, const ConvParams<double>& p,
                                const VoxelCoord& o, const Stride& s) {
  std::vector<double> out(p.out_channels);
  for (int co = 0; co < p.out_channels; ++co) {
    double acc = p.bias.value(0, co);
    for (int ox = 0; ox < p.kernel[0]; ++ox) {
      for (int oy = 0; oy < p.kernel[1]; ++oy) {
        for (int oz = 0; oz < p.kernel[2]; ++oz) {
          const int x = o.ix * s.x + ox + KernelOffsetLow(p.kernel[0]);
          const int y = o.iy * s.y + oy + KernelOffsetLow(p.kernel[1]);
          const int z = o.iz * s.z + oz + KernelOffsetLow(p.kernel[2]);
          for (int ci = 0; ci < p.in_channels; ++ci) {
            acc += Tap(p, ox, oy, oz, ci, co) * in.get(x, y, z, ci);
          }
        }
      }
    }
    out[co] = acc;
  }
  return out;
}

inline void RandomizeBias(ConvParams<double>& p, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 0.5);
  for (int c = 0; c < p.out_channels; ++c) p.bias.value(0, c) = n(rng);
}

// out[c] = b + sum over active parents p and taps off with s * p + off == c
// of W[off]^T x[p], evaluated densely.
inline std::vector<double> DenseTransposedAt(const DenseVolume& in, const ConvParams<double>& p,
                                             const VoxelCoord& c, const Stride& s) {
  std::vector<double> out(p.out_channels);
  for (int co = 0; co < p.out_channels; ++co) {
    double acc = p.bias.value(0, co);
    for (int px = 0; px < in.dims[0]; ++px) {
      for (int py = 0; py < in.dims[1]; ++py) {
        for (int pz = 0; pz < in.dims[2]; ++pz) {
          const int ox = c.ix - px * s.x - KernelOffsetLow(p.kernel[0]);
          const int oy = c.iy - py * s.y - KernelOffsetLow(p.kernel[1]);
          const int oz = c.iz - pz * s.z - KernelOffsetLow(p.kernel[2]);
          if (ox < 0 || oy < 0 || oz < 0 || ox >= p.kernel[0] || oy >= p.kernel[1] ||
              oz >= p.kernel[2]) {
            continue;
          }
          for (int ci = 0; ci < p.in_channels; ++ci) {
            acc += Tap(p, ox, oy, oz, ci, co) * in.get(px, py, pz, ci);
          }
        }
      }
    }
    out[co] = acc;
  }
  return out;
}

}  // namespace voxmae::oracle

#endif  // VOXMAE_TESTS_NN_ORACLES_H_

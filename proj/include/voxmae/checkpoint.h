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

#ifndef VOXMAE_CHECKPOINT_H_
#define VOXMAE_CHECKPOINT_H_

#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "voxmae/binary_io.h"
#include "voxmae/model.h"
#include "voxmae/training.h"

namespace voxmae {

inline constexpr uint16_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  std::vector<uint32_t> dims;
  std::vector<float> data;
};

struct ModelCheckpoint {
  uint64_t config_digest = 0;
  // Parameters followed by batch-norm running statistics.
  std::vector<NamedTensor> tensors;
  // Adam first and second moments, named "adam.m/<param>" and "adam.v/<param>".
  std::vector<NamedTensor> moments;
  uint64_t schedule_step = 0;
  uint64_t seed = 0;
};

// A checkpoint whose tensors do not fit the model it is loaded into.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_checkpoint(std::ostream& out, const ModelCheckpoint& ckpt);
// Reads the whole file before returning; throws FormatError naming the field.
ModelCheckpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& ckpt);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

template <typename T>
ModelCheckpoint capture_checkpoint(Model<T>& model, const AdamState<T>* optimizer,
                                   uint64_t schedule_step, uint64_t seed);

// Copies every tensor into `model` (and the moments into `optimizer` when
// given). Validates all names and shapes before modifying anything.
template <typename T>
void restore_checkpoint(const ModelCheckpoint& ckpt, Model<T>& model, AdamState<T>* optimizer);

ModelCheckpoint capture_checkpoint(Trainer& trainer);
void restore_checkpoint(const ModelCheckpoint& ckpt, Trainer& trainer);

}  // namespace voxmae

#endif  // VOXMAE_CHECKPOINT_H_

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

#include "voxmae/checkpoint.h"

#include <fstream>
#include <map>

namespace voxmae {
namespace {

constexpr char kMagic[5] = "VCKP";
constexpr uint32_t kMaxNameLength = 4096;
constexpr uint32_t kMaxRank = 8;
constexpr uint64_t kMaxElements = uint64_t{1} << 30;

template <typename T>
NamedTensor ToTensor(const std::string& name, const nn::Matrix<T>& m) {
  NamedTensor t;
  t.name = name;
  t.dims = {static_cast<uint32_t>(m.rows()), static_cast<uint32_t>(m.cols())};
  t.data.resize(static_cast<size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) t.data[i] = static_cast<float>(m.data()[i]);
  return t;
}

void WriteTensors(BinaryWriter& w, const std::vector<NamedTensor>& tensors) {
  w.Write<uint32_t>(static_cast<uint32_t>(tensors.size()));
  for (const NamedTensor& t : tensors) {
    w.Write<uint32_t>(static_cast<uint32_t>(t.name.size()));
    w.WriteBytes(t.name.data(), t.name.size());
    w.Write<uint32_t>(static_cast<uint32_t>(t.dims.size()));
    for (uint32_t d : t.dims) w.Write<uint32_t>(d);
    w.WriteBytes(t.data.data(), t.data.size() * sizeof(float));
  }
}

std::vector<NamedTensor> ReadTensors(BinaryReader& r, const char* what) {
  const auto count = r.Read<uint32_t>(what);
  std::vector<NamedTensor> out;
  for (uint32_t k = 0; k < count; ++k) {
    NamedTensor t;
    const auto len = r.Read<uint32_t>("name length");
    if (len == 0 || len > kMaxNameLength) r.Fail("name length", std::to_string(len));
    t.name.resize(len);
    r.ReadBytes(t.name.data(), len, "name");
    const auto rank = r.Read<uint32_t>("rank");
    if (rank > kMaxRank) r.Fail("rank", std::to_string(rank) + " for tensor " + t.name);
    uint64_t elements = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      t.dims.push_back(r.Read<uint32_t>("dims"));
      elements *= t.dims.back();
      if (elements > kMaxElements) r.Fail("dims", "tensor " + t.name + " is too large");
    }
    t.data.resize(elements);
    r.ReadBytes(t.data.data(), elements * sizeof(float), "data");
    out.push_back(std::move(t));
  }
  return out;
}

const NamedTensor& Find(const std::map<std::string, const NamedTensor*>& index,
                        const std::string& name) {
  const auto it = index.find(name);
  if (it == index.end()) throw ShapeError("checkpoint has no tensor '" + name + "'");
  return *it->second;
}

template <typename T>
void CheckShape(const NamedTensor& t, const nn::Matrix<T>& m) {
  const std::vector<uint32_t> want = {static_cast<uint32_t>(m.rows()),
                                      static_cast<uint32_t>(m.cols())};
  if (t.dims != want) {
    auto fmt = [](const std::vector<uint32_t>& d) {
      std::string s;
      for (size_t i = 0; i < d.size(); ++i) s += (i ? "x" : "") + std::to_string(d[i]);
      return s;
    };
    throw ShapeError("shape mismatch for tensor '" + t.name + "': checkpoint " + fmt(t.dims) +
                     ", model " + fmt(want));
  }
}

template <typename T>
void CopyInto(const NamedTensor& t, nn::Matrix<T>& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(t.data[i]);
}

}  // namespace

void write_checkpoint(std::ostream& out, const ModelCheckpoint& ckpt) {
  BinaryWriter w(out);
  w.WriteMagic(kMagic);
  w.Write<uint16_t>(kCheckpointVersion);
  w.Write<uint64_t>(ckpt.config_digest);
  WriteTensors(w, ckpt.tensors);
  WriteTensors(w, ckpt.moments);
  w.Write<uint64_t>(ckpt.schedule_step);
  w.Write<uint64_t>(ckpt.seed);
}

ModelCheckpoint read_checkpoint(std::istream& in) {
  BinaryReader r(in, "VCKP");
  r.ExpectMagic(kMagic);
  r.ExpectVersion(kCheckpointVersion);
  ModelCheckpoint c;
  c.config_digest = r.Read<uint64_t>("config digest");
  c.tensors = ReadTensors(r, "tensor count");
  c.moments = ReadTensors(r, "moment count");
  c.schedule_step = r.Read<uint64_t>("schedule step");
  c.seed = r.Read<uint64_t>("seed");
  if (!r.AtEnd()) r.Fail("trailer", "unexpected bytes after the seed");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_checkpoint(out, ckpt);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_checkpoint(in);
}

template <typename T>
ModelCheckpoint capture_checkpoint(Model<T>& model, const AdamState<T>* optimizer,
                                   uint64_t schedule_step, uint64_t seed) {
  ModelCheckpoint c;
  c.config_digest = model.config().Digest();
  const auto params = model.Parameters();
  for (const auto* p : params) c.tensors.push_back(ToTensor(p->name, p->value));
  for (const auto& [name, m] : model.Buffers()) c.tensors.push_back(ToTensor(name, *m));
  if (optimizer != nullptr && !optimizer->m.empty()) {
    for (size_t k = 0; k < params.size(); ++k) {
      c.moments.push_back(ToTensor("adam.m/" + params[k]->name, optimizer->m[k]));
      c.moments.push_back(ToTensor("adam.v/" + params[k]->name, optimizer->v[k]));
    }
  }
  c.schedule_step = schedule_step;
  c.seed = seed;
  return c;
}

template <typename T>
void restore_checkpoint(const ModelCheckpoint& ckpt, Model<T>& model, AdamState<T>* optimizer) {
  std::map<std::string, const NamedTensor*> index;
  for (const auto& t : ckpt.tensors) index[t.name] = &t;
  for (const auto& t : ckpt.moments) index[t.name] = &t;

  const auto params = model.Parameters();
  const auto buffers = model.Buffers();
  std::vector<std::pair<const NamedTensor*, nn::Matrix<T>*>> plan;
  for (auto* p : params) plan.emplace_back(&Find(index, p->name), &p->value);
  for (const auto& [name, m] : buffers) plan.emplace_back(&Find(index, name), m);
  if (plan.size() != ckpt.tensors.size()) {
    throw ShapeError("checkpoint holds " + std::to_string(ckpt.tensors.size()) +
                     " tensors, model expects " + std::to_string(plan.size()));
  }
  for (const auto& [t, m] : plan) CheckShape(*t, *m);

  AdamState<T> moments;
  const bool with_moments = optimizer != nullptr && !ckpt.moments.empty();
  if (with_moments) {
    for (auto* p : params) {
      const NamedTensor& m = Find(index, "adam.m/" + p->name);
      const NamedTensor& v = Find(index, "adam.v/" + p->name);
      CheckShape(m, p->value);
      CheckShape(v, p->value);
      moments.m.emplace_back(p->value.rows(), p->value.cols());
      moments.v.emplace_back(p->value.rows(), p->value.cols());
      CopyInto(m, moments.m.back());
      CopyInto(v, moments.v.back());
    }
    moments.step = ckpt.schedule_step;
  }

  for (const auto& [t, m] : plan) CopyInto(*t, *m);
  if (optimizer != nullptr) *optimizer = with_moments ? std::move(moments) : AdamState<T>{};
}

ModelCheckpoint capture_checkpoint(Trainer& trainer) {
  return capture_checkpoint(trainer.model(), &trainer.optimizer(), trainer.step(),
                            trainer.config().seed);
}

void restore_checkpoint(const ModelCheckpoint& ckpt, Trainer& trainer) {
  if (ckpt.config_digest != trainer.model().config().Digest()) {
    throw ShapeError("checkpoint config digest does not match the model configuration");
  }
  restore_checkpoint(ckpt, trainer.model(), &trainer.optimizer());
  trainer.set_step(ckpt.schedule_step);
}

template ModelCheckpoint capture_checkpoint(Model<float>&, const AdamState<float>*, uint64_t,
                                            uint64_t);
template ModelCheckpoint capture_checkpoint(Model<double>&, const AdamState<double>*, uint64_t,
                                            uint64_t);
template void restore_checkpoint(const ModelCheckpoint&, Model<float>&, AdamState<float>*);
template void restore_checkpoint(const ModelCheckpoint&, Model<double>&, AdamState<double>*);

}  // namespace voxmae

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

#include "voxmae/config.h"

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "toml.hpp"

namespace voxmae {
namespace {

// Typed access to one TOML table that remembers which keys were read, so
// that leftovers can be reported as unknown.
class Section {
 public:
  Section(const toml::table& table, std::string path) : table_(table), path_(std::move(path)) {}

  std::string Name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  bool Has(const std::string& key) const { return table_.contains(key); }

  const toml::node* Node(const std::string& key) {
    used_.insert(key);
    return table_.get(key);
  }

  std::optional<double> OptReal(const std::string& key) {
    const toml::node* n = Node(key);
    if (!n) return std::nullopt;
    if (auto v = n->value<double>()) return *v;
    throw ConfigError("key '" + Name(key) + "' must be a number");
  }
  double Real(const std::string& key, double fallback) { return OptReal(key).value_or(fallback); }

  std::optional<int64_t> OptInt(const std::string& key) {
    const toml::node* n = Node(key);
    if (!n) return std::nullopt;
    if (n->is_integer()) return n->as_integer()->get();
    throw ConfigError("key '" + Name(key) + "' must be an integer");
  }
  int64_t Int(const std::string& key, int64_t fallback, int64_t min = INT64_MIN) {
    const int64_t v = OptInt(key).value_or(fallback);
    if (v < min) throw ConfigError("key '" + Name(key) + "' must be >= " + std::to_string(min));
    return v;
  }

  bool Bool(const std::string& key, bool fallback) {
    const toml::node* n = Node(key);
    if (!n) return fallback;
    if (n->is_boolean()) return n->as_boolean()->get();
    throw ConfigError("key '" + Name(key) + "' must be a boolean");
  }

  std::optional<std::string> OptString(const std::string& key) {
    const toml::node* n = Node(key);
    if (!n) return std::nullopt;
    if (n->is_string()) return n->as_string()->get();
    throw ConfigError("key '" + Name(key) + "' must be a string");
  }

  std::vector<double> Reals(const std::string& key) {
    const toml::node* n = Node(key);
    std::vector<double> out;
    const toml::array* a = n ? n->as_array() : nullptr;
    if (!a) throw ConfigError("key '" + Name(key) + "' must be an array of numbers");
    for (const toml::node& e : *a) {
      auto v = e.value<double>();
      if (!v) throw ConfigError("key '" + Name(key) + "' must be an array of numbers");
      out.push_back(*v);
    }
    return out;
  }

  std::vector<int> Ints(const std::string& key) {
    const toml::node* n = Node(key);
    std::vector<int> out;
    const toml::array* a = n ? n->as_array() : nullptr;
    if (!a) throw ConfigError("key '" + Name(key) + "' must be an array of integers");
    for (const toml::node& e : *a) {
      if (!e.is_integer()) throw ConfigError("key '" + Name(key) + "' must be an array of integers");
      out.push_back(static_cast<int>(e.as_integer()->get()));
    }
    return out;
  }

  Vec3 Vector(const std::string& key, const Vec3& fallback, bool allow_scalar = false) {
    if (!Has(key)) {
      used_.insert(key);
      return fallback;
    }
    if (allow_scalar && table_.get(key)->is_number()) return Vec3::Constant(*OptReal(key));
    const std::vector<double> v = Reals(key);
    if (v.size() != 3) throw ConfigError("key '" + Name(key) + "' must have 3 components");
    return {v[0], v[1], v[2]};
  }

  std::optional<Section> Table(const std::string& key) {
    const toml::node* n = Node(key);
    if (!n) return std::nullopt;
    if (!n->is_table()) throw ConfigError("key '" + Name(key) + "' must be a table");
    return Section(*n->as_table(), Name(key));
  }

  const toml::array* TableArray(const std::string& key) {
    const toml::node* n = Node(key);
    if (!n) return nullptr;
    const toml::array* a = n->as_array();
    if (!a || !a->is_array_of_tables()) {
      throw ConfigError("key '" + Name(key) + "' must be an array of tables");
    }
    return a;
  }

  void Finish() const {
    for (const auto& [k, v] : table_) {
      const std::string key(k.str());
      if (!used_.count(key)) throw ConfigError("unknown key '" + Name(key) + "'");
    }
  }

 private:
  const toml::table& table_;
  std::string path_;
  std::set<std::string> used_;
};

toml::table Parse(const std::string& text) {
  try {
    return toml::parse(text);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "TOML syntax error at line " << e.source().begin.line << ": " << e.description();
    throw ConfigError(msg.str());
  }
}

std::string ReadText(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

GridConfig ParseGrid(Section s) {
  GridConfig g;
  g.origin = s.Vector("origin", g.origin);
  g.voxel_size = s.Vector("voxel_size", g.voxel_size, true);
  const std::vector<int> e = s.Has("extent") ? s.Ints("extent") : std::vector<int>{1, 1, 1};
  if (e.size() != 3) throw ConfigError("key '" + s.Name("extent") + "' must have 3 components");
  g.extent = {e[0], e[1], e[2]};
  s.Finish();
  g.Validate();
  return g;
}

ModelConfig ParseModel(Section s) {
  ModelConfig m;
  if (s.Has("encoder_channels")) {
    m.encoder.channels = s.Ints("encoder_channels");
    if (m.encoder.channels.size() != m.encoder.strides.size()) {
      throw ConfigError("key '" + s.Name("encoder_channels") + "' must have " +
                        std::to_string(m.encoder.strides.size()) + " entries");
    }
  }
  if (s.Has("decoder_channels")) {
    const std::vector<int> c = s.Ints("decoder_channels");
    if (c.size() != m.decoder.blocks.size()) {
      throw ConfigError("key '" + s.Name("decoder_channels") + "' must have " +
                        std::to_string(m.decoder.blocks.size()) + " entries");
    }
    for (size_t i = 0; i < c.size(); ++i) m.decoder.blocks[i].channels = c[i];
  }
  m.encoder.centroid_offsets = s.Bool("centroid_offsets", m.encoder.centroid_offsets);
  m.decoder.prune_threshold = s.Real("prune_threshold", m.decoder.prune_threshold);
  s.Finish();
  m.Validate();
  return m;
}

SafetyLimits ParseLimits(Section s) {
  SafetyLimits l;
  l.max_voxels = static_cast<size_t>(s.Int("max_voxels", static_cast<int64_t>(l.max_voxels), 1));
  l.ground_plane_z = s.OptReal("ground_plane_z");
  l.ground_margin = s.Real("ground_margin", l.ground_margin);
  s.Finish();
  l.Validate();
  return l;
}

AugmentationConfig ParseAugmentation(Section s) {
  AugmentationConfig a;
  a.enabled = s.Bool("enabled", a.enabled);
  a.flip_probability = s.Real("flip_probability", a.flip_probability);
  a.max_rotation = s.Real("max_rotation", a.max_rotation);
  a.min_scale = s.Real("min_scale", a.min_scale);
  a.max_scale = s.Real("max_scale", a.max_scale);
  s.Finish();
  return a;
}

Box ParseBox(Section s) {
  Box b;
  b.center = s.Vector("center", b.center);
  b.size = s.Vector("size", b.size);
  b.yaw = s.Real("yaw", 0.0);
  s.Finish();
  return b;
}

RandomSceneOptions ParseRandom(Section s) {
  RandomSceneOptions o;
  o.min_boxes = static_cast<int>(s.Int("min_boxes", o.min_boxes, 0));
  o.max_boxes = static_cast<int>(s.Int("max_boxes", o.max_boxes, 0));
  if (o.max_boxes < o.min_boxes) throw ConfigError("key 'random.max_boxes' must be >= min_boxes");
  o.region_lo = s.Vector("region_lo", o.region_lo);
  o.region_hi = s.Vector("region_hi", o.region_hi);
  o.min_size = s.Vector("min_size", o.min_size);
  o.max_size = s.Vector("max_size", o.max_size);
  o.max_yaw = s.Real("max_yaw", o.max_yaw);
  o.keep_clear = s.Vector("keep_clear", o.keep_clear);
  o.keep_clear_radius = s.Real("keep_clear_radius", o.keep_clear_radius);
  s.Finish();
  return o;
}

}  // namespace

Scene SceneSpec::Draw(std::mt19937_64& rng) const {
  return random ? random_scene(*random, rng) : fixed;
}

SceneSpec parse_scene(const std::string& toml_text) {
  const toml::table root = Parse(toml_text);
  Section s(root, "");
  SceneSpec spec;
  spec.fixed.ground_z = s.OptReal("ground_z");
  if (const toml::array* boxes = s.TableArray("box")) {
    for (const toml::node& n : *boxes) spec.fixed.boxes.push_back(ParseBox(Section(*n.as_table(), "box")));
  }
  if (auto r = s.Table("random")) {
    if (!spec.fixed.boxes.empty()) throw ConfigError("key 'random' cannot be combined with [[box]]");
    spec.random = ParseRandom(*r);
    if (!spec.fixed.ground_z) throw ConfigError("key 'ground_z' is required with [random]");
    spec.random->ground_z = *spec.fixed.ground_z;
  }
  s.Finish();
  spec.fixed.Validate();
  return spec;
}

SceneSpec load_scene(const std::filesystem::path& path) { return parse_scene(ReadText(path)); }

std::string scene_to_toml(const Scene& scene) {
  auto vec = [](const Vec3& v) { return toml::array{v.x(), v.y(), v.z()}; };
  toml::table root;
  if (scene.ground_z) root.insert("ground_z", *scene.ground_z);
  toml::array boxes;
  for (const Box& b : scene.boxes) {
    boxes.push_back(toml::table{{"center", vec(b.center)}, {"size", vec(b.size)}, {"yaw", b.yaw}});
  }
  if (!boxes.empty()) root.insert("box", std::move(boxes));
  std::ostringstream out;
  out << root << "\n";
  return out.str();
}

void save_scene(const std::filesystem::path& path, const Scene& scene) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << scene_to_toml(scene);
}

SensorModel parse_sensor(const std::string& toml_text) {
  const toml::table root = Parse(toml_text);
  Section top(root, "");
  auto s = top.Table("sensor");
  if (!s) throw ConfigError("missing table 'sensor'");
  top.Finish();
  const Vec3 position = s->Vector("position", Vec3::Zero());
  const int cols = static_cast<int>(s->Int("cols", 1024, 1));
  const double az0 = s->Real("azimuth_start", 0.0);
  const double fov = s->Real("fov", 2.0 * M_PI);
  const double max_range = s->Real("max_range", 75.0);
  SensorModel m;
  if (s->Has("inclinations")) {
    m = SensorModel::Uniform(position, 1, 0.0, 0.0, cols, az0, fov, max_range);
    m.inclinations = s->Reals("inclinations");
  } else {
    const int rows = static_cast<int>(s->Int("rows", 64, 1));
    const double lo = s->Real("min_inclination", -0.4363);
    const double hi = s->Real("max_inclination", 0.0349);
    m = SensorModel::Uniform(position, rows, lo, hi, cols, az0, fov, max_range);
  }
  m.range_noise_sigma = s->Real("range_noise_sigma", 0.0);
  s->Finish();
  m.Validate();
  return m;
}

SensorModel load_sensor(const std::filesystem::path& path) { return parse_sensor(ReadText(path)); }

RunConfig parse_run_config(const std::string& toml_text, const std::filesystem::path& base_dir) {
  const toml::table root = Parse(toml_text);
  Section s(root, "");
  RunConfig rc;
  TrainConfig& t = rc.train;
  t.seed = static_cast<uint64_t>(s.Int("seed", 0, 0));
  t.num_threads = static_cast<int>(s.Int("threads", 1, 1));
  if (auto d = s.Table("data")) {
    if (auto f = d->OptString("frames")) rc.frames_dir = base_dir / *f;
    d->Finish();
  }
  auto grid = s.Table("grid");
  if (!grid) throw ConfigError("missing table 'grid'");
  t.grid = ParseGrid(*grid);
  if (auto m = s.Table("model")) t.model = ParseModel(*m);
  if (auto l = s.Table("limits")) t.limits = ParseLimits(*l);
  if (auto a = s.Table("augmentation")) t.augmentation = ParseAugmentation(*a);
  if (auto tr = s.Table("train")) {
    t.epochs = static_cast<int>(tr->Int("epochs", t.epochs, 1));
    t.batch_size = static_cast<size_t>(tr->Int("batch_size", static_cast<int64_t>(t.batch_size), 1));
    t.max_lr = tr->Real("max_lr", t.max_lr);
    t.keep_fraction = tr->Real("keep_fraction", t.keep_fraction);
    t.spherical_mask = tr->Bool("spherical_mask", t.spherical_mask);
    rc.checkpoint_every = static_cast<uint64_t>(tr->Int("checkpoint_every", 0, 0));
    tr->Finish();
  }
  if (auto e = s.Table("eval")) {
    rc.eval_keep_fraction = e->Real("keep_fraction", rc.eval_keep_fraction);
    e->Finish();
    if (!(rc.eval_keep_fraction > 0.0 && rc.eval_keep_fraction <= 1.0)) {
      throw ConfigError("key 'eval.keep_fraction' must be in (0, 1]");
    }
  }
  s.Finish();
  t.Validate();
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(ReadText(path), path.parent_path());
}

std::optional<uint64_t> seed_from_env() {
  const char* v = std::getenv("VOXMAE_SEED");
  if (!v) return std::nullopt;
  char* end = nullptr;
  errno = 0;
  const unsigned long long s = std::strtoull(v, &end, 10);
  if (*v == '\0' || *end != '\0' || errno != 0 || *v == '-') {
    throw ConfigError("VOXMAE_SEED must be an unsigned integer");
  }
  return static_cast<uint64_t>(s);
}

}  // namespace voxmae

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

// voxmae command-line tool: simulate, labelgen, pretrain, reconstruct, eval.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "voxmae/binary_io.h"
#include "voxmae/checkpoint.h"
#include "voxmae/config.h"
#include "voxmae/evalsuite.h"
#include "voxmae/export.h"
#include "voxmae/model.h"
#include "voxmae/range_image_io.h"
#include "voxmae/supervision.h"
#include "voxmae/training.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace voxmae {
namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr char kManifest[] = "manifest.json";

struct FrameEntry {
  uint64_t id = 0;
  fs::path range_image;
  std::optional<fs::path> scene;
};

std::string FrameName(uint64_t id, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%06llu%s", static_cast<unsigned long long>(id), ext);
  return buf;
}

void RequireFile(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw ConfigError(what + " '" + p.string() + "' does not exist");
}

void WriteText(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
  out << text;
  if (!out) throw std::runtime_error("failed writing '" + p.string() + "'");
}

// Frames listed in the directory's manifest, or every *.vrim file in name
// order when there is none.
std::vector<FrameEntry> LoadFrameSet(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("frames directory '" + dir.string() + "' does not exist");
  std::vector<FrameEntry> out;
  const fs::path manifest = dir / kManifest;
  if (fs::exists(manifest)) {
    std::ifstream in(manifest);
    json m;
    try {
      m = json::parse(in);
      for (const json& f : m.at("frames")) {
        FrameEntry e;
        e.id = f.at("id").get<uint64_t>();
        e.range_image = dir / f.at("range_image").get<std::string>();
        if (f.contains("scene")) e.scene = dir / f.at("scene").get<std::string>();
        out.push_back(std::move(e));
      }
    } catch (const json::exception& e) {
      throw FormatError("manifest '" + manifest.string() + "': " + e.what());
    }
  } else {
    std::vector<fs::path> files;
    for (const auto& d : fs::directory_iterator(dir)) {
      if (d.path().extension() == ".vrim") files.push_back(d.path());
    }
    std::sort(files.begin(), files.end());
    for (size_t i = 0; i < files.size(); ++i) out.push_back({i, files[i], std::nullopt});
  }
  for (const FrameEntry& e : out) {
    RequireFile(e.range_image, "range image");
    if (e.scene) RequireFile(*e.scene, "scene file");
  }
  return out;
}

std::optional<double> SceneGround(const FrameEntry& e) {
  if (!e.scene) return std::nullopt;
  return load_scene(*e.scene).fixed.ground_z;
}

int DefaultThreads() { return std::max(1u, std::thread::hardware_concurrency()); }

RunConfig LoadRun(const fs::path& path, std::optional<int> threads) {
  RequireFile(path, "config file");
  RunConfig rc = load_run_config(path);
  if (auto s = seed_from_env()) rc.train.seed = *s;
  if (threads) {
    if (*threads < 1) throw ConfigError("--threads must be at least 1");
    rc.train.num_threads = *threads;
  }
  return rc;
}

// Loads the checkpoint into a fresh model, refusing one trained with a
// different architecture.
Model<float> LoadModel(const RunConfig& rc, const std::optional<fs::path>& ckpt_path) {
  Model<float> model(rc.train.model, rc.train.seed);
  if (!ckpt_path) return model;
  RequireFile(*ckpt_path, "checkpoint");
  const ModelCheckpoint ckpt = load_checkpoint(*ckpt_path);
  if (ckpt.config_digest != rc.train.model.Digest()) {
    throw ConfigError("checkpoint '" + ckpt_path->string() +
                      "' was trained with a different model configuration (digest mismatch)");
  }
  restore_checkpoint(ckpt, model, static_cast<AdamState<float>*>(nullptr));
  return model;
}

ReconstructOptions InferenceOptions(const RunConfig& rc, const LidarFrame& frame, uint64_t seed) {
  ReconstructOptions opt;
  opt.keep_fraction = rc.eval_keep_fraction;
  opt.limits = rc.train.limits;
  if (!opt.limits.ground_plane_z) opt.limits.ground_plane_z = estimate_ground_z(frame);
  opt.seed = seed;
  return opt;
}

void SaveAtomically(const fs::path& path, const ModelCheckpoint& ckpt) {
  const fs::path tmp = path.string() + ".tmp";
  save_checkpoint(tmp, ckpt);
  fs::rename(tmp, path);
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  fs::path scene, sensor, out;
  uint64_t frames = 1;
  std::optional<uint64_t> seed;
};

int Simulate(const SimulateArgs& a) {
  RequireFile(a.scene, "scene file");
  RequireFile(a.sensor, "sensor file");
  const SceneSpec spec = load_scene(a.scene);
  const SensorModel sensor = load_sensor(a.sensor);
  uint64_t seed = 0;
  if (auto s = seed_from_env()) seed = *s;
  if (a.seed) seed = *a.seed;
  fs::create_directories(a.out);
  json frames = json::array();
  for (uint64_t i = 0; i < a.frames; ++i) {
    std::mt19937_64 rng = frame_rng(seed, i, 0);
    const Scene scene = spec.Draw(rng);
    const uint64_t noise_seed = rng();
    save_range_image(a.out / FrameName(i, ".vrim"), simulate(scene, sensor, noise_seed));
    save_scene(a.out / FrameName(i, ".toml"), scene);
    frames.push_back({{"id", i},
                      {"range_image", FrameName(i, ".vrim")},
                      {"scene", FrameName(i, ".toml")},
                      {"noise_seed", noise_seed},
                      {"boxes", scene.boxes.size()}});
  }
  const json manifest = {{"format", "voxmae-frames"}, {"version", 1}, {"seed", seed},
                         {"frames", frames}};
  WriteText(a.out / kManifest, manifest.dump(2) + "\n");
  std::cerr << "simulate: wrote " << a.frames << " frames to " << a.out.string() << "\n";
  return 0;
}

struct LabelgenArgs {
  fs::path frames, grid, out;
  std::optional<int> threads;
};

int Labelgen(const LabelgenArgs& a) {
  const RunConfig rc = LoadRun(a.grid, a.threads.value_or(DefaultThreads()));
  const GridConfig& grid = rc.train.grid;
  std::vector<Stride> strides = rc.train.model.decoder.SupervisionStrides(
      rc.train.model.encoder.CumulativeStride());
  const auto entries = LoadFrameSet(a.frames);
  fs::create_directories(a.out);
  CategorizeOptions opt;
  opt.num_threads = rc.train.num_threads;
  for (const FrameEntry& e : entries) {
    const LidarFrame frame = to_points(load_range_image(e.range_image));
    size_t outside = 0;
    for (const LidarPoint& p : frame.points) outside += !world_to_voxel(p.position, grid).has_value();
    if (outside > 0) {
      std::cerr << "warning: " << e.range_image.filename().string() << ": " << outside << " of "
                << frame.points.size() << " points lie outside the grid and were clipped\n";
    }
    const LabelPyramid pyramid = build_pyramid(categorize(frame, grid, opt), grid, strides);
    save_label_pyramid(a.out / FrameName(e.id, ".vlbl"), pyramid);
  }
  std::cerr << "labelgen: wrote " << entries.size() << " label pyramids to " << a.out.string() << "\n";
  return 0;
}

struct PretrainArgs {
  fs::path config, out;
  std::optional<int> threads;
  uint64_t log_every = 10;
};

int Pretrain(const PretrainArgs& a) {
  const RunConfig rc = LoadRun(a.config, a.threads.value_or(DefaultThreads()));
  if (!rc.frames_dir) throw ConfigError("missing key 'data.frames'");
  std::vector<TrainFrame> frames;
  for (const FrameEntry& e : LoadFrameSet(*rc.frames_dir)) {
    frames.push_back({e.id, load_range_image(e.range_image), SceneGround(e)});
  }
  if (frames.empty()) throw ConfigError("no frames in '" + rc.frames_dir->string() + "'");
  Trainer trainer(rc.train, steps_per_epoch(frames.size(), rc.train.batch_size));
  if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
  const uint64_t total = trainer.schedule().total_steps;
  trainer.Fit(frames, [&](const StepResult& r) {
    const uint64_t done = r.step + 1;
    if (a.log_every > 0 && (done % a.log_every == 0 || done == total || r.step == 0)) {
      std::cerr << json{{"step", r.step}, {"lr", r.learning_rate}, {"loss", r.loss},
                        {"skipped", r.skipped}, {"peak_active", r.peak_active}}
                       .dump()
                << "\n";
    }
    if (rc.checkpoint_every > 0 && done % rc.checkpoint_every == 0 && done != total) {
      SaveAtomically(a.out, capture_checkpoint(trainer));
    }
  });
  SaveAtomically(a.out, capture_checkpoint(trainer));
  std::cerr << "pretrain: " << trainer.step() << " steps, checkpoint " << a.out.string() << "\n";
  return 0;
}

struct ReconstructArgs {
  fs::path config, frame, out;
  std::optional<fs::path> ckpt;
  uint64_t seed = 0;
};

int Reconstruct(const ReconstructArgs& a) {
  const RunConfig rc = LoadRun(a.config, std::nullopt);
  RequireFile(a.frame, "range image");
  Model<float> model = LoadModel(rc, a.ckpt);
  const LidarFrame frame = to_points(load_range_image(a.frame));
  const auto voxels = reconstruct(model, frame, rc.train.grid, InferenceOptions(rc, frame, a.seed));
  save_ply(a.out, voxels, rc.train.grid);
  std::cerr << "reconstruct: " << voxels.size() << " voxels written to " << a.out.string() << "\n";
  return 0;
}

struct EvalArgs {
  fs::path config, frames, report;
  std::optional<fs::path> ckpt;
  std::optional<int> threads;
};

int Eval(const EvalArgs& a) {
  const RunConfig rc = LoadRun(a.config, a.threads.value_or(DefaultThreads()));
  Model<float> model = LoadModel(rc, a.ckpt);
  if (!a.ckpt) std::cerr << "warning: no checkpoint given, evaluating an untrained model\n";
  const GridConfig& grid = rc.train.grid;
  CategorizeOptions copt;
  copt.num_threads = rc.train.num_threads;
  json per_frame = json::array();
  std::vector<ReconMetrics> all;
  for (const FrameEntry& e : LoadFrameSet(a.frames)) {
    const LidarFrame frame = to_points(load_range_image(e.range_image));
    const Scene scene = e.scene ? load_scene(*e.scene).fixed : Scene{};
    const LabelPyramid pyramid =
        build_pyramid(categorize(frame, grid, copt), grid, {Stride::Unit()});
    const uint64_t seed = frame_rng(rc.train.seed, e.id, 0)();
    const auto recon = reconstruct(model, frame, grid, InferenceOptions(rc, frame, seed));
    const ReconMetrics m = evaluate_reconstruction(recon, scene, pyramid, grid);
    json j = to_json(m);
    j["frame"] = e.id;
    std::cout << j.dump() << "\n";
    per_frame.push_back(std::move(j));
    all.push_back(m);
  }
  const json report = {{"frames", per_frame}, {"aggregate", to_json(aggregate(all))}};
  if (a.report.has_parent_path()) fs::create_directories(a.report.parent_path());
  WriteText(a.report, report.dump(2) + "\n");
  return 0;
}

int Run(int argc, char** argv) {
  CLI::App app{"voxmae: masked voxel autoencoder pre-training for LiDAR point clouds"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Render synthetic range images of scenes");
  s->add_option("--scene", sim.scene, "Scene TOML file")->required();
  s->add_option("--sensor", sim.sensor, "Sensor TOML file")->required();
  s->add_option("--frames", sim.frames, "Number of frames")->check(CLI::PositiveNumber);
  s->add_option("--seed", sim.seed, "Seed (overrides VOXMAE_SEED)");
  s->add_option("--out", sim.out, "Output directory")->required();

  LabelgenArgs lab;
  auto* l = app.add_subcommand("labelgen", "Categorize frames into label pyramids");
  l->add_option("--frames", lab.frames, "Directory of range images")->required();
  l->add_option("--grid", lab.grid, "Config TOML with [grid] (and optional [model])")->required();
  l->add_option("--out", lab.out, "Output directory")->required();
  l->add_option("--threads", lab.threads, "Worker thread cap");

  PretrainArgs pre;
  auto* p = app.add_subcommand("pretrain", "Pre-train the model on simulated frames");
  p->add_option("--config", pre.config, "Run config TOML")->required();
  p->add_option("--out", pre.out, "Checkpoint path")->required();
  p->add_option("--threads", pre.threads, "Worker thread cap");
  p->add_option("--log-every", pre.log_every, "Log every N steps (0: never)");

  ReconstructArgs rec;
  auto* r = app.add_subcommand("reconstruct", "Reconstruct one frame and export PLY");
  r->add_option("--config", rec.config, "Run config TOML")->required();
  r->add_option("--ckpt", rec.ckpt, "Checkpoint (omit for an untrained model)");
  r->add_option("--frame", rec.frame, "Range image")->required();
  r->add_option("--out", rec.out, "Output PLY path")->required();
  r->add_option("--seed", rec.seed, "Masking seed");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate reconstructions against scene ground truth");
  e->add_option("--config", ev.config, "Run config TOML")->required();
  e->add_option("--ckpt", ev.ckpt, "Checkpoint (omit for an untrained model)");
  e->add_option("--frames", ev.frames, "Directory of frames with manifest")->required();
  e->add_option("--report", ev.report, "Output JSON report")->required();
  e->add_option("--threads", ev.threads, "Worker thread cap");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kExitConfig;
  }
  if (s->parsed()) return Simulate(sim);
  if (l->parsed()) return Labelgen(lab);
  if (p->parsed()) return Pretrain(pre);
  if (r->parsed()) return Reconstruct(rec);
  return Eval(ev);
}

}  // namespace
}  // namespace voxmae

int main(int argc, char** argv) {
  try {
    return voxmae::Run(argc, argv);
  } catch (const voxmae::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return voxmae::kExitConfig;
  } catch (const voxmae::ShapeError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return voxmae::kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return voxmae::kExitRuntime;
  }
}

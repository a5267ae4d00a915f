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

#include "voxmae/range_image_io.h"

#include <fstream>

#include "voxmae/binary_io.h"

namespace voxmae {

void write_range_image(std::ostream& out, const RangeImage& img) {
  BinaryWriter w(out);
  w.WriteMagic("VRIM");
  w.Write<uint16_t>(kRangeImageVersion);
  w.Write<uint32_t>(static_cast<uint32_t>(img.rows()));
  w.Write<uint32_t>(static_cast<uint32_t>(img.cols()));
  for (double incl : img.sensor.inclinations) w.Write<float>(static_cast<float>(incl));
  w.Write<float>(static_cast<float>(img.sensor.azimuth_start));
  w.Write<float>(static_cast<float>(img.sensor.azimuth_step));
  w.Write<float>(static_cast<float>(img.sensor.max_range));
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) w.Write<float>(static_cast<float>(img.sensor.pose.rotation(r, c)));
  }
  for (int a = 0; a < 3; ++a) w.Write<float>(static_cast<float>(img.sensor.pose.translation[a]));
  for (double range : img.ranges) {
    w.Write<float>(range < 0.0 ? static_cast<float>(RangeImage::kNoReturn)
                               : static_cast<float>(range));
  }
}

RangeImage read_range_image(std::istream& in) {
  BinaryReader r(in, "VRIM");
  r.ExpectMagic("VRIM");
  r.ExpectVersion(kRangeImageVersion);
  const auto rows = r.Read<uint32_t>("rows");
  const auto cols = r.Read<uint32_t>("cols");
  if (rows == 0 || rows > (1u << 16)) r.Fail("rows", std::to_string(rows));
  if (cols == 0 || cols > (1u << 20)) r.Fail("cols", std::to_string(cols));
  SensorModel s;
  s.inclinations.resize(rows);
  for (auto& incl : s.inclinations) incl = r.Read<float>("inclinations");
  s.azimuth_start = r.Read<float>("azimuth_start");
  s.azimuth_step = r.Read<float>("azimuth_step");
  s.max_range = r.Read<float>("max_range");
  s.n_cols = static_cast<int>(cols);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) s.pose.rotation(i, j) = r.Read<float>("pose");
  }
  for (int a = 0; a < 3; ++a) s.pose.translation[a] = r.Read<float>("pose");
  try {
    s.Validate();
  } catch (const ConfigError& e) {
    r.Fail("sensor", e.what());
  }
  RangeImage img(std::move(s));
  for (double& range : img.ranges) {
    const float v = r.Read<float>("ranges");
    if (v < 0.0f) {
      range = RangeImage::kNoReturn;
    } else if (v == 0.0f || v > static_cast<float>(img.sensor.max_range)) {
      r.Fail("ranges", "value " + std::to_string(v) + " outside (0, max_range]");
    } else {
      range = v;
    }
  }
  return img;
}

void save_range_image(const std::filesystem::path& path, const RangeImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_range_image(out, img);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

RangeImage load_range_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_range_image(in);
}

}  // namespace voxmae

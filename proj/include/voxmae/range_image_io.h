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

#ifndef VOXMAE_RANGE_IMAGE_IO_H_
#define VOXMAE_RANGE_IMAGE_IO_H_

#include <filesystem>
#include <istream>
#include <ostream>

#include "voxmae/lidar.h"

namespace voxmae {

// "VRIM" little-endian range image. Values are stored as f32, so ranges and
// angles lose precision beyond single precision on a round trip.
inline constexpr uint16_t kRangeImageVersion = 1;

void write_range_image(std::ostream& out, const RangeImage& img);
RangeImage read_range_image(std::istream& in);

void save_range_image(const std::filesystem::path& path, const RangeImage& img);
RangeImage load_range_image(const std::filesystem::path& path);

}  // namespace voxmae

#endif  // VOXMAE_RANGE_IMAGE_IO_H_

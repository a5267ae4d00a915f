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

#ifndef VOXMAE_BINARY_IO_H_
#define VOXMAE_BINARY_IO_H_

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <type_traits>

namespace voxmae {

static_assert(std::endian::native == std::endian::little,
              "binary formats are little-endian; big-endian hosts need byte swapping");

// A file that could be opened but does not follow its declared format.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& out) : out_(out) {}

  template <typename T>
  void Write(T value) {
    static_assert(std::is_arithmetic_v<T>);
    out_.write(reinterpret_cast<const char*>(&value), sizeof(T));
  }
  void WriteBytes(const void* data, size_t size) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  }
  void WriteMagic(const char (&magic)[5]) { WriteBytes(magic, 4); }

 private:
  std::ostream& out_;
};

class BinaryReader {
 public:
  BinaryReader(std::istream& in, std::string format) : in_(in), format_(std::move(format)) {}

  template <typename T>
  T Read(const char* field) {
    static_assert(std::is_arithmetic_v<T>);
    T value;
    ReadBytes(&value, sizeof(T), field);
    return value;
  }
  void ReadBytes(void* data, size_t size, const char* field) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(size));
    if (static_cast<size_t>(in_.gcount()) != size) {
      throw FormatError(format_ + ": truncated file while reading '" + field + "'");
    }
  }
  void ExpectMagic(const char (&magic)[5]) {
    std::array<char, 4> got{};
    ReadBytes(got.data(), 4, "magic");
    if (std::memcmp(got.data(), magic, 4) != 0) {
      throw FormatError(format_ + ": bad 'magic' (expected " + std::string(magic, 4) + ")");
    }
  }
  void ExpectVersion(uint16_t expected) {
    const auto v = Read<uint16_t>("version");
    if (v != expected) {
      throw FormatError(format_ + ": unsupported 'version' " + std::to_string(v) +
                        " (expected " + std::to_string(expected) + ")");
    }
  }
  [[noreturn]] void Fail(const std::string& field, const std::string& what) const {
    throw FormatError(format_ + ": invalid '" + field + "': " + what);
  }
  bool AtEnd() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::istream& in_;
  std::string format_;
};

}  // namespace voxmae

#endif  // VOXMAE_BINARY_IO_H_

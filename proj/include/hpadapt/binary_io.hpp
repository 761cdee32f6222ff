/* Copyright 2026 The hpadapt Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

// Little-endian primitives shared by the corpus and checkpoint formats.
// Reads throw IncompatibleCheckpoint on truncation.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <unistd.h>

#include "hpadapt/errors.hpp"

namespace hpadapt::binary_io {

inline void write_uint(std::ostream& o, std::uint64_t v, int bytes) {
  unsigned char b[8];
  for (int i = 0; i < bytes; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  o.write(reinterpret_cast<const char*>(b), bytes);
}

inline std::uint64_t read_uint(std::istream& in, int bytes) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), bytes);
  if (!in) throw IncompatibleCheckpoint("truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline void write_u64(std::ostream& o, std::uint64_t v) { write_uint(o, v, 8); }
inline std::uint64_t read_u64(std::istream& in) { return read_uint(in, 8); }
inline void write_u32(std::ostream& o, std::uint32_t v) { write_uint(o, v, 4); }
inline std::uint32_t read_u32(std::istream& in) {
  return static_cast<std::uint32_t>(read_uint(in, 4));
}

inline void write_f64(std::ostream& o, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  write_u64(o, v);
}

inline double read_f64(std::istream& in) {
  const std::uint64_t v = read_u64(in);
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}

// u64 length, then raw bytes.
inline void write_string(std::ostream& o, const std::string& s) {
  write_u64(o, s.size());
  o.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in, std::uint64_t limit = std::uint64_t{1} << 32) {
  const auto n = read_u64(in);
  if (n > limit) throw IncompatibleCheckpoint("string length " + std::to_string(n) + " out of range");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw IncompatibleCheckpoint("truncated file");
  return s;
}

// Writes to a sibling temporary and renames it over `path`, so readers see
// either the old file or the complete new one.
inline void atomic_write(const std::filesystem::path& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream o(tmp, std::ios::binary | std::ios::trunc);
    if (!o) throw InvalidArgument("cannot write " + tmp.string());
    o.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    o.flush();
    if (!o) {
      fs::remove(tmp);
      throw InvalidArgument("write failed for " + tmp.string());
    }
  }
  fs::rename(tmp, path);
}

}  // namespace hpadapt::binary_io

// SPDX-License-Identifier: Apache-2.0
#pragma once

// UVGX voxel grid files: "UVGX", u32 version, u32 dims x3, u32 L, f32 origin x3,
// f32 spacing x3, u8 labels (x fastest), u32 name count, (u16 len, bytes)*.

#include <fstream>
#include <sstream>

#include "nff/io/binary.hpp"
#include "nff/scene/voxel_grid.hpp"

namespace nff {

inline constexpr std::uint32_t kUvgxVersion = 1;

inline void write_uvgx(std::ostream& os, const SemanticVoxelGrid& g) {
  g.validate();
  os.write("UVGX", 4);
  io::put<std::uint32_t>(os, kUvgxVersion);
  for (int a = 0; a < 3; ++a) io::put<std::uint32_t>(os, static_cast<std::uint32_t>(g.dims[a]));
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(g.num_labels));
  for (int a = 0; a < 3; ++a) io::put<float>(os, static_cast<float>(g.origin[a]));
  for (int a = 0; a < 3; ++a) io::put<float>(os, static_cast<float>(g.spacing[a]));
  os.write(reinterpret_cast<const char*>(g.labels.data()), static_cast<std::streamsize>(g.labels.size()));
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(g.names.size()));
  for (const auto& n : g.names) {
    if (n.size() > 0xffff) throw DataError("label name too long: " + n.substr(0, 32));
    io::put<std::uint16_t>(os, static_cast<std::uint16_t>(n.size()));
    os.write(n.data(), static_cast<std::streamsize>(n.size()));
  }
}

inline SemanticVoxelGrid read_uvgx(std::istream& is, const std::string& what = "uvgx") {
  io::Reader r(is, what);
  r.expect_magic("UVGX");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kUvgxVersion) throw DataError(what + ": unsupported version " + std::to_string(version));
  SemanticVoxelGrid g;
  std::uint64_t count = 1;
  for (int a = 0; a < 3; ++a) {
    const auto d = r.get<std::uint32_t>("dims");
    if (d == 0 || d > 4096) throw DataError(what + ": invalid grid dimension " + std::to_string(d));
    g.dims[a] = static_cast<int>(d);
    count *= d;
  }
  const auto L = r.get<std::uint32_t>("label count");
  if (L < 1 || L > 256) throw DataError(what + ": label count must be in [1, 256], got " + std::to_string(L));
  g.num_labels = static_cast<int>(L);
  for (int a = 0; a < 3; ++a) g.origin[a] = r.get<float>("origin");
  for (int a = 0; a < 3; ++a) g.spacing[a] = r.get<float>("spacing");
  const std::string raw = r.bytes(count, "labels");
  g.labels.assign(raw.begin(), raw.end());
  const auto names = r.get<std::uint32_t>("name count");
  if (names > 256) throw DataError(what + ": too many label names");
  for (std::uint32_t i = 0; i < names; ++i) {
    const auto len = r.get<std::uint16_t>("name length");
    g.names.push_back(r.bytes(len, "name"));
  }
  try {
    g.validate();
  } catch (const DataError& e) {
    throw DataError(what + ": " + e.what());
  }
  return g;
}

inline void save_uvgx(const std::string& path, const SemanticVoxelGrid& g) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path);
  write_uvgx(os, g);
  if (!os) throw DataError("write failed: " + path);
}

inline SemanticVoxelGrid load_uvgx(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  return read_uvgx(is, path);
}

}  // namespace nff

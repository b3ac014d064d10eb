// SPDX-License-Identifier: Apache-2.0
#pragma once

// Line-oriented scene edit scripts. One command per line; '#' starts a comment.
//
//   relabel FROM TO [X0 Y0 Z0 X1 Y1 Z1]
//   fill X0 Y0 Z0 X1 Y1 Z1 LABEL
//   move X0 Y0 Z0 X1 Y1 Z1 DX DY DZ
//   obj-add PX PY PZ SX SY SZ [YAW_DEG [SEED]]
//   obj-del IDX
//   obj-move IDX DX DY DZ
//   obj-rot IDX AXIS DEG
//   obj-seed IDX SEED
//
// Voxel boxes are half-open index ranges; labels are names or indices.

#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "nff/error.hpp"
#include "nff/scene/scene.hpp"

namespace nff {

namespace detail {

inline double parse_double(const std::string& s) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || !std::isfinite(v)) throw DataError("expected a number, got '" + s + "'");
  return v;
}

inline long long parse_int(const std::string& s) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size()) throw DataError("expected an integer, got '" + s + "'");
  return v;
}

inline std::uint64_t parse_u64(const std::string& s) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    if (!s.empty() && s[0] != '-') v = std::stoull(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw DataError("expected an unsigned integer, got '" + s + "'");
  return v;
}

inline VoxelBox parse_box(const std::vector<std::string>& t, std::size_t at) {
  VoxelBox b;
  for (int a = 0; a < 3; ++a) {
    b.lo[static_cast<std::size_t>(a)] = static_cast<int>(parse_int(t[at + static_cast<std::size_t>(a)]));
    b.hi[static_cast<std::size_t>(a)] = static_cast<int>(parse_int(t[at + 3 + static_cast<std::size_t>(a)]));
  }
  return b;
}

inline void arity(const std::vector<std::string>& t, std::initializer_list<std::size_t> allowed) {
  for (auto n : allowed)
    if (t.size() == n + 1) return;
  throw DataError("wrong number of arguments for '" + t[0] + "'");
}

inline void apply_edit(Scene& s, const std::vector<std::string>& t) {
  const std::string& cmd = t[0];
  if (cmd == "relabel") {
    arity(t, {2, 8});
    std::optional<VoxelBox> region;
    if (t.size() == 9) region = parse_box(t, 3);
    s.grid = edit_relabel(std::move(s.grid), s.grid.label_id(t[1]), s.grid.label_id(t[2]), region);
  } else if (cmd == "fill") {
    arity(t, {7});
    s.grid = edit_occupancy(std::move(s.grid), parse_box(t, 1), s.grid.label_id(t[7]));
  } else if (cmd == "move") {
    arity(t, {9});
    const Index3 off{static_cast<int>(parse_int(t[7])), static_cast<int>(parse_int(t[8])), static_cast<int>(parse_int(t[9]))};
    s.grid = edit_move(std::move(s.grid), parse_box(t, 1), off);
  } else if (cmd == "obj-add") {
    arity(t, {6, 7, 8});
    ObjectBox b;
    b.translation = Vec3(parse_double(t[1]), parse_double(t[2]), parse_double(t[3]));
    b.size = Vec3(parse_double(t[4]), parse_double(t[5]), parse_double(t[6]));
    if (t.size() > 7) b.rotation = axis_rotation(2, parse_double(t[7]));
    b.latent_seed = t.size() > 8 ? parse_u64(t[8]) : derive_seed(s.world_seed, 0x616464, s.layout.slots());
    s.layout.insert(b);
  } else if (cmd == "obj-del") {
    arity(t, {1});
    s.layout.remove(parse_u64(t[1]));
  } else if (cmd == "obj-move") {
    arity(t, {4});
    const auto k = parse_u64(t[1]);
    const Vec3 d(parse_double(t[2]), parse_double(t[3]), parse_double(t[4]));
    s.layout.transform(k, std::nullopt, s.layout.at(k).translation + d, std::nullopt);
  } else if (cmd == "obj-rot") {
    arity(t, {3});
    const auto k = parse_u64(t[1]);
    const std::string& ax = t[2];
    if (ax != "x" && ax != "y" && ax != "z") throw DataError("axis must be x, y or z");
    const Quat q = axis_rotation(ax[0] - 'x', parse_double(t[3])) * s.layout.at(k).rotation;
    s.layout.transform(k, q, std::nullopt, std::nullopt);
  } else if (cmd == "obj-seed") {
    arity(t, {2});
    s.layout.set_seed(parse_u64(t[1]), parse_u64(t[2]));
  } else {
    throw DataError("unknown command '" + cmd + "'");
  }
}

}  // namespace detail

/// Applies the script to a copy of `scene`. The first failing command aborts
/// with a DataError naming its line.
inline Scene apply_edit_script(Scene scene, std::istream& script, const std::string& name = "script") {
  std::string line;
  for (int n = 1; std::getline(script, line); ++n) {
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    std::istringstream ss(line);
    std::vector<std::string> tok;
    for (std::string w; ss >> w;) tok.push_back(w);
    if (tok.empty()) continue;
    try {
      detail::apply_edit(scene, tok);
    } catch (const std::exception& e) {
      throw DataError(name + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return scene;
}

}  // namespace nff

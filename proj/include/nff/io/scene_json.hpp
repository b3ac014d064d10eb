// SPDX-License-Identifier: Apache-2.0
#pragma once

// Scene description files (JSON). Removed objects are written as null so
// object indices stay stable across edits.

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "nff/io/uvgx.hpp"
#include "nff/scene/scene.hpp"

namespace nff {

using nlohmann::json;

namespace detail {

inline json vec_json(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }

inline json quat_json(const Quat& q) {
  const auto w = quat_to_wxyz(q);
  return json::array({w[0], w[1], w[2], w[3]});
}

template <class V>
V field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw DataError(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<V>();
  } catch (const json::exception& e) {
    throw DataError(where + "." + key + ": " + e.what());
  }
}

inline Vec3 vec_field(const json& j, const char* key, const std::string& where) {
  const auto a = field<std::vector<double>>(j, key, where);
  if (a.size() != 3) throw DataError(where + "." + key + ": expected 3 numbers");
  return {a[0], a[1], a[2]};
}

inline Quat quat_field(const json& j, const char* key, const std::string& where) {
  const auto a = field<std::vector<double>>(j, key, where);
  if (a.size() != 4) throw DataError(where + "." + key + ": expected 4 numbers (w, x, y, z)");
  return quat_from_wxyz({a[0], a[1], a[2], a[3]});
}

#define NFF_ARCH_FIELDS(X)                                                                                     \
  X(z_dim) X(feat_dim) X(grid_channels) X(vol_width) X(spade_hidden) X(z_proj) X(pe_bands) X(sky_bands)        \
  X(stf_depth) X(stf_hidden) X(obj_depth) X(obj_hidden) X(obj_skip) X(sky_depth) X(sky_hidden) X(render_width) \
  X(points_per_voxel) X(points_per_object) X(max_voxels) X(density_shift)

}  // namespace detail

inline json arch_to_json(const ArchConfig& a) {
  json j;
#define X(f) j[#f] = a.f;
  NFF_ARCH_FIELDS(X)
#undef X
  return j;
}

/// Fields absent from `j` keep their defaults.
inline ArchConfig arch_from_json(const json& j, const std::string& where = "arch") {
  if (!j.is_object()) throw DataError(where + ": expected an object");
  ArchConfig a;
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
#define X(f) \
  if (it.key() == #f) known = true;
    NFF_ARCH_FIELDS(X)
#undef X
    if (!known) throw DataError(where + ": unknown field '" + it.key() + "'");
  }
#define X(f) \
  if (j.contains(#f)) a.f = detail::field<decltype(a.f)>(j, #f, where);
  NFF_ARCH_FIELDS(X)
#undef X
  a.validate();
  return a;
}

inline json camera_to_json(const Camera& c) {
  return {{"fx", c.fx},         {"fy", c.fy},    {"cx", c.cx},
          {"cy", c.cy},         {"width", c.width}, {"height", c.height},
          {"quat", detail::quat_json(c.rotation)}, {"pos", detail::vec_json(c.position)}};
}

inline Camera camera_from_json(const json& j, const std::string& where = "camera") {
  using detail::field;
  if (!j.is_object()) throw DataError(where + ": expected an object");
  Camera c;
  c.fx = field<double>(j, "fx", where);
  c.fy = field<double>(j, "fy", where);
  c.cx = field<double>(j, "cx", where);
  c.cy = field<double>(j, "cy", where);
  c.width = field<int>(j, "width", where);
  c.height = field<int>(j, "height", where);
  c.rotation = detail::quat_field(j, "quat", where);
  c.position = detail::vec_field(j, "pos", where);
  try {
    c.validate();
  } catch (const DataError& e) {
    throw DataError(where + ": " + e.what());
  }
  return c;
}

inline json scene_to_json(const Scene& s) {
  json objs = json::array();
  for (std::size_t k = 0; k < s.layout.slots(); ++k) {
    if (!s.layout.live(k)) {
      objs.push_back(nullptr);
      continue;
    }
    const auto& b = s.layout.at(k);
    objs.push_back({{"quat", detail::quat_json(b.rotation)},
                    {"pos", detail::vec_json(b.translation)},
                    {"size", detail::vec_json(b.size)},
                    {"seed", b.latent_seed}});
  }
  return {{"world_seed", s.world_seed},
          {"camera", camera_to_json(s.camera)},
          {"objects", objs},
          {"grid_path", s.grid_path},
          {"arch", arch_to_json(s.arch)}};
}

/// Parses everything except the grid, which the caller loads from grid_path.
inline Scene scene_from_json(const json& j, const std::string& where = "scene") {
  using detail::field;
  if (!j.is_object()) throw DataError(where + ": expected a JSON object");
  Scene s;
  s.world_seed = field<std::uint64_t>(j, "world_seed", where);
  s.camera = camera_from_json(j.at("camera"), where + ".camera");
  s.grid_path = field<std::string>(j, "grid_path", where);
  if (j.contains("arch")) s.arch = arch_from_json(j.at("arch"), where + ".arch");
  if (j.contains("objects")) {
    const auto& objs = j.at("objects");
    if (!objs.is_array()) throw DataError(where + ".objects: expected an array");
    std::vector<std::size_t> dead;
    for (std::size_t k = 0; k < objs.size(); ++k) {
      const std::string w = where + ".objects[" + std::to_string(k) + "]";
      const auto& o = objs[k];
      ObjectBox b;
      if (!o.is_null()) {
        if (!o.is_object()) throw DataError(w + ": expected an object or null");
        b.rotation = detail::quat_field(o, "quat", w);
        b.translation = detail::vec_field(o, "pos", w);
        b.size = detail::vec_field(o, "size", w);
        b.latent_seed = field<std::uint64_t>(o, "seed", w);
      } else {
        dead.push_back(k);
      }
      try {
        s.layout.insert(b);
      } catch (const DataError& e) {
        throw DataError(w + ": " + e.what());
      }
    }
    for (auto k : dead) s.layout.remove(k);
  }
  return s;
}

inline std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

/// Reads a scene file and the grid it references (relative to the file).
inline Scene load_scene(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw DataError(path + ": " + e.what());
  }
  Scene s = scene_from_json(j, path);
  const auto grid = std::filesystem::path(path).parent_path() / s.grid_path;
  s.grid = load_uvgx(grid.string());
  return s;
}

/// Writes the scene JSON only; the grid is saved separately.
inline void save_scene_json(const std::string& path, const Scene& s) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path);
  os << dump_json(scene_to_json(s));
  if (!os) throw DataError("write failed: " + path);
}

}  // namespace nff

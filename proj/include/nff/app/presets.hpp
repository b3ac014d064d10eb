// SPDX-License-Identifier: Apache-2.0
#pragma once

// Procedural fixture scenes (walled rooms with boxes on the floor, and a small
// street block) and a forward-motion camera trajectory sampler.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "nff/error.hpp"
#include "nff/rng.hpp"
#include "nff/scene/scene.hpp"

namespace nff {

struct TrajectoryParams {
  Vec3 start{8.0, 1.5, 1.75};
  double heading_deg = 90.0;  // yaw of the direction of travel, from +x toward +y
  double step = 0.25;         // meters between consecutive poses
  double yaw_jitter_deg = 0.0;
  double pitch_deg = 15.0;    // downward tilt
  int count = 1;
};

/// Camera looking along yaw `yaw_deg` (about +z), tilted down by `pitch_deg`.
inline Quat heading_rotation(double yaw_deg, double pitch_deg) {
  const double y = yaw_deg * M_PI / 180.0, p = pitch_deg * M_PI / 180.0;
  const Vec3 fwd(std::cos(y) * std::cos(p), std::sin(y) * std::cos(p), -std::sin(p));
  return look_rotation(fwd, Vec3(0, 0, -1));
}

/// Poses advance `step` along the travel heading; each pose gets its own yaw
/// jitter. Intrinsics come from `base`.
inline std::vector<Camera> sample_trajectory(const Camera& base, const TrajectoryParams& tp, std::uint64_t seed) {
  if (tp.count < 1 || !(tp.step >= 0)) throw DataError("trajectory needs count >= 1 and step >= 0");
  std::vector<Camera> out;
  UniformStream rng(derive_seed(seed, 0x747261));
  const double h = tp.heading_deg * M_PI / 180.0;
  const Vec3 dir(std::cos(h), std::sin(h), 0.0);
  for (int i = 0; i < tp.count; ++i) {
    Camera c = base;
    c.position = tp.start + (tp.step * i) * dir;
    const double jitter = tp.yaw_jitter_deg * (2.0 * rng.next() - 1.0);
    c.rotation = heading_rotation(tp.heading_deg + jitter, tp.pitch_deg);
    out.push_back(c);
  }
  return out;
}

inline Camera default_camera(int width, int height) {
  Camera c;
  c.width = width;
  c.height = height;
  c.fx = c.fy = 0.8 * width;
  c.cx = width / 2.0;
  c.cy = height / 2.0;
  return c;
}

/// Narrow networks with the default structure, sized for CPU fitting.
inline ArchConfig compact_arch() {
  ArchConfig a;
  a.z_dim = 64;
  a.feat_dim = 16;
  a.grid_channels = 8;
  a.vol_width = 8;
  a.spade_hidden = 8;
  a.z_proj = 4;
  a.stf_depth = 2;
  a.stf_hidden = 64;
  a.obj_depth = 3;
  a.obj_hidden = 64;
  a.obj_skip = 2;
  a.sky_depth = 2;
  a.sky_hidden = 64;
  a.render_width = 16;
  return a;
}

inline ArchConfig named_arch(const std::string& name) {
  if (name == "full") return ArchConfig{};
  if (name == "compact") return compact_arch();
  throw UsageError("unknown architecture '" + name + "' (expected full or compact)");
}

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"clevr-w", "clevr-w-bare", "street", "sparse"};
  return names;
}

namespace detail {

inline int uniform_int(UniformStream& r, int lo, int hi) {  // inclusive
  return lo + static_cast<int>(r.next() * (hi - lo + 1));
}

inline double uniform(UniformStream& r, double lo, double hi) { return lo + (hi - lo) * r.next(); }

/// Footprint of a yawed box in the xy plane, as an axis-aligned bound.
inline std::pair<Vec3, Vec3> footprint(const ObjectBox& b) {
  Vec3 lo = Vec3::Constant(1e300), hi = Vec3::Constant(-1e300);
  for (const auto& c : box_corners(b)) {
    lo = lo.cwiseMin(c);
    hi = hi.cwiseMax(c);
  }
  return {lo, hi};
}

/// Boxes resting on top of layer z = 0, kept clear of walls and each other.
inline void scatter_objects(Scene& s, UniformStream& r, int count, double min_size, double max_size) {
  const auto& g = s.grid;
  const double floor_top = g.origin[2] + g.spacing[2];
  std::vector<std::pair<Vec3, Vec3>> placed;
  for (int k = 0, tries = 0; k < count && tries < 1000; ++tries) {
    ObjectBox b;
    const double w = uniform(r, min_size, max_size), d = uniform(r, min_size, max_size);
    const double h = uniform(r, min_size, max_size);
    b.size = Vec3(w, d, h);
    b.rotation = axis_rotation(2, uniform(r, 0.0, 90.0));
    const Vec3 lo = g.lower(), hi = g.upper();
    b.translation = Vec3(uniform(r, lo[0] + 0.2 * (hi[0] - lo[0]), lo[0] + 0.8 * (hi[0] - lo[0])),
                         uniform(r, lo[1] + 0.35 * (hi[1] - lo[1]), lo[1] + 0.75 * (hi[1] - lo[1])), floor_top + h / 2);
    b.latent_seed = derive_seed(s.world_seed, 0x6f, static_cast<std::uint64_t>(k));
    auto fp = footprint(b);
    bool ok = fp.first[0] > lo[0] && fp.first[1] > lo[1] && fp.second[0] < hi[0] && fp.second[1] < hi[1] &&
              floor_top + h < hi[2];
    for (const auto& q : placed)
      if (fp.first[0] < q.second[0] + 0.2 && q.first[0] < fp.second[0] + 0.2 && fp.first[1] < q.second[1] + 0.2 &&
          q.first[1] < fp.second[1] + 0.2)
        ok = false;
    // Every voxel column under the footprint must be clear above the floor.
    if (ok) {
      const auto c0 = g.cell_of(fp.first), c1 = g.cell_of(fp.second);
      if (!c0 || !c1) ok = false;
      for (int y = ok ? (*c0)[1] : 0; ok && y <= (*c1)[1]; ++y)
        for (int x = (*c0)[0]; ok && x <= (*c1)[0]; ++x)
          for (int z = 1; ok && z < g.dims[2]; ++z)
            if (g.label({x, y, z}) != 0) ok = false;
    }
    if (!ok) continue;
    placed.push_back(fp);
    s.layout.insert(b);
    ++k;
  }
}

}  // namespace detail

/// Deterministic scene for a preset and seed; `size` voxels per axis.
inline Scene make_preset(const std::string& preset, std::uint64_t seed, int size = 32) {
  if (size < 8 || size % 8) throw UsageError("grid size must be a positive multiple of 8");
  UniformStream r(derive_seed(seed, 0x736365));
  Scene s;
  s.world_seed = derive_seed(seed, 0x77);
  s.camera = default_camera(64, 64);
  if (preset == "sparse") {
    // Floor, boxes and a few floating voxels, seen steeply from above so that
    // each ray crosses only a handful of non-empty voxels.
    SemanticVoxelGrid g({size, size, size}, 6, Vec3::Zero(), Vec3(0.5, 0.5, 0.25));
    g.names = {"empty", "floor", "wall_red", "wall_green", "wall_blue", "wall_yellow"};
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) g.set({x, y, 0}, 1);
    s.grid = std::move(g);
    detail::scatter_objects(s, r, detail::uniform_int(r, 2, 4), 0.8, 1.8);
    for (int i = 0; i < 6; ++i) {
      const Index3 c{detail::uniform_int(r, 0, size - 1), detail::uniform_int(r, 0, size - 1),
                     detail::uniform_int(r, size / 4, size * 3 / 4 - 1)};
      s.grid.set(c, detail::uniform_int(r, 2, 5));
    }
    const Vec3 hi = s.grid.upper();
    s.camera.position = Vec3(hi[0] / 2, hi[1] / 8, hi[2] * 0.875);
    s.camera.rotation = heading_rotation(90.0, 55.0);
  } else if (preset == "clevr-w" || preset == "clevr-w-bare") {
    // 0.5 m horizontally, 0.25 m vertically; floor is the bottom layer.
    SemanticVoxelGrid g({size, size, size}, 6, Vec3::Zero(), Vec3(0.5, 0.5, 0.25));
    g.names = {"empty", "floor", "wall_red", "wall_green", "wall_blue", "wall_yellow"};
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) g.set({x, y, 0}, 1);
    const int walls = detail::uniform_int(r, 1, 2);
    for (int w = 0; w < walls; ++w) {
      const int label = detail::uniform_int(r, 2, 5);
      const int height = detail::uniform_int(r, size / 4, size / 2);
      if (w == 0) {  // back wall, across x
        const int y = detail::uniform_int(r, size * 13 / 16, size - 2);
        const int x0 = detail::uniform_int(r, 0, size / 4), x1 = detail::uniform_int(r, size * 3 / 4, size);
        for (int z = 1; z <= height; ++z)
          for (int x = x0; x < x1; ++x) g.set({x, y, z}, label);
      } else {  // side wall, along y
        const int x = detail::uniform_int(r, size * 13 / 16, size - 2);
        const int y0 = detail::uniform_int(r, size / 4, size / 2);
        for (int z = 1; z <= height; ++z)
          for (int y = y0; y < size; ++y) g.set({x, y, z}, label);
      }
    }
    s.grid = std::move(g);
    const Vec3 hi = s.grid.upper();
    s.camera.position = Vec3(hi[0] / 2, hi[1] * 0.08, 1.75);
    s.camera.rotation = heading_rotation(90.0, 15.0);
    if (preset == "clevr-w") detail::scatter_objects(s, r, detail::uniform_int(r, 2, 4), 0.8, 1.8);
  } else if (preset == "street") {
    // 1 m horizontally, 0.25 m vertically; road along +y.
    SemanticVoxelGrid g({size, size, size}, 6, Vec3::Zero(), Vec3(1.0, 1.0, 0.25));
    g.names = {"empty", "road", "sidewalk", "building", "vegetation", "terrain"};
    const int mid = size / 2, half_road = size / 8;
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const int dx = std::abs(x - mid);
        g.set({x, y, 0}, dx < half_road ? 1 : dx < half_road + 2 ? 2 : 5);
      }
    for (int side = 0; side < 2; ++side)
      for (int y = 0; y < size;) {
        const int len = detail::uniform_int(r, 3, 8);
        const int height = detail::uniform_int(r, size / 4, size - 1);
        const bool tree = r.next() < 0.3;
        const int xa = side == 0 ? 0 : mid + half_road + 3, xb = side == 0 ? mid - half_road - 3 : size;
        for (int yy = y; yy < std::min(size, y + len - 1); ++yy)
          for (int x = xa; x < xb; ++x)
            for (int z = 1; z <= (tree ? std::min(height, size / 3) : height); ++z) g.set({x, yy, z}, tree ? 4 : 3);
        y += len;
      }
    s.grid = std::move(g);
    s.camera.position = Vec3(mid, 1.0, 1.5);
    s.camera.rotation = heading_rotation(90.0, 5.0);
    const int cars = detail::uniform_int(r, 1, 3);
    for (int k = 0; k < cars; ++k) {
      ObjectBox b;
      b.size = Vec3(1.8, 4.2, 1.5);
      b.rotation = axis_rotation(2, detail::uniform(r, -8.0, 8.0));
      const double lane = (k % 2 == 0 ? -1.0 : 1.0) * half_road * 0.5;
      b.translation = Vec3(mid + lane + 0.5, 8.0 + 6.0 * k + detail::uniform(r, 0.0, 2.0), 0.25 + 0.75);
      b.latent_seed = derive_seed(s.world_seed, 0x6f, static_cast<std::uint64_t>(k));
      s.layout.insert(b);
    }
  } else {
    throw UsageError("unknown preset '" + preset + "'");
  }
  s.grid.validate();
  return s;
}

}  // namespace nff

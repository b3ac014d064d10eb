// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>

#include "nff/app/presets.hpp"
#include "nff/render/render.hpp"

namespace nff::test {

/// Narrow networks for fast tests; same structure as the defaults.
inline ArchConfig tiny_arch() {
  ArchConfig a;
  a.z_dim = 8;
  a.feat_dim = 4;
  a.grid_channels = 3;
  a.vol_width = 4;
  a.spade_hidden = 4;
  a.z_proj = 2;
  a.pe_bands = 2;
  a.sky_bands = 1;
  a.stf_depth = 2;
  a.stf_hidden = 8;
  a.obj_depth = 3;
  a.obj_hidden = 8;
  a.obj_skip = 2;
  a.sky_depth = 1;
  a.sky_hidden = 8;
  a.render_width = 4;
  return a;
}

/// 8^3 grid with a floor layer and a single wall, unit spacing, one box.
inline Scene tiny_scene(std::uint64_t seed = 1) {
  Scene s;
  s.world_seed = seed;
  s.arch = tiny_arch();
  s.grid = SemanticVoxelGrid({8, 8, 8}, 3, Vec3::Zero(), Vec3::Ones());
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) s.grid.set({x, y, 0}, 1);
  for (int z = 1; z < 5; ++z)
    for (int x = 0; x < 8; ++x) s.grid.set({x, 7, z}, 2);
  ObjectBox b;
  b.translation = Vec3(4.0, 4.5, 1.75);
  b.size = Vec3(1.5, 1.5, 1.5);
  b.rotation = axis_rotation(2, 20);
  b.latent_seed = seed + 100;
  s.layout.insert(b);
  s.camera = default_camera(16, 16);
  s.camera.position = Vec3(4.0, 0.5, 2.5);
  s.camera.rotation = heading_rotation(90.0, 20.0);
  return s;
}

inline std::vector<double> random_points(std::mt19937_64& rng, int n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> p(static_cast<std::size_t>(n) * 3);
  for (auto& v : p) v = u(rng);
  return p;
}

}  // namespace nff::test

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "nff/scene/camera.hpp"
#include "nff/scene/voxel_grid.hpp"

namespace nff {

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 dir = Vec3::UnitZ();
  int u = 0, v = 0;
};

/// One ray per pixel of `cam` (row-major), through pixel centers.
inline std::vector<Ray> camera_rays(const Camera& cam) {
  std::vector<Ray> rays;
  rays.reserve(static_cast<std::size_t>(cam.width) * cam.height);
  for (int v = 0; v < cam.height; ++v)
    for (int u = 0; u < cam.width; ++u) rays.push_back({cam.position, cam.pixel_dir(u, v), u, v});
  return rays;
}

/// Rays at feature resolution (half the image size in each axis).
inline std::vector<Ray> generate_rays(const Camera& cam) {
  cam.validate();
  return camera_rays(cam.half());
}

/// Parametric overlap [t0, t1] of a ray with an axis-aligned box, t0 clamped to 0.
inline std::optional<std::pair<double, double>> ray_aabb(const Vec3& o, const Vec3& d, const Vec3& lo, const Vec3& hi) {
  double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (o[a] < lo[a] || o[a] > hi[a]) return std::nullopt;
      continue;
    }
    double ta = (lo[a] - o[a]) / d[a], tb = (hi[a] - o[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (!(t1 > t0)) return std::nullopt;
  return std::make_pair(t0, t1);
}

struct VoxelHit {
  Index3 cell{};
  double t_enter = 0;
  double t_exit = 0;
};

/// Cells crossed by the ray in increasing t, with their parametric intervals.
/// Incremental axis-crossing traversal; each boundary t is recomputed from the
/// cell index rather than accumulated, so endpoints carry no drift. Intervals
/// shorter than `min_len` (grazing a corner or edge) are dropped. `visit`
/// returns false to stop.
template <class Visit>
void traverse_cells(const SemanticVoxelGrid& grid, const Vec3& o, const Vec3& d, Visit&& visit,
                    double min_len = 1e-12) {
  auto span = ray_aabb(o, d, grid.lower(), grid.upper());
  if (!span) return;
  const auto [t0, t1] = *span;
  Index3 c;
  int step[3];
  for (int a = 0; a < 3; ++a) {
    const double p = o[a] + t0 * d[a];
    int k = static_cast<int>(std::floor((p - grid.origin[a]) / grid.spacing[a]));
    k = std::clamp(k, 0, grid.dims[a] - 1);
    step[a] = d[a] > 0 ? 1 : (d[a] < 0 ? -1 : 0);
    c[static_cast<std::size_t>(a)] = k;
  }
  auto boundary = [&](int a) {
    if (step[a] == 0) return std::numeric_limits<double>::infinity();
    const int face = step[a] > 0 ? c[static_cast<std::size_t>(a)] + 1 : c[static_cast<std::size_t>(a)];
    return (grid.origin[a] + face * grid.spacing[a] - o[a]) / d[a];
  };
  double t = t0;
  while (t < t1) {
    double next[3] = {boundary(0), boundary(1), boundary(2)};
    int axis = 0;
    if (next[1] < next[axis]) axis = 1;
    if (next[2] < next[axis]) axis = 2;
    const double t_exit = std::min(next[axis], t1);
    if (t_exit - t > min_len) {
      if (!visit(VoxelHit{c, t, t_exit})) return;
    }
    if (t_exit >= t1) return;
    // Step every axis whose boundary is reached at t_exit.
    for (int a = 0; a < 3; ++a)
      if (next[a] <= t_exit) c[static_cast<std::size_t>(a)] += step[a];
    if (!grid.in_bounds(c)) return;
    t = std::max(t, t_exit);
  }
}

/// The first `max_voxels` non-empty voxels along the ray, in hit order.
inline std::vector<VoxelHit> traverse_nonempty(const SemanticVoxelGrid& grid, const Vec3& o, const Vec3& d,
                                               int max_voxels) {
  std::vector<VoxelHit> hits;
  if (max_voxels <= 0) return hits;
  traverse_cells(grid, o, d, [&](const VoxelHit& h) {
    if (grid.label(h.cell) != 0) hits.push_back(h);
    return static_cast<int>(hits.size()) < max_voxels;
  });
  return hits;
}

inline std::vector<VoxelHit> traverse_nonempty(const SemanticVoxelGrid& grid, const Ray& r, int max_voxels) {
  return traverse_nonempty(grid, r.origin, r.dir, max_voxels);
}

}  // namespace nff

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <vector>

#include "nff/rng.hpp"
#include "nff/sampling/traversal.hpp"
#include "nff/scene/objects.hpp"

namespace nff {

/// Source tag of a sample: -1 for stuff, k >= 0 for object slot k.
inline constexpr int kStuff = -1;

struct Sample {
  double t = 0;
  double delta = 0;  // length of the stratum the sample represents
  Vec3 x = Vec3::Zero();      // world position
  Vec3 x_obj = Vec3::Zero();  // canonical position (object samples only)
  int source = kStuff;
};

/// Where jitter comes from. `shift` false places samples at stratum starts.
struct Jitter {
  std::uint64_t seed = 0;
  bool shift = true;
};

/// Stream id of the jitter for interval `i` (stuff) or object `k`.
inline std::uint64_t stuff_stream(int interval) { return static_cast<std::uint64_t>(interval); }
inline std::uint64_t object_stream(int k) { return (std::uint64_t{1} << 20) + static_cast<std::uint64_t>(k); }

/// `count` stratified samples on [a, b]; sample j lies in the j-th of `count`
/// equal strata and carries that stratum's length as its delta.
inline void stratified(double a, double b, int count, UniformStream* rng, std::vector<double>& t, double& delta) {
  delta = (b - a) / count;
  t.resize(static_cast<std::size_t>(count));
  for (int j = 0; j < count; ++j) {
    const double u = rng ? rng->next() : 0.0;
    t[static_cast<std::size_t>(j)] = a + (j + u) * delta;
  }
}

/// M_vol stratified samples inside each voxel interval.
inline std::vector<Sample> sample_stuff(const Ray& ray, const std::vector<VoxelHit>& hits, int per_voxel,
                                        const Jitter& jit, std::uint64_t pixel) {
  std::vector<Sample> out;
  out.reserve(hits.size() * static_cast<std::size_t>(per_voxel));
  std::vector<double> ts;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    UniformStream rng(derive_seed(jit.seed, pixel, stuff_stream(static_cast<int>(i))));
    double delta;
    stratified(hits[i].t_enter, hits[i].t_exit, per_voxel, jit.shift ? &rng : nullptr, ts, delta);
    for (double t : ts) {
      Sample s;
      s.t = t;
      s.delta = delta;
      s.x = ray.origin + t * ray.dir;
      out.push_back(s);
    }
  }
  return out;
}

/// Slab test in the box frame; t_near clamped to 0 when the origin is inside.
inline std::optional<std::pair<double, double>> ray_box_intersect(const Ray& ray, const ObjectBox& box) {
  const Vec3 o = object_from_world(ray.origin, box);
  const Vec3 d = (box.R().transpose() * ray.dir).cwiseQuotient(box.size);
  return ray_aabb(o, d, Vec3::Constant(-0.5), Vec3::Constant(0.5));
}

/// M_obj stratified samples in the ray's overlap with box k.
inline std::vector<Sample> sample_object(const Ray& ray, const ObjectBox& box, int k, int count, const Jitter& jit,
                                         std::uint64_t pixel) {
  std::vector<Sample> out;
  auto hit = ray_box_intersect(ray, box);
  if (!hit) return out;
  UniformStream rng(derive_seed(jit.seed, pixel, object_stream(k)));
  std::vector<double> ts;
  double delta;
  stratified(hit->first, hit->second, count, jit.shift ? &rng : nullptr, ts, delta);
  for (double t : ts) {
    Sample s;
    s.t = t;
    s.delta = delta;
    s.x = ray.origin + t * ray.dir;
    s.x_obj = object_from_world(s.x, box).cwiseMax(Vec3::Constant(-0.5)).cwiseMin(Vec3::Constant(0.5));
    s.source = k;
    out.push_back(s);
  }
  return out;
}

/// Concatenates per-source lists (stuff first, then objects by index) and sorts
/// by (t, stuff before objects, object index, input order).
inline std::vector<Sample> merge_sort_samples(const std::vector<Sample>& stuff,
                                              const std::vector<std::vector<Sample>>& objects) {
  std::vector<Sample> all = stuff;
  for (const auto& o : objects) all.insert(all.end(), o.begin(), o.end());
  std::stable_sort(all.begin(), all.end(), [](const Sample& a, const Sample& b) {
    if (a.t != b.t) return a.t < b.t;
    return a.source < b.source;
  });
  return all;
}

}  // namespace nff

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <optional>
#include <string>
#include <vector>

#include "nff/error.hpp"
#include "nff/geometry.hpp"

namespace nff {

using Index3 = std::array<int, 3>;

/// Half-open voxel-index box [lo, hi) per axis.
struct VoxelBox {
  Index3 lo{0, 0, 0};
  Index3 hi{0, 0, 0};

  bool empty() const { return hi[0] <= lo[0] || hi[1] <= lo[1] || hi[2] <= lo[2]; }
  bool contains(const Index3& c) const {
    for (int a = 0; a < 3; ++a)
      if (c[a] < lo[a] || c[a] >= hi[a]) return false;
    return true;
  }
  long volume() const {
    if (empty()) return 0;
    return static_cast<long>(hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2]);
  }
};

/// Dense semantic labels on a regular lattice; z is up. Label 0 is "empty".
/// Storage is x-fastest: index = x + nx * (y + ny * z).
struct SemanticVoxelGrid {
  Index3 dims{0, 0, 0};
  int num_labels = 1;
  Vec3 origin = Vec3::Zero();
  Vec3 spacing = Vec3::Ones();
  std::vector<std::uint8_t> labels;
  std::vector<std::string> names;

  SemanticVoxelGrid() = default;
  SemanticVoxelGrid(Index3 d, int L, Vec3 org, Vec3 sp)
      : dims(d), num_labels(L), origin(std::move(org)), spacing(std::move(sp)),
        labels(static_cast<std::size_t>(d[0]) * d[1] * d[2], 0) {
    validate();
  }

  std::size_t voxel_count() const { return labels.size(); }
  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) + static_cast<std::size_t>(dims[0]) * (y + static_cast<std::size_t>(dims[1]) * z);
  }
  std::size_t index(const Index3& c) const { return index(c[0], c[1], c[2]); }
  int label(const Index3& c) const { return labels[index(c)]; }
  void set(const Index3& c, int l) { labels[index(c)] = static_cast<std::uint8_t>(l); }
  bool in_bounds(const Index3& c) const {
    return c[0] >= 0 && c[1] >= 0 && c[2] >= 0 && c[0] < dims[0] && c[1] < dims[1] && c[2] < dims[2];
  }

  Vec3 lower() const { return origin; }
  Vec3 upper() const { return origin + spacing.cwiseProduct(Vec3(dims[0], dims[1], dims[2])); }
  Vec3 voxel_center(const Index3& c) const {
    return origin + spacing.cwiseProduct(Vec3(c[0] + 0.5, c[1] + 0.5, c[2] + 0.5));
  }

  /// Cell containing x under half-open [corner, corner + spacing) intervals.
  std::optional<Index3> cell_of(const Vec3& x) const {
    Index3 c;
    for (int a = 0; a < 3; ++a) {
      const double f = std::floor((x[a] - origin[a]) / spacing[a]);
      if (!(f >= 0) || f >= dims[a]) return std::nullopt;
      c[a] = static_cast<int>(f);
    }
    return c;
  }

  /// Label at world point x; nullopt when x is outside the grid.
  std::optional<int> semantic_at(const Vec3& x) const {
    auto c = cell_of(x);
    if (!c) return std::nullopt;
    return label(*c);
  }

  std::size_t nonempty_count() const {
    std::size_t n = 0;
    for (auto l : labels) n += l != 0;
    return n;
  }

  /// Label index for a name, or the parsed integer if `s` is numeric.
  int label_id(const std::string& s) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == s) return static_cast<int>(i);
    char* end = nullptr;
    const long v = std::strtol(s.c_str(), &end, 10);
    if (s.empty() || *end != '\0') throw DataError("unknown label '" + s + "'");
    if (v < 0 || v >= num_labels) throw DataError("label " + s + " out of range [0, " + std::to_string(num_labels) + ")");
    return static_cast<int>(v);
  }

  void validate() const {
    for (int a = 0; a < 3; ++a) {
      if (dims[a] <= 0) throw DataError("grid dimensions must be positive");
      if (!(spacing[a] > 0) || !std::isfinite(spacing[a])) throw DataError("grid spacing must be positive");
      if (!std::isfinite(origin[a])) throw DataError("grid origin must be finite");
    }
    if (num_labels < 1 || num_labels > 256) throw DataError("label count must be in [1, 256]");
    if (labels.size() != static_cast<std::size_t>(dims[0]) * dims[1] * dims[2])
      throw DataError("label array size does not match grid dimensions");
    for (auto l : labels)
      if (l >= num_labels) throw DataError("label " + std::to_string(l) + " out of range");
    if (!names.empty() && static_cast<int>(names.size()) != num_labels)
      throw DataError("label name table size does not match label count");
  }

  bool operator==(const SemanticVoxelGrid& o) const {
    return dims == o.dims && num_labels == o.num_labels && origin == o.origin && spacing == o.spacing &&
           labels == o.labels && names == o.names;
  }

  VoxelBox whole() const { return VoxelBox{{0, 0, 0}, dims}; }
};

inline void check_region(const SemanticVoxelGrid& g, const VoxelBox& r) {
  for (int a = 0; a < 3; ++a)
    if (r.lo[a] < 0 || r.hi[a] > g.dims[a] || r.lo[a] > r.hi[a])
      throw DataError("region exceeds grid dimensions");
}

inline void check_label(const SemanticVoxelGrid& g, int l) {
  if (l < 0 || l >= g.num_labels)
    throw DataError("label " + std::to_string(l) + " out of range [0, " + std::to_string(g.num_labels) + ")");
}

template <class F>
void for_each_voxel(const VoxelBox& r, F&& f) {
  for (int z = r.lo[2]; z < r.hi[2]; ++z)
    for (int y = r.lo[1]; y < r.hi[1]; ++y)
      for (int x = r.lo[0]; x < r.hi[0]; ++x) f(Index3{x, y, z});
}

/// Voxels in `region` (whole grid if absent) labelled `from` become `to`.
inline SemanticVoxelGrid edit_relabel(SemanticVoxelGrid g, int from, int to, std::optional<VoxelBox> region = {}) {
  check_label(g, from);
  check_label(g, to);
  const VoxelBox r = region.value_or(g.whole());
  check_region(g, r);
  for_each_voxel(r, [&](const Index3& c) {
    if (g.label(c) == from) g.set(c, to);
  });
  return g;
}

/// Every voxel in `region` set to `label` (0 carves).
inline SemanticVoxelGrid edit_occupancy(SemanticVoxelGrid g, const VoxelBox& region, int label) {
  check_label(g, label);
  check_region(g, region);
  for_each_voxel(region, [&](const Index3& c) { g.set(c, label); });
  return g;
}

/// Moves the non-empty voxels of `region` by `offset`: the source region is
/// carved to empty, then its non-empty labels are written at the destination.
inline SemanticVoxelGrid edit_move(SemanticVoxelGrid g, const VoxelBox& region, const Index3& offset) {
  check_region(g, region);
  const VoxelBox dst{{region.lo[0] + offset[0], region.lo[1] + offset[1], region.lo[2] + offset[2]},
                     {region.hi[0] + offset[0], region.hi[1] + offset[1], region.hi[2] + offset[2]}};
  check_region(g, dst);
  const SemanticVoxelGrid src = g;
  for_each_voxel(region, [&](const Index3& c) { g.set(c, 0); });
  for_each_voxel(region, [&](const Index3& c) {
    if (const int l = src.label(c); l != 0) g.set({c[0] + offset[0], c[1] + offset[1], c[2] + offset[2]}, l);
  });
  return g;
}

}  // namespace nff

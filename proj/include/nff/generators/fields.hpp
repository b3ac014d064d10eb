// SPDX-License-Identifier: Apache-2.0
#pragma once

// Trilinear feature lookup and the three MLP field heads (stuff, object, sky).

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "nff/generators/arch.hpp"
#include "nff/generators/layers.hpp"
#include "nff/scene/voxel_grid.hpp"

namespace nff {

/// Corner indices (into the x-fastest spatial layout) and weights of a
/// trilinear lookup with values anchored at voxel centers. Outside the center
/// lattice the coordinate is clamped to the border; outside the grid bounds
/// it is an error.
struct TrilerpTaps {
  std::array<int, 8> index{};
  std::array<double, 8> weight{};
};

inline TrilerpTaps trilerp_taps(const SemanticVoxelGrid& grid, const Vec3& x) {
  const Vec3 lo = grid.lower(), hi = grid.upper();
  for (int a = 0; a < 3; ++a) {
    const double tol = 1e-9 * (hi[a] - lo[a]);
    if (!(x[a] >= lo[a] - tol && x[a] <= hi[a] + tol)) throw std::out_of_range("trilerp: point outside grid bounds");
  }
  int i0[3], i1[3];
  double f[3];
  for (int a = 0; a < 3; ++a) {
    const int n = grid.dims[a];
    double c = (x[a] - grid.origin[a]) / grid.spacing[a] - 0.5;
    c = std::clamp(c, 0.0, static_cast<double>(n - 1));
    int k = static_cast<int>(std::floor(c));
    k = std::min(k, std::max(n - 2, 0));
    i0[a] = k;
    i1[a] = std::min(k + 1, n - 1);
    f[a] = c - k;
  }
  TrilerpTaps t;
  for (int c = 0; c < 8; ++c) {
    const int bx = c & 1, by = (c >> 1) & 1, bz = (c >> 2) & 1;
    const int ix = bx ? i1[0] : i0[0], iy = by ? i1[1] : i0[1], iz = bz ? i1[2] : i0[2];
    t.index[static_cast<std::size_t>(c)] = static_cast<int>(grid.index(ix, iy, iz));
    t.weight[static_cast<std::size_t>(c)] =
        (bx ? f[0] : 1 - f[0]) * (by ? f[1] : 1 - f[1]) * (bz ? f[2] : 1 - f[2]);
  }
  return t;
}

/// Psi(x) for a plain [C, nz, ny, nx] tensor.
inline std::vector<double> trilerp(const Tensor<double>& psi, const SemanticVoxelGrid& grid, const Vec3& x) {
  const auto t = trilerp_taps(grid, x);
  const int C = psi.dim(0);
  const std::size_t S = psi.size() / static_cast<std::size_t>(C);
  std::vector<double> out(static_cast<std::size_t>(C), 0.0);
  for (int c = 0; c < C; ++c)
    for (int k = 0; k < 8; ++k)
      out[static_cast<std::size_t>(c)] += t.weight[static_cast<std::size_t>(k)] * psi[static_cast<std::size_t>(c) * S + t.index[static_cast<std::size_t>(k)]];
  return out;
}

/// Psi at N points (row-major xyz) as [N, M_v].
template <class T>
Var trilerp_points(Graph<T>& g, Var psi, const SemanticVoxelGrid& grid, const std::vector<double>& pts) {
  const std::size_t n = pts.size() / 3;
  std::vector<int> idx(n * 8);
  std::vector<double> w(n * 8);
  for (std::size_t i = 0; i < n; ++i) {
    const auto t = trilerp_taps(grid, Vec3(pts[3 * i], pts[3 * i + 1], pts[3 * i + 2]));
    std::copy(t.index.begin(), t.index.end(), idx.begin() + static_cast<std::ptrdiff_t>(8 * i));
    std::copy(t.weight.begin(), t.weight.end(), w.begin() + static_cast<std::ptrdiff_t>(8 * i));
  }
  return ad::weighted_gather(g, psi, std::move(idx), std::move(w), 8);
}

/// Grid-relative coordinates in [-1, 1]^3.
inline Vec3 normalize_to_grid(const SemanticVoxelGrid& grid, const Vec3& x) {
  const Vec3 lo = grid.lower(), hi = grid.upper();
  return (2.0 * (x - lo).cwiseQuotient(hi - lo)).array() - 1.0;
}

/// Features [N, M_f] and densities [N] of a field head output [N, M_f + 1].
struct FieldVars {
  Var feat;
  Var sigma;
};

template <class T>
FieldVars split_head(Graph<T>& g, Var raw, const ArchConfig& a) {
  const int m = a.feat_dim;
  Var f = ad::slice(g, raw, 1, 0, m);
  Var s = ad::reshape(g, ad::slice(g, raw, 1, m, m + 1), Shape{g.shape(raw)[0]});
  return {f, ad::softplus(g, ad::add_scalar(g, s, -a.density_shift))};
}

inline void init_stuff_head(ParamStore& s, const ArchConfig& a, std::mt19937_64& rng) {
  init_mlp(s, "stf", a.grid_channels + 6 * a.pe_bands, a.stf_hidden, a.stf_depth, a.feat_dim + 1, 0, rng);
}

/// (f, sigma) = G_stf(Psi(x), gamma(x_norm)) for `psi_at` [N, M_v] and world points.
template <class T>
FieldVars stuff_field(Graph<T>& g, ParamBinder<T>& P, const ArchConfig& a, Var psi_at, const SemanticVoxelGrid& grid,
                      const std::vector<double>& pts) {
  std::vector<double> norm(pts.size());
  for (std::size_t i = 0; i + 2 < pts.size(); i += 3) {
    const Vec3 q = normalize_to_grid(grid, Vec3(pts[i], pts[i + 1], pts[i + 2]));
    norm[i] = q[0];
    norm[i + 1] = q[1];
    norm[i + 2] = q[2];
  }
  Var enc = g.constant(encode_points<T>(norm, a.pe_bands));
  Var raw = mlp(g, P, "stf", ad::concat(g, {psi_at, enc}, 1), a.stf_depth, 0);
  return split_head(g, raw, a);
}

inline void init_object_head(ParamStore& s, const ArchConfig& a, std::mt19937_64& rng) {
  init_mlp(s, "obj", 6 * a.pe_bands + a.z_dim, a.obj_hidden, a.obj_depth, a.feat_dim + 1, a.obj_skip, rng);
}

/// (f, sigma) = G_obj(gamma(x_obj), z_obj) for canonical points of one object.
template <class T>
FieldVars object_field(Graph<T>& g, ParamBinder<T>& P, const ArchConfig& a, Var z_obj, const std::vector<double>& x_obj) {
  const int n = static_cast<int>(x_obj.size() / 3);
  Var enc = g.constant(encode_points<T>(x_obj, a.pe_bands));
  Var in = ad::concat(g, {enc, repeat_row(g, z_obj, n)}, 1);
  Var raw = mlp(g, P, "obj", in, a.obj_depth, a.obj_skip);
  return split_head(g, raw, a);
}

inline void init_sky_head(ParamStore& s, const ArchConfig& a, std::mt19937_64& rng) {
  init_mlp(s, "sky", a.z_dim + 6 * a.sky_bands, a.sky_hidden, a.sky_depth, a.feat_dim, 0, rng);
}

/// f_sky = G_sky(z, gamma(d)) for N unit directions.
template <class T>
Var sky_feature(Graph<T>& g, ParamBinder<T>& P, const ArchConfig& a, Var z, const std::vector<double>& dirs) {
  for (std::size_t i = 0; i + 2 < dirs.size(); i += 3) {
    const double n = std::sqrt(dirs[i] * dirs[i] + dirs[i + 1] * dirs[i + 1] + dirs[i + 2] * dirs[i + 2]);
    if (std::abs(n - 1.0) > 1e-6) throw std::invalid_argument("sky_feature: direction is not unit length");
  }
  const int n = static_cast<int>(dirs.size() / 3);
  Var enc = g.constant(encode_points<T>(dirs, a.sky_bands));
  return mlp(g, P, "sky", ad::concat(g, {repeat_row(g, z, n), enc}, 1), a.sky_depth, 0);
}

}  // namespace nff

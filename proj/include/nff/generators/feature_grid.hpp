// SPDX-License-Identifier: Apache-2.0
#pragma once

// Semantic-voxel-conditioned 3D conv generator producing the feature grid Psi.
//
// Layout: [C, D, H, W] with D = z, H = y, W = x, so the flattened spatial index
// of a volume equals the voxel grid's x-fastest index.
//
//   input  concat(one-hot V, broadcast proj(z))          N
//   enc1   conv3 stride 2 + relu                          N/2
//   enc2   conv3 stride 2 + relu                          N/4
//   3 x modulated residual block                          N/4
//   up     nearest 2x + conv3 + relu                      N/2
//   2 x modulated residual block                          N/2
//   up     nearest 2x + conv3 + relu                      N
//   head   1x1x1 conv to M_v                              N

#include <string>
#include <vector>

#include "nff/generators/arch.hpp"
#include "nff/generators/layers.hpp"
#include "nff/scene/voxel_grid.hpp"

namespace nff {

inline constexpr int kBottleneckBlocks = 3;
inline constexpr int kDecoderBlocks = 2;

/// One-hot labels [L, nz, ny, nx], nearest-downsampled by `factor`
/// (coarse cell i reads fine voxel factor * i + factor / 2).
template <class T>
Tensor<T> one_hot(const SemanticVoxelGrid& grid, int factor = 1) {
  const int nx = grid.dims[0] / factor, ny = grid.dims[1] / factor, nz = grid.dims[2] / factor;
  const int L = grid.num_labels;
  Tensor<T> out(Shape{L, nz, ny, nx}, T(0));
  const std::size_t S = static_cast<std::size_t>(nx) * ny * nz;
  const int o = factor / 2;
  std::size_t p = 0;
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x, ++p) {
        const int l = grid.label({factor * x + o, factor * y + o, factor * z + o});
        out[static_cast<std::size_t>(l) * S + p] = T(1);
      }
  return out;
}

inline void init_spade_norm(ParamStore& s, const std::string& name, const ArchConfig& a, int labels, int channels,
                            std::mt19937_64& rng) {
  init_dense(s, name + ".zp", a.z_dim, a.z_proj, kLinearGain, rng);
  init_conv(s, name + ".shared", labels + a.z_proj, a.spade_hidden, {3, 3, 3}, kReluGain, rng);
  init_conv(s, name + ".gamma", a.spade_hidden, channels, {3, 3, 3}, kLinearGain / 16, rng);
  init_conv(s, name + ".beta", a.spade_hidden, channels, {3, 3, 3}, kLinearGain / 16, rng);
}

/// instance_norm(h) * (1 + gamma(V, z)) + beta(V, z), where gamma and beta are
/// convs over a shared conv of concat(seg, broadcast(proj z)).
template <class T>
Var spade_norm(Graph<T>& g, ParamBinder<T>& P, const std::string& name, Var h, Var seg, Var z) {
  const Shape hs = g.shape(h), ss = g.shape(seg);
  if (hs.size() != 4 || ss.size() != 4 || hs[1] != ss[1] || hs[2] != ss[2] || hs[3] != ss[3])
    throw std::invalid_argument("spade_norm: condition resolution " + ad::shape_str(ss) + " does not match " +
                                ad::shape_str(hs));
  const int gamma_channels = g.shape(P(name + ".gamma.w"))[0];
  if (gamma_channels != hs[0])
    throw std::invalid_argument("spade_norm: channel mismatch (" + std::to_string(hs[0]) + " vs " +
                                std::to_string(gamma_channels) + ")");
  Var zp = dense(g, P, name + ".zp", ad::reshape(g, z, Shape{1, static_cast<int>(g.value(z).size())}));
  Var zb = ad::broadcast_spatial(g, zp, Shape{hs[1], hs[2], hs[3]});
  Var shared = ad::relu(g, conv_layer(g, P, name + ".shared", ad::concat(g, {seg, zb}, 0)));
  Var gamma = conv_layer(g, P, name + ".gamma", shared);
  Var beta = conv_layer(g, P, name + ".beta", shared);
  Var n = ad::instance_norm(g, h);
  return ad::add(g, ad::mul(g, n, ad::add_scalar(g, gamma, 1.0)), beta);
}

inline void init_spade_block(ParamStore& s, const std::string& name, const ArchConfig& a, int labels, int channels,
                             std::mt19937_64& rng) {
  init_spade_norm(s, name + ".n1", a, labels, channels, rng);
  init_conv(s, name + ".c1", channels, channels, {3, 3, 3}, kReluGain, rng);
  init_spade_norm(s, name + ".n2", a, labels, channels, rng);
  init_conv(s, name + ".c2", channels, channels, {3, 3, 3}, kLinearGain / 4, rng);
}

/// Residual block: h + conv(relu(norm2(conv(relu(norm1(h)))))).
template <class T>
Var spade_block(Graph<T>& g, ParamBinder<T>& P, const std::string& name, Var h, Var seg, Var z) {
  Var a = conv_layer(g, P, name + ".c1", ad::relu(g, spade_norm(g, P, name + ".n1", h, seg, z)));
  Var b = conv_layer(g, P, name + ".c2", ad::relu(g, spade_norm(g, P, name + ".n2", a, seg, z)));
  return ad::add(g, h, b);
}

inline void init_feature_grid(ParamStore& s, const ArchConfig& a, int labels, std::mt19937_64& rng) {
  const int w = a.vol_width;
  init_dense(s, "vol.zp", a.z_dim, a.z_proj, kLinearGain, rng);
  init_conv(s, "vol.enc1", labels + a.z_proj, w, {3, 3, 3}, kReluGain, rng);
  init_conv(s, "vol.enc2", w, w, {3, 3, 3}, kReluGain, rng);
  for (int b = 0; b < kBottleneckBlocks; ++b) init_spade_block(s, "vol.blk" + std::to_string(b), a, labels, w, rng);
  init_conv(s, "vol.up1", w, w, {3, 3, 3}, kReluGain, rng);
  for (int b = 0; b < kDecoderBlocks; ++b)
    init_spade_block(s, "vol.blk" + std::to_string(kBottleneckBlocks + b), a, labels, w, rng);
  init_conv(s, "vol.up2", w, w, {3, 3, 3}, kReluGain, rng);
  init_conv(s, "vol.head", w, a.grid_channels, {1, 1, 1}, kLinearGain, rng);
}

inline void check_feature_grid_dims(const SemanticVoxelGrid& grid) {
  for (int d : grid.dims)
    if (d % 8 != 0) throw std::invalid_argument("feature grid: voxel grid dimensions must be divisible by 8");
}

/// Psi = G_vol(z, V) as [M_v, nz, ny, nx].
template <class T>
Var feature_grid(Graph<T>& g, ParamBinder<T>& P, Var z, const SemanticVoxelGrid& grid) {
  check_feature_grid_dims(grid);
  const int nx = grid.dims[0], ny = grid.dims[1], nz = grid.dims[2];
  Var seg1 = g.constant(one_hot<T>(grid, 1));
  Var seg2 = g.constant(one_hot<T>(grid, 2));
  Var seg4 = g.constant(one_hot<T>(grid, 4));
  Var zp = dense(g, P, "vol.zp", ad::reshape(g, z, Shape{1, static_cast<int>(g.value(z).size())}));
  Var in = ad::concat(g, {seg1, ad::broadcast_spatial(g, zp, Shape{nz, ny, nx})}, 0);
  Var h = ad::relu(g, conv_layer(g, P, "vol.enc1", in, 2));
  h = ad::relu(g, conv_layer(g, P, "vol.enc2", h, 2));
  for (int b = 0; b < kBottleneckBlocks; ++b) h = spade_block(g, P, "vol.blk" + std::to_string(b), h, seg4, z);
  h = ad::relu(g, conv_layer(g, P, "vol.up1", ad::upsample_nearest(g, h, {2, 2, 2})));
  for (int b = 0; b < kDecoderBlocks; ++b)
    h = spade_block(g, P, "vol.blk" + std::to_string(kBottleneckBlocks + b), h, seg2, z);
  h = ad::relu(g, conv_layer(g, P, "vol.up2", ad::upsample_nearest(g, h, {2, 2, 2})));
  return conv_layer(g, P, "vol.head", h);
}

}  // namespace nff

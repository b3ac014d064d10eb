// SPDX-License-Identifier: Apache-2.0
#pragma once

// 2x neural renderer: two weight-modulated 3x3 conv blocks (per-input-channel
// scales from a projection of z, followed by demodulation) with a nearest 2x
// upsample in between, a 1x1 projection to RGB and a sigmoid. All ops are
// local convolutions, so the output is translation covariant.

#include <string>

#include "nff/generators/arch.hpp"
#include "nff/generators/layers.hpp"

namespace nff {

/// RGB pixels that can change when one feature pixel changes, beyond that
/// pixel's own 2x2 block.
inline constexpr int kRendererHalo = 3;

inline void init_neural_renderer(ParamStore& s, const ArchConfig& a, std::mt19937_64& rng) {
  const int w = a.render_width;
  init_dense(s, "nr.map", a.z_dim, w, kReluGain, rng);
  init_dense(s, "nr.s1", w, a.feat_dim, kLinearGain / 16, rng);
  s.init_constant("nr.s1.b", {a.feat_dim}, 1.0);
  init_conv(s, "nr.c1", a.feat_dim, w, {1, 3, 3}, kReluGain, rng);
  init_dense(s, "nr.s2", w, w, kLinearGain / 16, rng);
  s.init_constant("nr.s2.b", {w}, 1.0);
  init_conv(s, "nr.c2", w, w, {1, 3, 3}, kReluGain, rng);
  init_conv(s, "nr.rgb", w, 3, {1, 1, 1}, kLinearGain, rng);
}

/// conv(x, demod(w * style)) + b for a [Ci, 1, H, W] input and [Ci] style.
template <class T>
Var modulated_conv(Graph<T>& g, ParamBinder<T>& P, const std::string& name, Var x, Var style) {
  Var w = ad::mul_axis(g, P(name + ".w"), style, 1);
  Var norm = ad::pow_scalar(g, ad::add_scalar(g, ad::sum_rows(g, ad::mul(g, w, w)), 1e-8), -0.5);
  Var wd = ad::mul_axis(g, w, norm, 0);
  return ad::conv(g, x, wd, P(name + ".b"), ad::ConvSpec{{1, 1, 1}, {0, 1, 1}});
}

/// Feature image [M_f, 1, H_f, W_f] -> RGB [3, 2 H_f, 2 W_f] in (0, 1).
template <class T>
Var neural_render(Graph<T>& g, ParamBinder<T>& P, const ArchConfig& a, Var feat, Var z) {
  const Shape fs = g.shape(feat);
  if (fs.size() != 4 || fs[0] != a.feat_dim || fs[1] != 1)
    throw std::invalid_argument("neural_render: expected [" + std::to_string(a.feat_dim) + ",1,H,W] features, got " +
                                ad::shape_str(fs));
  Var wl = ad::leaky_relu(g, dense(g, P, "nr.map", ad::reshape(g, z, Shape{1, static_cast<int>(g.value(z).size())})));
  Var s1 = ad::reshape(g, dense(g, P, "nr.s1", wl), Shape{a.feat_dim});
  Var s2 = ad::reshape(g, dense(g, P, "nr.s2", wl), Shape{a.render_width});
  Var h = ad::leaky_relu(g, modulated_conv(g, P, "nr.c1", feat, s1));
  h = ad::upsample_nearest(g, h, {1, 2, 2});
  h = ad::leaky_relu(g, modulated_conv(g, P, "nr.c2", h, s2));
  Var rgb = ad::sigmoid(g, conv_layer(g, P, "nr.rgb", h));
  return ad::reshape(g, rgb, Shape{3, 2 * fs[2], 2 * fs[3]});
}

}  // namespace nff

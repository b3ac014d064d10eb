// SPDX-License-Identifier: Apache-2.0
#pragma once

// Small convolutional discriminators: a stride-2 conv stack with softplus
// activations down to at most 4x4, then a linear logit. Softplus keeps the
// network twice differentiable, which the R1 parameter gradient needs.

#include <random>
#include <string>
#include <vector>

#include "nff/generators/layers.hpp"

namespace nff {

struct DiscConfig {
  std::string name = "di";
  int height = 32, width = 32;
  int base = 8;      // channels of the first layer; doubled at each stride, capped at 4x
  int stride_first = 1;
};

/// Image-level discriminator for H x W inputs.
inline DiscConfig image_disc(int height, int width) { return {"di", height, width, 8, 1}; }

/// Patch discriminator on kPatchSize inputs; narrower and downsampling immediately.
inline DiscConfig patch_disc(int size) { return {"dp", size, size, 4, 2}; }

namespace detail {

struct DiscLayer {
  int ci, co, stride;
};

inline std::vector<DiscLayer> disc_layers(const DiscConfig& c, int& h, int& w) {
  std::vector<DiscLayer> out;
  h = c.height;
  w = c.width;
  int ch = 3, width = c.base, stride = c.stride_first;
  while (true) {
    out.push_back({ch, width, stride});
    if (stride == 2) {
      h = (h + 1) / 2;
      w = (w + 1) / 2;
    }
    ch = width;
    width = std::min(width * 2, 4 * c.base);
    stride = 2;
    if (std::min(h, w) <= 4) break;
  }
  return out;
}

}  // namespace detail

inline void init_discriminator(ParamStore& s, const DiscConfig& c, std::mt19937_64& rng) {
  int h, w;
  const auto layers = detail::disc_layers(c, h, w);
  for (std::size_t i = 0; i < layers.size(); ++i)
    init_conv(s, c.name + ".c" + std::to_string(i), layers[i].ci, layers[i].co, {1, 3, 3}, kReluGain, rng);
  init_dense(s, c.name + ".out", layers.back().co * h * w, 1, kLinearGain, rng);
}

/// Logit [1] for an RGB image [3, H, W].
template <class T>
Var discriminate(Graph<T>& g, ParamBinder<T>& P, const DiscConfig& c, Var x) {
  const Shape s = g.shape(x);
  if (s.size() != 3 || s[0] != 3 || s[1] != c.height || s[2] != c.width)
    throw std::invalid_argument("discriminator: expected [3," + std::to_string(c.height) + "," +
                                std::to_string(c.width) + "] input, got " + ad::shape_str(s));
  int h, w;
  const auto layers = detail::disc_layers(c, h, w);
  Var a = ad::reshape(g, ad::add_scalar(g, ad::scale(g, x, 2.0), -1.0), Shape{3, 1, s[1], s[2]});
  for (std::size_t i = 0; i < layers.size(); ++i)
    a = ad::softplus(g, conv_layer(g, P, c.name + ".c" + std::to_string(i), a, layers[i].stride));
  const int n = static_cast<int>(g.value(a).size());
  Var out = dense(g, P, c.name + ".out", ad::reshape(g, a, Shape{1, n}));
  return ad::reshape(g, out, Shape{1});
}

}  // namespace nff

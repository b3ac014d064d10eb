// SPDX-License-Identifier: Apache-2.0
#pragma once

// Occlusion-aware object patches: crop(rgb * up2(alpha_k)) over the projected
// rectangle of box k, optionally rescaled for the patch discriminator.

#include <stdexcept>

#include "nff/autodiff/ops.hpp"
#include "nff/scene/camera.hpp"

namespace nff {

using ad::Graph;
using ad::Shape;
using ad::Tensor;
using ad::Var;

inline constexpr int kPatchSize = 128;
inline constexpr int kMinVisiblePixels = 64;

/// rgb [3, H, W], alpha [H/2, W/2] (or [1, H/2, W/2]) -> patch [3, h, w].
inline Tensor<double> extract_patch(const Tensor<double>& rgb, const Tensor<double>& alpha, const PixelRect& rect) {
  if (rect.empty()) throw std::invalid_argument("extract_patch: empty rectangle");
  const int H = rgb.dim(1), W = rgb.dim(2);
  if (static_cast<int>(alpha.size()) != (H / 2) * (W / 2) || H % 2 || W % 2)
    throw std::invalid_argument("extract_patch: alpha map must be half the RGB resolution");
  if (rect.x0 < 0 || rect.y0 < 0 || rect.x1 > W || rect.y1 > H)
    throw std::invalid_argument("extract_patch: rectangle outside the image");
  const int h = rect.height(), w = rect.width(), Wf = W / 2;
  Tensor<double> out(Shape{3, h, w});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int Y = rect.y0 + y, X = rect.x0 + x;
        out.at(c, y, x) = rgb.at(c, Y, X) * alpha[static_cast<std::size_t>(Y / 2) * Wf + X / 2];
      }
  return out;
}

/// Differentiable form: rgb [3, H, W], alpha [1, 1, H/2, W/2]. Values match
/// extract_patch exactly.
template <class T>
Var patch_var(Graph<T>& g, Var rgb, Var alpha, const PixelRect& rect) {
  if (rect.empty()) throw std::invalid_argument("extract_patch: empty rectangle");
  const Shape rs = g.shape(rgb);
  Var up = ad::upsample_nearest(g, alpha, {1, 2, 2});
  up = ad::reshape(g, up, Shape{1, rs[1], rs[2]});
  Var masked = ad::mul(g, rgb, ad::concat(g, {up, up, up}, 0));
  return ad::crop2d(g, masked, rect.y0, rect.x0, rect.height(), rect.width());
}

/// Bilinear rescale of a [3, h, w] patch to size x size.
inline Tensor<double> rescale_patch(const Tensor<double>& patch, int size = kPatchSize) {
  Graph<double> g;
  Var p = g.constant(patch);
  return g.value(ad::resize_bilinear(g, p, size, size));
}

/// RGB pixels inside `rect` whose upsampled alpha exceeds one half.
inline int visible_pixels(const Tensor<double>& alpha, int rgb_width, const PixelRect& rect) {
  int n = 0;
  const int Wf = rgb_width / 2;
  for (int y = rect.y0; y < rect.y1; ++y)
    for (int x = rect.x0; x < rect.x1; ++x) n += alpha[static_cast<std::size_t>(y / 2) * Wf + x / 2] > 0.5;
  return n;
}

}  // namespace nff

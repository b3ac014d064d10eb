// SPDX-License-Identifier: Apache-2.0
#pragma once

// Masked reconstruction loss with a Gaussian-pyramid feature distance, and the
// non-saturating adversarial losses with R1.

#include <cmath>
#include <functional>
#include <vector>

#include "nff/autodiff/ops.hpp"
#include "nff/autodiff/second_order.hpp"
#include "nff/scene/camera.hpp"

namespace nff {

using ad::Graph;
using ad::Shape;
using ad::Tensor;
using ad::Var;

/// 1 for stuff/sky pixels, 0 inside the union of projected object rectangles.
inline Tensor<double> build_stuff_mask(const Camera& cam, const ObjectLayout& layout) {
  Tensor<double> m(Shape{cam.height, cam.width}, 1.0);
  for (const auto& [k, box] : layout.live_boxes()) {
    (void)k;
    if (auto r = project_box(cam, box))
      for (int y = r->y0; y < r->y1; ++y)
        for (int x = r->x0; x < r->x1; ++x) m.at(y, x) = 0.0;
  }
  return m;
}

inline constexpr int kPyramidLevels = 3;

/// [3, H, W] -> blurred (binomial 5-tap) and 2x decimated [3, ceil(H/2), ceil(W/2)].
template <class T>
Var pyramid_down(Graph<T>& g, Var x) {
  static const double k[5] = {1 / 16., 4 / 16., 6 / 16., 4 / 16., 1 / 16.};
  const Shape s = g.shape(x);
  Tensor<T> w(Shape{1, 1, 1, 5, 5});
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) w[static_cast<std::size_t>(i * 5 + j)] = T(k[i] * k[j]);
  Var in = ad::reshape(g, x, Shape{1, s[0], s[1], s[2]});
  Var out = ad::conv(g, in, g.constant(std::move(w)), Var{}, ad::ConvSpec{{1, 2, 2}, {0, 2, 2}});
  const Shape o = g.shape(out);
  return ad::reshape(g, out, Shape{s[0], o[2], o[3]});
}

/// Sum over pyramid levels of the per-element mean squared difference.
template <class T>
Var pyramid_distance(Graph<T>& g, Var a, Var b, int levels = kPyramidLevels) {
  Var d = ad::sub(g, a, b);
  Var total = ad::mean(g, ad::mul(g, d, d));
  for (int l = 1; l < levels; ++l) {
    const Shape s = g.shape(d);
    if (s[1] < 2 || s[2] < 2) break;
    d = pyramid_down(g, d);
    total = ad::add(g, total, ad::mean(g, ad::mul(g, d, d)));
  }
  return total;
}

/// Pluggable image distance on [3, H, W] pairs.
template <class T>
using FeatureDistance = std::function<Var(Graph<T>&, Var, Var)>;

template <class T>
struct ReconLoss {
  Var total, mse, feat;
};

/// mse = sum(M * (I - I_hat)^2) / #unmasked pixels; feat = lambda * d(M I, M I_hat).
/// All-zero masks give 0.
template <class T>
ReconLoss<T> masked_recon_loss(Graph<T>& g, Var pred, const Tensor<double>& target, const Tensor<double>& mask,
                               double lambda_feat, FeatureDistance<T> dist = {}) {
  const Shape ps = g.shape(pred);
  if (ps.size() != 3 || ps[0] != 3 || target.shape != ps)
    throw std::invalid_argument("masked_recon_loss: prediction and target must both be [3,H,W]");
  if (mask.rank() != 2 || mask.dim(0) != ps[1] || mask.dim(1) != ps[2])
    throw std::invalid_argument("masked_recon_loss: mask must be [H,W]");
  double count = 0;
  for (double v : mask.data) count += v;
  Tensor<T> m3(ps), tm(ps);
  const std::size_t hw = mask.size();
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < hw; ++i) {
      m3[c * hw + i] = T(mask[i]);
      tm[c * hw + i] = T(mask[i] * target[c * hw + i]);
    }
  ReconLoss<T> L;
  if (count == 0) {
    L.mse = L.feat = L.total = g.constant(Tensor<T>::scalar(T(0)));
    return L;
  }
  Var mp = ad::mul(g, pred, g.constant(std::move(m3)));
  Var tv = g.constant(std::move(tm));
  Var d = ad::sub(g, mp, tv);
  L.mse = ad::scale(g, ad::sum(g, ad::mul(g, d, d)), 1.0 / count);
  if (lambda_feat != 0) {
    Var fd = dist ? dist(g, mp, tv) : pyramid_distance(g, mp, tv);
    L.feat = ad::scale(g, fd, lambda_feat);
    L.total = ad::add(g, L.mse, L.feat);
  } else {
    L.feat = g.constant(Tensor<T>::scalar(T(0)));
    L.total = L.mse;
  }
  return L;
}

/// Non-saturating generator loss softplus(-D(fake)).
template <class T>
Var gan_loss_g(Graph<T>& g, Var logit) {
  return ad::mean(g, ad::softplus(g, ad::scale(g, logit, -1.0)));
}

struct DiscriminatorLoss {
  double real_term = 0, fake_term = 0, r1 = 0, total = 0;
  double real_logit = 0, fake_logit = 0;
  ad::TensorMap grads;
};

/// softplus(-D(real)) + softplus(D(fake)) + lambda_r1 ||grad_x D(real)||^2 for one
/// real and one fake sample, with parameter gradients. `build(g, P, x)` records D.
template <class Build>
DiscriminatorLoss gan_loss_d(const ad::ParamStore& D, const Tensor<double>& real, const Tensor<double>& fake,
                             double lambda_r1, Build&& build) {
  using ad::detail::softplus;
  DiscriminatorLoss L;
  auto pen = ad::input_grad_penalty(D, real, build);
  L.real_logit = pen.output;
  Graph<double> g;
  ad::ParamBinder<double> P(g, D, true);
  Var fo = build(g, P, g.constant(fake));
  L.fake_logit = g.value(fo)[0];
  if (!std::isfinite(L.real_logit) || !std::isfinite(L.fake_logit))
    throw std::domain_error("discriminator produced a non-finite logit");
  Var fl = ad::softplus(g, fo);
  g.backward(fl);
  L.grads = P.grads();
  {
    Graph<double> h;
    ad::ParamBinder<double> Q(h, D, true);
    Var ro = build(h, Q, h.constant(real));
    h.backward(ad::softplus(h, ad::scale(h, ro, -1.0)));
    ad::accumulate(L.grads, Q.grads());
  }
  ad::accumulate(L.grads, pen.param_grad, lambda_r1);
  L.real_term = softplus(-L.real_logit);
  L.fake_term = softplus(L.fake_logit);
  L.r1 = pen.penalty;
  L.total = L.real_term + L.fake_term + lambda_r1 * L.r1;
  return L;
}

}  // namespace nff

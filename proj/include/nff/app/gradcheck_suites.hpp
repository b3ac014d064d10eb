// SPDX-License-Identifier: Apache-2.0
#pragma once

// Registered finite-difference suites: primitives, generator heads, compositor
// and renderer, losses, and the end-to-end paths (pixel -> z_wld, pixel ->
// z_obj, loss -> generator parameters, R1 -> discriminator parameters).

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "nff/app/presets.hpp"
#include "nff/autodiff/gradcheck.hpp"
#include "nff/objectives/discriminator.hpp"
#include "nff/objectives/losses.hpp"
#include "nff/render/patch.hpp"
#include "nff/render/render.hpp"

namespace nff {

inline constexpr double kPrimitiveTol = 1e-4;
inline constexpr double kEndToEndTol = 1e-3;

inline const std::vector<std::string>& gradcheck_components() {
  static const std::vector<std::string> c{"substrate", "generators", "compositor", "losses"};
  return c;
}

namespace gc {

using ad::check_gradients;
using ad::GradBuild;
using ad::GradCheckResult;
using ad::GraphHook;

inline Tensor<double> rand_tensor(Shape s, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(std::move(s));
  for (auto& v : t.data) v = u(rng);
  return t;
}

inline Tensor<double> signed_away_from_zero(Shape s, std::uint64_t seed) {
  auto t = rand_tensor(std::move(s), seed, 0.1, 1.0);
  for (std::size_t i = 0; i < t.size(); i += 2) t[i] = -t[i];
  return t;
}

/// Small network configuration for the suites.
inline ArchConfig suite_arch() {
  ArchConfig a;
  a.z_dim = 6;
  a.feat_dim = 3;
  a.grid_channels = 3;
  a.vol_width = 3;
  a.spade_hidden = 3;
  a.z_proj = 2;
  a.pe_bands = 2;
  a.sky_bands = 1;
  a.stf_depth = 2;
  a.stf_hidden = 6;
  a.obj_depth = 3;
  a.obj_hidden = 6;
  a.obj_skip = 2;
  a.sky_depth = 1;
  a.sky_hidden = 6;
  a.render_width = 3;
  a.points_per_voxel = 3;
  a.points_per_object = 4;
  return a;
}

/// 8^3 scene with a floor, a wall, and one box, seen by a 8x8 camera.
inline Scene suite_scene() {
  Scene s;
  s.world_seed = 3;
  s.arch = suite_arch();
  s.grid = SemanticVoxelGrid({8, 8, 8}, 3, Vec3::Zero(), Vec3::Ones());
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) s.grid.set({x, y, 0}, 1);
  for (int z = 1; z < 5; ++z)
    for (int x = 0; x < 8; ++x) s.grid.set({x, 7, z}, 2);
  ObjectBox b;
  b.translation = Vec3(4.0, 4.5, 1.75);
  b.size = Vec3(2.0, 2.0, 1.5);
  b.rotation = axis_rotation(2, 20);
  b.latent_seed = 11;
  s.layout.insert(b);
  s.camera = default_camera(8, 8);
  s.camera.position = Vec3(4.0, 0.5, 2.5);
  s.camera.rotation = heading_rotation(90.0, 20.0);
  return s;
}

/// Check with selected parameters of `store` as differentiated inputs, followed
/// by `extra` inputs. `build` receives a binder with those parameters bound.
using ParamBuild = std::function<Var(Graph<double>&, ParamBinder<double>&, const std::vector<Var>&)>;

inline GradCheckResult check_params(const std::string& name, const ParamStore& store,
                                    const std::vector<std::string>& params, const std::vector<Tensor<double>>& extra,
                                    const ParamBuild& build, double tol, const GraphHook& hook) {
  std::vector<Tensor<double>> inputs;
  for (const auto& p : params) inputs.push_back(store.get(p));
  inputs.insert(inputs.end(), extra.begin(), extra.end());
  const std::size_t np = params.size();
  return check_gradients(
      name, inputs,
      [&](Graph<double>& g, const std::vector<Var>& v) {
        ParamBinder<double> P(g, store, false);
        for (std::size_t i = 0; i < np; ++i) P.bind(params[i], v[i]);
        return build(g, P, std::vector<Var>(v.begin() + static_cast<std::ptrdiff_t>(np), v.end()));
      },
      tol, 1e-4, 7, hook);
}

inline std::vector<GradCheckResult> substrate(const GraphHook& hook) {
  using namespace ad;
  std::vector<GradCheckResult> r;
  auto add_check = [&](const std::string& n, std::vector<Tensor<double>> in, const GradBuild& b) {
    r.push_back(check_gradients(n, in, b, kPrimitiveTol, 1e-4, 7, hook));
  };
  const auto a = rand_tensor({2, 3}, 20), b = rand_tensor({2, 3}, 21);
  add_check("add", {a, b}, [](auto& g, auto& v) { return add(g, v[0], v[1]); });
  add_check("sub", {a, b}, [](auto& g, auto& v) { return sub(g, v[0], v[1]); });
  add_check("mul", {a, b}, [](auto& g, auto& v) { return mul(g, v[0], v[1]); });
  add_check("scale", {a}, [](auto& g, auto& v) { return scale(g, v[0], -2.5); });
  add_check("add_scalar", {a}, [](auto& g, auto& v) { return add_scalar(g, v[0], 3.0); });
  add_check("sin", {a}, [](auto& g, auto& v) { return ad::sin(g, v[0]); });
  const auto nz = signed_away_from_zero({3, 4}, 22);
  add_check("relu", {nz}, [](auto& g, auto& v) { return relu(g, v[0]); });
  add_check("leaky_relu", {nz}, [](auto& g, auto& v) { return leaky_relu(g, v[0]); });
  add_check("softplus", {nz}, [](auto& g, auto& v) { return softplus(g, v[0]); });
  add_check("sigmoid", {nz}, [](auto& g, auto& v) { return sigmoid(g, v[0]); });
  add_check("pow", {rand_tensor({3, 4}, 23, 0.5, 2.0)}, [](auto& g, auto& v) { return pow_scalar(g, v[0], -0.5); });
  const auto c = rand_tensor({2, 3, 4}, 24);
  add_check("sum", {c}, [](auto& g, auto& v) { return sum(g, v[0]); });
  add_check("mean", {c}, [](auto& g, auto& v) { return mean(g, v[0]); });
  add_check("reshape", {c}, [](auto& g, auto& v) { return reshape(g, v[0], Shape{6, 4}); });
  add_check("sum_rows", {c}, [](auto& g, auto& v) { return sum_rows(g, v[0]); });
  add_check("slice", {c}, [](auto& g, auto& v) { return slice(g, v[0], 1, 1, 3); });
  add_check("transpose", {rand_tensor({3, 5}, 25)}, [](auto& g, auto& v) { return transpose(g, v[0]); });
  add_check("concat", {c, rand_tensor({2, 2, 4}, 26)}, [](auto& g, auto& v) { return concat(g, {v[0], v[1]}, 1); });
  add_check("gather_rows", {rand_tensor({3, 5}, 27)}, [](auto& g, auto& v) { return gather_rows(g, v[0], {2, 0, 2, 1}); });
  add_check("mul_axis", {c, rand_tensor({3}, 28)}, [](auto& g, auto& v) { return mul_axis(g, v[0], v[1], 1); });
  add_check("broadcast_spatial", {rand_tensor({3}, 29)},
            [](auto& g, auto& v) { return broadcast_spatial(g, v[0], Shape{2, 3}); });
  add_check("affine", {rand_tensor({5, 4}, 30), rand_tensor({3, 4}, 31), rand_tensor({3}, 32)},
            [](auto& g, auto& v) { return affine(g, v[0], v[1], v[2]); });
  add_check("conv", {rand_tensor({2, 4, 5, 3}, 40), rand_tensor({3, 2, 3, 3, 3}, 41), rand_tensor({3}, 42)},
            [](auto& g, auto& v) { return conv(g, v[0], v[1], v[2], ConvSpec{{1, 1, 1}, {1, 1, 1}}); });
  add_check("conv_stride2", {rand_tensor({2, 4, 4, 4}, 43), rand_tensor({3, 2, 3, 3, 3}, 44)},
            [](auto& g, auto& v) { return conv(g, v[0], v[1], Var{}, ConvSpec{{2, 2, 2}, {1, 1, 1}}); });
  add_check("upsample_nearest", {rand_tensor({2, 2, 3, 2}, 50)},
            [](auto& g, auto& v) { return upsample_nearest(g, v[0], {2, 2, 2}); });
  add_check("instance_norm", {rand_tensor({3, 2, 3, 2}, 51)}, [](auto& g, auto& v) { return instance_norm(g, v[0]); });
  add_check("trilinear_gather", {rand_tensor({3, 10}, 52)}, [](auto& g, auto& v) {
    return weighted_gather(g, v[0], {0, 3, 9, 1, 1, 2, 5, 7}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.25, 0.125, 0.125}, 4);
  });
  add_check("crop2d", {rand_tensor({2, 5, 6}, 53)}, [](auto& g, auto& v) { return crop2d(g, v[0], 1, 2, 3, 3); });
  add_check("resize_bilinear", {rand_tensor({2, 3, 4}, 54)},
            [](auto& g, auto& v) { return resize_bilinear(g, v[0], 7, 9); });
  return r;
}

inline std::vector<GradCheckResult> generators(const GraphHook& hook) {
  std::vector<GradCheckResult> r;
  const Scene s = suite_scene();
  const ArchConfig& a = s.arch;
  const ParamStore store = init_generator(a, s.grid.num_labels, 17);
  std::mt19937_64 rng(5);
  std::vector<double> pts;
  std::uniform_real_distribution<double> u(0.5, 7.5), uz(0.2, 4.0);
  for (int i = 0; i < 6; ++i) pts.insert(pts.end(), {u(rng), u(rng), uz(rng)});
  const auto psi_at = rand_tensor({6, a.grid_channels}, 60);
  r.push_back(check_params("stuff_field", store, {"stf.l0.w", "stf.out.w"}, {psi_at},
                           [&](Graph<double>& g, ParamBinder<double>& P, const std::vector<Var>& v) {
                             auto f = stuff_field(g, P, a, v[0], s.grid, pts);
                             return ad::concat(g, {f.feat, ad::reshape(g, f.sigma, Shape{6, 1})}, 1);
                           },
                           kPrimitiveTol, hook));
  std::vector<double> xo;
  std::uniform_real_distribution<double> c(-0.5, 0.5);
  for (int i = 0; i < 5; ++i) xo.insert(xo.end(), {c(rng), c(rng), c(rng)});
  r.push_back(check_params("object_field", store, {"obj.l2.w", "obj.out.b"}, {rand_tensor({a.z_dim}, 61)},
                           [&](Graph<double>& g, ParamBinder<double>& P, const std::vector<Var>& v) {
                             auto f = object_field(g, P, a, v[0], xo);
                             return ad::concat(g, {f.feat, ad::reshape(g, f.sigma, Shape{5, 1})}, 1);
                           },
                           kPrimitiveTol, hook));
  std::vector<double> dirs;
  for (int i = 0; i < 4; ++i) {
    Vec3 d(c(rng), c(rng), c(rng));
    d.normalize();
    dirs.insert(dirs.end(), {d[0], d[1], d[2]});
  }
  r.push_back(check_params("sky_feature", store, {"sky.l0.w"}, {rand_tensor({a.z_dim}, 62)},
                           [&](Graph<double>& g, ParamBinder<double>& P, const std::vector<Var>& v) {
                             return sky_feature(g, P, a, v[0], dirs);
                           },
                           kPrimitiveTol, hook));
  r.push_back(check_params("feature_grid", store, {"vol.head.w", "vol.blk0.n1.gamma.w"}, {rand_tensor({a.z_dim}, 63)},
                           [&](Graph<double>& g, ParamBinder<double>& P, const std::vector<Var>& v) {
                             return feature_grid(g, P, v[0], s.grid);
                           },
                           kPrimitiveTol, hook));
  r.push_back(check_gradients(
      "trilerp_points", {rand_tensor({a.grid_channels, 8, 8, 8}, 64)},
      [&](Graph<double>& g, const std::vector<Var>& v) { return trilerp_points(g, v[0], s.grid, pts); }, kPrimitiveTol,
      1e-4, 7, hook));
  return r;
}

inline std::vector<GradCheckResult> compositor(const GraphHook& hook) {
  std::vector<GradCheckResult> r;
  auto plan = std::make_shared<CompositePlan>();
  plan->refs = {{0, 0, 0.3, 0.1}, {1, 0, 0.2, 0.2}, {0, 1, 0.4, 0.5}, {1, 1, 0.5, 0.3}, {1, 2, 0.1, 0.4}, {0, 2, 0.6, 0.9}};
  plan->offsets = {0, 3, 3, 6};
  r.push_back(check_gradients(
      "composite",
      {rand_tensor({3, 2}, 70), rand_tensor({3, 2}, 71), rand_tensor({3}, 72, 0.1, 3), rand_tensor({3}, 73, 0.1, 3),
       rand_tensor({3, 2}, 74)},
      [plan](Graph<double>& g, const std::vector<Var>& v) { return composite(g, {v[0], v[1]}, {v[2], v[3]}, v[4], plan); },
      kPrimitiveTol, 1e-4, 7, hook));

  const Scene s = suite_scene();
  const ArchConfig& a = s.arch;
  const ParamStore store = init_generator(a, s.grid.num_labels, 19);
  r.push_back(check_params("neural_render", store, {"nr.c1.w", "nr.s2.w"},
                           {rand_tensor({a.feat_dim, 1, 4, 4}, 75), rand_tensor({a.z_dim}, 76)},
                           [&](Graph<double>& g, ParamBinder<double>& P, const std::vector<Var>& v) {
                             return neural_render(g, P, a, v[0], v[1]);
                           },
                           kPrimitiveTol, hook));
  r.push_back(check_gradients(
      "extract_patch", {rand_tensor({3, 8, 8}, 77, 0, 1), rand_tensor({1, 1, 4, 4}, 78, 0, 1)},
      [](Graph<double>& g, const std::vector<Var>& v) { return patch_var(g, v[0], v[1], PixelRect{1, 2, 7, 6}); },
      kPrimitiveTol, 1e-4, 7, hook));

  // End-to-end: full render of the suite scene with respect to the latents.
  const RenderPlan rp = plan_render(s.grid, s.layout, a, s.camera, Jitter{5, true});
  auto z_wld = world_latent(s.world_seed, a.z_dim), z_obj = object_latent(s.layout.at(0).latent_seed, a.z_dim);
  auto as_tensor = [](const std::vector<double>& z) { return Tensor<double>(Shape{static_cast<int>(z.size())}, z); };
  r.push_back(check_gradients(
      "pixel->z_wld", {as_tensor(z_wld)},
      [&](Graph<double>& g, const std::vector<Var>& v) {
        ParamBinder<double> P(g, store, false);
        Latents<double> L{v[0], {g.constant(as_tensor(z_obj))}};
        return render_rgb(g, P, s, rp, L).rgb;
      },
      kEndToEndTol, 1e-4, 7, hook));
  r.push_back(check_gradients(
      "pixel->z_obj", {as_tensor(z_obj)},
      [&](Graph<double>& g, const std::vector<Var>& v) {
        ParamBinder<double> P(g, store, false);
        Latents<double> L{g.constant(as_tensor(z_wld)), {v[0]}};
        return render_rgb(g, P, s, rp, L).rgb;
      },
      kEndToEndTol, 1e-4, 7, hook));
  return r;
}

inline std::vector<GradCheckResult> losses(const GraphHook& hook) {
  std::vector<GradCheckResult> r;
  const auto target = rand_tensor({3, 8, 8}, 80, 0, 1);
  Tensor<double> mask(Shape{8, 8}, 1.0);
  for (int y = 2; y < 5; ++y)
    for (int x = 3; x < 6; ++x) mask.at(y, x) = 0.0;
  r.push_back(check_gradients(
      "masked_recon_loss", {rand_tensor({3, 8, 8}, 81, 0, 1)},
      [&](Graph<double>& g, const std::vector<Var>& v) { return masked_recon_loss(g, v[0], target, mask, 0.5).total; },
      kPrimitiveTol, 1e-4, 7, hook));
  r.push_back(check_gradients("gan_loss_g", {rand_tensor({1}, 82)},
                              [](Graph<double>& g, const std::vector<Var>& v) { return gan_loss_g(g, v[0]); },
                              kPrimitiveTol, 1e-4, 7, hook));

  // Discriminator on 8x8 inputs.
  const DiscConfig dc{"di", 8, 8, 2, 1};
  ParamStore D;
  std::mt19937_64 rng(9);
  init_discriminator(D, dc, rng);
  r.push_back(check_params("discriminator", D, {"di.c0.w", "di.out.w"}, {rand_tensor({3, 8, 8}, 83, 0, 1)},
                           [&](Graph<double>& g, ParamBinder<double>& P, const std::vector<Var>& v) {
                             return discriminate(g, P, dc, v[0]);
                           },
                           kPrimitiveTol, hook));

  // End-to-end: reconstruction loss with respect to generator parameters.
  const Scene s = suite_scene();
  const ParamStore store = init_generator(s.arch, s.grid.num_labels, 23);
  const RenderPlan rp = plan_render(s.grid, s.layout, s.arch, s.camera, Jitter{5, true});
  const auto tgt = rand_tensor({3, 8, 8}, 84, 0, 1);
  const auto smask = build_stuff_mask(s.camera, s.layout);
  r.push_back(check_params("loss->theta", store, {"stf.out.w", "obj.out.w", "sky.out.b", "nr.rgb.w", "vol.head.w"},
                           {},
                           [&](Graph<double>& g, ParamBinder<double>& P, const std::vector<Var>&) {
                             auto L = latent_leaves<double>(g, s);
                             Var rgb = render_rgb(g, P, s, rp, L).rgb;
                             return masked_recon_loss(g, rgb, tgt, smask, 0.5).total;
                           },
                           kEndToEndTol, hook));

  // End-to-end: R1 penalty with respect to discriminator parameters.
  {
    const auto real = rand_tensor({3, 8, 8}, 85, 0, 1);
    auto build = [&](auto& g, auto& P, Var x) { return discriminate(g, P, dc, x); };
    auto pen = ad::input_grad_penalty(D, real, build);
    GradCheckResult res;
    res.name = "R1->phi";
    res.tolerance = kEndToEndTol;
    for (const std::string name : {"di.c0.w", "di.c1.b", "di.out.w"}) {
      ParamStore Dp = D;
      const auto& analytic = pen.param_grad.at(name);
      std::vector<double> numeric(analytic.size());
      for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double x0 = D.get(name)[i];
        Dp.get(name)[i] = x0 + 1e-4;
        const double fp = ad::input_grad_penalty(Dp, real, build).penalty;
        Dp.get(name)[i] = x0 - 1e-4;
        const double fm = ad::input_grad_penalty(Dp, real, build).penalty;
        Dp.get(name)[i] = x0;
        numeric[i] = (fp - fm) / 2e-4;
      }
      res.max_rel_error = std::max(res.max_rel_error, ad::relative_error(analytic.data, numeric));
    }
    res.passed = std::isfinite(res.max_rel_error) && res.max_rel_error <= res.tolerance;
    r.push_back(res);
  }
  return r;
}

}  // namespace gc

/// Runs the suites for `component` ("all" runs every suite). A non-empty
/// `corrupt` doubles that op's backward rule everywhere (harness self-test).
inline std::vector<ad::GradCheckResult> run_gradcheck(const std::string& component, const std::string& corrupt = "") {
  const ad::GraphHook hook = corrupt.empty() ? ad::GraphHook{} : ad::corrupt_op(corrupt);
  std::vector<ad::GradCheckResult> out;
  auto append = [&](std::vector<ad::GradCheckResult> r) { out.insert(out.end(), r.begin(), r.end()); };
  bool known = component == "all";
  if (component == "all" || component == "substrate") known = true, append(gc::substrate(hook));
  if (component == "all" || component == "generators") known = true, append(gc::generators(hook));
  if (component == "all" || component == "compositor") known = true, append(gc::compositor(hook));
  if (component == "all" || component == "losses") known = true, append(gc::losses(hook));
  if (!known) throw UsageError("unknown gradcheck component '" + component + "'");
  return out;
}

}  // namespace nff

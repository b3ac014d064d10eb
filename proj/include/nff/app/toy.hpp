// SPDX-License-Identifier: Apache-2.0
#pragma once

// Toy adversarial training at low resolution. "Real" images are flat-shaded
// raycasts of procedural fixtures (labels and boxes colored, one light), with
// exact per-object visibility masks for the real object patches. The loop
// alternates an image discriminator step, a patch discriminator step and a
// generator step, and keeps an EMA of the generator.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "nff/app/presets.hpp"
#include "nff/autodiff/checkpoint.hpp"
#include "nff/autodiff/optim.hpp"
#include "nff/io/scene_json.hpp"
#include "nff/objectives/discriminator.hpp"
#include "nff/objectives/losses.hpp"
#include "nff/render/patch.hpp"
#include "nff/render/render.hpp"
#include "nff/sampling/samplers.hpp"

namespace nff {

struct ShadedView {
  Tensor<double> rgb;      // [3, H, W]
  Tensor<double> objects;  // [H/2 * W/2, slots]: 1 where the feature-pixel ray first hits the object
};

namespace detail {

struct SurfaceHit {
  double t = std::numeric_limits<double>::infinity();
  int label = 0;   // stuff label, or 0
  int slot = -1;   // object slot, or -1
  Vec3 normal = Vec3::UnitZ();
};

inline SurfaceHit first_surface(const Scene& s, const Ray& ray) {
  SurfaceHit h;
  const auto hits = traverse_nonempty(s.grid, ray, 1);
  if (!hits.empty()) {
    h.t = hits[0].t_enter;
    h.label = s.grid.label(hits[0].cell);
    const Vec3 p = ray.origin + h.t * ray.dir;
    const Vec3 lo = s.grid.voxel_center(hits[0].cell) - 0.5 * s.grid.spacing;
    double best = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a)
      for (double face : {lo[a], lo[a] + s.grid.spacing[a]}) {
        const double d = std::abs(p[a] - face) / s.grid.spacing[a];
        if (d < best) {
          best = d;
          h.normal = Vec3::Zero();
          h.normal[a] = ray.dir[a] > 0 ? -1.0 : 1.0;
        }
      }
  }
  for (const auto& [k, box] : s.layout.live_boxes()) {
    auto span = ray_box_intersect(ray, box);
    if (!span || span->first >= h.t) continue;
    h.t = span->first;
    h.label = 0;
    h.slot = static_cast<int>(k);
    const Vec3 q = object_from_world(ray.origin + h.t * ray.dir, box);
    int a = 0;
    q.cwiseAbs().maxCoeff(&a);
    Vec3 n = Vec3::Zero();
    n[a] = q[a] > 0 ? 1.0 : -1.0;
    h.normal = box.R() * n;
  }
  return h;
}

inline Vec3 label_color(int label) {
  static const Vec3 palette[] = {{0.0, 0.0, 0.0},  {0.55, 0.55, 0.52}, {0.75, 0.2, 0.18}, {0.2, 0.65, 0.25},
                                 {0.2, 0.3, 0.75}, {0.85, 0.78, 0.2},  {0.6, 0.4, 0.3},   {0.4, 0.6, 0.65}};
  return palette[static_cast<std::size_t>(label) % 8];
}

inline Vec3 object_color(std::uint64_t seed) {
  UniformStream r(derive_seed(seed, 0x636f6c));
  return Vec3(0.15 + 0.8 * r.next(), 0.15 + 0.8 * r.next(), 0.15 + 0.8 * r.next());
}

}  // namespace detail

/// Flat-shaded raycast of a fixture scene.
inline ShadedView shade_fixture(const Scene& s, const Camera& cam) {
  cam.validate();
  ShadedView v;
  v.rgb = Tensor<double>(Shape{3, cam.height, cam.width});
  const Vec3 light = Vec3(0.3, -0.5, 0.8).normalized();
  for (const auto& ray : camera_rays(cam)) {
    const auto h = detail::first_surface(s, ray);
    Vec3 c;
    if (!std::isfinite(h.t)) {
      const double up = std::clamp(ray.dir[2], 0.0, 1.0);
      c = (1 - up) * Vec3(0.85, 0.9, 0.95) + up * Vec3(0.45, 0.65, 0.9);
    } else {
      const Vec3 base = h.slot >= 0 ? detail::object_color(s.layout.at(static_cast<std::size_t>(h.slot)).latent_seed)
                                    : detail::label_color(h.label);
      c = base * (0.55 + 0.45 * std::max(0.0, h.normal.dot(light)));
    }
    for (int ch = 0; ch < 3; ++ch) v.rgb.at(ch, ray.v, ray.u) = c[ch];
  }
  const Camera fc = cam.half();
  const int K = static_cast<int>(s.layout.slots());
  v.objects = Tensor<double>(Shape{fc.width * fc.height, std::max(K, 1)});
  for (const auto& ray : camera_rays(fc)) {
    const auto h = detail::first_surface(s, ray);
    if (h.slot >= 0) v.objects.at(ray.v * fc.width + ray.u, h.slot) = 1.0;
  }
  return v;
}

/// Column `slot` of a pixel-major [N, K] map as a flat [N] tensor.
inline Tensor<double> alpha_column(const Tensor<double>& alphas, int slot) {
  Tensor<double> a(Shape{alphas.dim(0)});
  for (int i = 0; i < alphas.dim(0); ++i) a[static_cast<std::size_t>(i)] = alphas.at(i, slot);
  return a;
}

struct ToyConfig {
  int steps = 300;
  int size = 32;
  int scenes = 4;
  int poses = 4;
  std::string preset = "clevr-w";
  std::uint64_t seed = 0;
  double lr_g = 2e-4, lr_d = 1e-4;
  double lambda_r1 = 10.0;
  double ema_decay = 0.999;
  std::string out_dir;
};

struct ToyRow {
  int step = 0;
  double d_image = 0, d_patch = 0, g = 0;
  double gap_image = 0, gap_patch = 0;  // real logit - fake logit
  bool patch = false;
};

struct ToyResult {
  std::vector<ToyRow> rows;
  int real_patches = 0;
};

namespace detail {

struct ToyView {
  std::size_t scene = 0;
  Camera camera;
};

/// Fake patch: the object with the largest projected rectangle, if any.
inline std::optional<std::pair<int, PixelRect>> pick_fake_object(const Scene& s, const Camera& cam) {
  std::optional<std::pair<int, PixelRect>> best;
  for (const auto& [k, box] : s.layout.live_boxes()) {
    auto r = project_box(cam, box);
    if (!r || r->empty()) continue;
    if (!best || r->area() > best->second.area()) best = {{static_cast<int>(k), *r}};
  }
  return best;
}

}  // namespace detail

inline ToyResult train_toy(const ToyConfig& cfg) {
  if (cfg.steps < 0 || cfg.size < 8 || cfg.size % 4 || cfg.scenes < 1 || cfg.poses < 1)
    throw UsageError("train-toy needs steps >= 0, size a multiple of 4 (>= 8), scenes >= 1, poses >= 1");
  std::vector<Scene> scenes;
  std::vector<detail::ToyView> views;
  for (int i = 0; i < cfg.scenes; ++i) {
    Scene s = make_preset(cfg.preset, derive_seed(cfg.seed, 0x73636e, static_cast<std::uint64_t>(i)), 32);
    s.arch = compact_arch();
    Camera base = default_camera(cfg.size, cfg.size);
    TrajectoryParams tp;
    tp.start = s.camera.position;
    tp.count = cfg.poses;
    tp.step = 0.5;
    tp.yaw_jitter_deg = 10.0;
    for (const auto& c : sample_trajectory(base, tp, derive_seed(cfg.seed, 0x706f73, static_cast<std::uint64_t>(i))))
      views.push_back({scenes.size(), c});
    scenes.push_back(std::move(s));
  }
  const ArchConfig arch = scenes[0].arch;
  const int labels = scenes[0].grid.num_labels;

  // Real pool.
  std::vector<Tensor<double>> real_images, real_patches;
  for (const auto& v : views) {
    const Scene& s = scenes[v.scene];
    auto shaded = shade_fixture(s, v.camera);
    for (const auto& [k, box] : s.layout.live_boxes()) {
      auto r = project_box(v.camera, box);
      if (!r) continue;
      auto a = alpha_column(shaded.objects, static_cast<int>(k));
      if (visible_pixels(a, v.camera.width, *r) >= kMinVisiblePixels)
        real_patches.push_back(rescale_patch(extract_patch(shaded.rgb, a, *r)));
    }
    real_images.push_back(std::move(shaded.rgb));
  }

  ParamStore G = init_generator(arch, labels, derive_seed(cfg.seed, 0x67656e));
  ParamStore DI, DP;
  const DiscConfig ci = image_disc(cfg.size, cfg.size), cp = patch_disc(kPatchSize);
  {
    std::mt19937_64 rng(derive_seed(cfg.seed, 0x646973));
    init_discriminator(DI, ci, rng);
    init_discriminator(DP, cp, rng);
  }
  ad::Adam opt_g(ad::AdamConfig{cfg.lr_g}), opt_di(ad::AdamConfig{cfg.lr_d}), opt_dp(ad::AdamConfig{cfg.lr_d});
  ad::Ema ema(G);
  std::mt19937_64 rng(derive_seed(cfg.seed, 0x746f79));

  namespace fs = std::filesystem;
  std::ofstream tsv;
  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    tsv.open(fs::path(cfg.out_dir) / "train.tsv", std::ios::binary);
    tsv << "step\td_image\td_patch\tg\tgap_image\tgap_patch\n";
    nlohmann::json meta = {{"seed", cfg.seed},         {"steps", cfg.steps},       {"size", cfg.size},
                           {"scenes", cfg.scenes},     {"poses", cfg.poses},       {"preset", cfg.preset},
                           {"lr_g", cfg.lr_g},         {"lr_d", cfg.lr_d},         {"lambda_r1", cfg.lambda_r1},
                           {"ema_decay", cfg.ema_decay}, {"real_patches", real_patches.size()},
                           {"arch", arch_to_json(arch)}};
    std::ofstream m(fs::path(cfg.out_dir) / "meta.json", std::ios::binary);
    m << dump_json(meta);
  }

  auto build_i = [&](auto& g, auto& P, Var x) { return discriminate(g, P, ci, x); };
  auto build_p = [&](auto& g, auto& P, Var x) { return discriminate(g, P, cp, x); };
  auto check = [](double v, const char* what, int step) {
    if (!std::isfinite(v)) throw CheckFailure(std::string("train-toy: non-finite ") + what + " at step " + std::to_string(step));
  };

  ToyResult res;
  res.real_patches = static_cast<int>(real_patches.size());
  for (int step = 0; step < cfg.steps; ++step) {
    const auto& view = views[std::uniform_int_distribution<std::size_t>(0, views.size() - 1)(rng)];
    const Scene& s = scenes[view.scene];
    const auto& real = real_images[std::uniform_int_distribution<std::size_t>(0, real_images.size() - 1)(rng)];

    Graph<double> g;
    ParamBinder<double> P(g, G, true);
    auto L = latent_leaves<double>(g, s);
    const RenderPlan plan = plan_render(s.grid, s.layout, arch, view.camera, Jitter{derive_seed(cfg.seed, 0x6a, step), true});
    auto out = render_rgb(g, P, s, plan, L);
    const Tensor<double> fake = g.value(out.rgb);

    ToyRow row;
    row.step = step;
    auto di = gan_loss_d(DI, real, fake, cfg.lambda_r1, build_i);
    opt_di.step(DI, di.grads);
    row.d_image = di.total;
    row.gap_image = di.real_logit - di.fake_logit;

    const auto fake_obj = detail::pick_fake_object(s, view.camera);
    Var patch;
    if (fake_obj && !real_patches.empty()) {
      const auto [slot, rect] = *fake_obj;
      Var a = to_image(g, ad::slice(g, out.feat.alphas, 1, slot, slot + 1), plan.width(), plan.height());
      patch = ad::resize_bilinear(g, patch_var(g, out.rgb, a, rect), kPatchSize, kPatchSize);
      const auto& rp = real_patches[std::uniform_int_distribution<std::size_t>(0, real_patches.size() - 1)(rng)];
      auto dp = gan_loss_d(DP, rp, g.value(patch), cfg.lambda_r1, build_p);
      opt_dp.step(DP, dp.grads);
      row.d_patch = dp.total;
      row.gap_patch = dp.real_logit - dp.fake_logit;
      row.patch = true;
    }

    ParamBinder<double> QI(g, DI, false), QP(g, DP, false);
    Var lg = gan_loss_g(g, discriminate(g, QI, ci, out.rgb));
    if (patch.valid()) lg = ad::add(g, lg, gan_loss_g(g, discriminate(g, QP, cp, patch)));
    row.g = g.value(lg)[0];
    check(row.d_image, "image discriminator loss", step);
    check(row.d_patch, "patch discriminator loss", step);
    check(row.g, "generator loss", step);
    g.backward(lg);
    opt_g.step(G, P.grads());
    ema.update(G, cfg.ema_decay);

    res.rows.push_back(row);
    if (tsv.is_open()) {
      char line[192];
      std::snprintf(line, sizeof line, "%d\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\n", row.step, row.d_image, row.d_patch, row.g,
                    row.gap_image, row.gap_patch);
      tsv << line;
    }
  }
  if (!cfg.out_dir.empty()) {
    ad::save_tensors((fs::path(cfg.out_dir) / "params.nfck").string(), ad::pack_checkpoint(G, &opt_g, &ema));
    ad::TensorMap d = DI.all();
    for (const auto& [k, v] : DP.all()) d[k] = v;
    ad::save_tensors((fs::path(cfg.out_dir) / "disc.nfck").string(), d);
  }
  return res;
}

}  // namespace nff

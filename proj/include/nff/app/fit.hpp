// SPDX-License-Identifier: Apache-2.0
#pragma once

// Per-scene fitting of generator parameters to posed target images with the
// masked reconstruction loss. Each step renders a random crop of one target,
// padded by the neural renderer's halo so the cropped RGB equals the
// corresponding region of a full render.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "nff/autodiff/checkpoint.hpp"
#include "nff/autodiff/optim.hpp"
#include "nff/io/scene_json.hpp"
#include "nff/objectives/losses.hpp"
#include "nff/render/render.hpp"

namespace nff {

struct FitTarget {
  Camera camera;
  Tensor<double> rgb;  // [3, H, W]
};

struct FitConfig {
  int iters = 200;
  double lr = 1e-3;
  double lambda_feat = 0.5;
  int crop = 16;                 // feature pixels per side; 0 renders whole targets
  bool resample_jitter = false;  // per-step jitter instead of the scene's render jitter
  std::uint64_t seed = 0;
  int checkpoint_every = 0;      // 0: only at the end
  std::string out_dir;           // empty: no files
};

struct LossRow {
  int iter = 0;
  double recon = 0, feat = 0, total = 0;
};

struct FitResult {
  std::vector<LossRow> curve;
};

/// Raised when the loss or a gradient stops being finite; the last good
/// parameters have already been written to the run directory.
class Divergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 10 log10(1 / mse) over pixels where mask = 1 (all pixels without a mask).
inline double masked_psnr(const Tensor<double>& pred, const Tensor<double>& target, const Tensor<double>* mask = nullptr) {
  if (pred.shape != target.shape || pred.rank() != 3) throw std::invalid_argument("psnr: shape mismatch");
  const std::size_t hw = static_cast<std::size_t>(pred.dim(1)) * pred.dim(2);
  double se = 0, n = 0;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < hw; ++i) {
      const double m = mask ? (*mask)[i] : 1.0;
      const double d = pred[c * hw + i] - target[c * hw + i];
      se += m * d * d;
      n += m;
    }
  if (n == 0) throw std::invalid_argument("psnr: empty mask");
  return 10.0 * std::log10(n / std::max(se, 1e-300));
}

inline Tensor<double> crop_image(const Tensor<double>& img, int y0, int x0, int h, int w) {
  Tensor<double> out(Shape{img.dim(0), h, w});
  for (int c = 0; c < img.dim(0); ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, y0 + y, x0 + x);
  return out;
}

inline Tensor<double> crop_mask(const Tensor<double>& m, int y0, int x0, int h, int w) {
  Tensor<double> out(Shape{h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.at(y, x) = m.at(y0 + y, x0 + x);
  return out;
}

namespace detail {

inline void write_fit_meta(const std::string& path, const Scene& s, const FitConfig& cfg, std::size_t targets,
                           const nlohmann::json& extra) {
  nlohmann::json j = {{"seed", cfg.seed},           {"world_seed", s.world_seed},
                      {"iters", cfg.iters},         {"lr", cfg.lr},
                      {"lambda_feat", cfg.lambda_feat}, {"crop", cfg.crop},
                      {"resample_jitter", cfg.resample_jitter}, {"targets", targets},
                      {"arch", arch_to_json(s.arch)}};
  for (const auto& [k, v] : extra.items()) j[k] = v;
  std::ofstream os(path, std::ios::binary);
  os << dump_json(j);
  if (!os) throw DataError("write failed: " + path);
}

}  // namespace detail

/// Adam on masked_recon_loss. `params` is updated in place. With an output
/// directory the run writes loss.tsv, meta.json and params.nfck. `stop` is
/// called after every step and ends the run early by returning true.
inline FitResult fit_scene(const Scene& scene, const std::vector<FitTarget>& targets, ParamStore& params,
                           const FitConfig& cfg, const nlohmann::json& meta_extra = nlohmann::json::object(),
                           const std::function<bool(const LossRow&, const ParamStore&)>& stop = {}) {
  if (targets.empty()) throw DataError("fit needs at least one target image");
  const ArchConfig& a = scene.arch;
  std::vector<Tensor<double>> masks;
  for (const auto& t : targets) {
    t.camera.validate();
    if (t.rgb.shape != Shape{3, t.camera.height, t.camera.width})
      throw DataError("target image size does not match its camera");
    masks.push_back(build_stuff_mask(t.camera, scene.layout));
  }
  namespace fs = std::filesystem;
  const bool files = !cfg.out_dir.empty();
  std::ofstream tsv;
  const std::string ckpt = files ? (fs::path(cfg.out_dir) / "params.nfck").string() : "";
  if (files) {
    fs::create_directories(cfg.out_dir);
    detail::write_fit_meta((fs::path(cfg.out_dir) / "meta.json").string(), scene, cfg, targets.size(), meta_extra);
    tsv.open(fs::path(cfg.out_dir) / "loss.tsv", std::ios::binary);
    tsv << "iter\trecon\tfeat\ttotal\n";
  }

  ad::Adam adam(ad::AdamConfig{cfg.lr});
  std::mt19937_64 rng(derive_seed(cfg.seed, 0x666974));
  ParamStore last_good = params;
  auto diverge = [&](int iter, const std::string& why) {
    params = last_good;
    if (files) ad::save_tensors(ckpt, ad::pack_checkpoint(params, nullptr, nullptr));
    throw Divergence("fit diverged at iteration " + std::to_string(iter) + ": " + why);
  };

  FitResult res;
  for (int it = 0; it < cfg.iters; ++it) {
    const auto ti = std::uniform_int_distribution<std::size_t>(0, targets.size() - 1)(rng);
    const FitTarget& tgt = targets[ti];
    const Camera fc = tgt.camera.half();
    const int cw = cfg.crop > 0 ? std::min(cfg.crop, fc.width) : fc.width;
    const int ch = cfg.crop > 0 ? std::min(cfg.crop, fc.height) : fc.height;
    const int cx = std::uniform_int_distribution<int>(0, fc.width - cw)(rng);
    const int cy = std::uniform_int_distribution<int>(0, fc.height - ch)(rng);
    Window win{std::max(0, cx - kRendererHalo), std::max(0, cy - kRendererHalo),
               std::min(fc.width, cx + cw + kRendererHalo), std::min(fc.height, cy + ch + kRendererHalo)};
    const Jitter jit{cfg.resample_jitter ? derive_seed(cfg.seed, 0x6a6974, static_cast<std::uint64_t>(it))
                                         : render_jitter_seed(scene.world_seed),
                     true};
    const RenderPlan plan = plan_render(scene.grid, scene.layout, a, tgt.camera, jit, win);

    Graph<double> g;
    ParamBinder<double> P(g, params, true);
    auto L = latent_leaves<double>(g, scene);
    Var rgb = render_rgb(g, P, scene, plan, L).rgb;
    Var pred = ad::crop2d(g, rgb, 2 * (cy - win.y0), 2 * (cx - win.x0), 2 * ch, 2 * cw);
    auto loss = masked_recon_loss(g, pred, crop_image(tgt.rgb, 2 * cy, 2 * cx, 2 * ch, 2 * cw),
                                  crop_mask(masks[ti], 2 * cy, 2 * cx, 2 * ch, 2 * cw), cfg.lambda_feat);
    LossRow row{it, g.value(loss.mse)[0], g.value(loss.feat)[0], g.value(loss.total)[0]};
    if (!std::isfinite(row.total)) diverge(it, "non-finite loss");
    g.backward(loss.total);
    try {
      last_good = params;
      adam.step(params, P.grads());
    } catch (const std::domain_error& e) {
      diverge(it, e.what());
    }
    res.curve.push_back(row);
    if (files) {
      char line[128];
      std::snprintf(line, sizeof line, "%d\t%.9g\t%.9g\t%.9g\n", row.iter, row.recon, row.feat, row.total);
      tsv << line;
      if (cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0)
        ad::save_tensors(ckpt, ad::pack_checkpoint(params, &adam, nullptr));
    }
    if (stop && stop(row, params)) break;
  }
  if (files) ad::save_tensors(ckpt, ad::pack_checkpoint(params, &adam, nullptr));
  return res;
}

}  // namespace nff

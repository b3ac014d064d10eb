// SPDX-License-Identifier: Apache-2.0
// Acceptance gate: one PASS/FAIL line per criterion. Arguments select criteria
// by number; no arguments runs all ten. Exit status is nonzero on any FAIL.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "nff/app/fit.hpp"
#include "nff/app/gradcheck_suites.hpp"
#include "nff/app/presets.hpp"
#include "nff/app/toy.hpp"
#include "nff/io/images.hpp"
#include "oracles.hpp"

using namespace nff;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char b[64];
  std::snprintf(b, sizeof b, f, v);
  return b;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// 1. Compositing against the scalar transcription.
Outcome compositing() {
  std::mt19937_64 rng(101);
  double worst = 0;
  for (int i = 0; i < 500; ++i) {
    auto b = oracle::random_batch(rng, 8);
    auto r = composite_ray(b.t, b.delta, b.sigma, b.f, b.sky);
    auto o = oracle::literal_composite(b.delta, b.sigma, b.f, b.sky);
    for (std::size_t c = 0; c < o.size(); ++c) worst = std::max(worst, std::abs(r.feature[c] - o[c]));
  }
  return {worst <= 1e-12, "500 batches, max |diff| " + fmt("%.2e", worst) + " (tol 1e-12)"};
}

// 2. Object + stuff + sky weights partition unity.
Outcome weights() {
  const char* presets[] = {"clevr-w", "street", "sparse", "clevr-w-bare"};
  double worst = 0;
  for (int i = 0; i < 10; ++i) {
    const Scene s = make_preset(presets[i % 4], static_cast<std::uint64_t>(40 + i), 32);
    const auto P = init_generator(s.arch, s.grid.num_labels, static_cast<std::uint64_t>(i));
    RenderOptions o;
    o.neural = false;
    const auto r = render_scene(P, s, s.camera.resized(32, 32), o);
    for (std::size_t p = 0; p < r.sky_weight.size(); ++p)
      worst = std::max(worst, std::abs(r.object_weight[p] + r.stuff_weight[p] + r.sky_weight[p] - 1.0));
  }
  return {worst <= 1e-9, "10 scenes at 32x32, max |sum - 1| " + fmt("%.2e", worst) + " (tol 1e-9)"};
}

// 3. Finite-difference gradient suites.
Outcome gradients() {
  const auto results = run_gradcheck("all");
  std::set<std::string> names;
  double prim = 0, e2e = 0;
  std::string failed;
  for (const auto& r : results) {
    names.insert(r.name);
    (r.tolerance > kPrimitiveTol ? e2e : prim) = std::max(r.tolerance > kPrimitiveTol ? e2e : prim, r.max_rel_error);
    if (!r.passed) failed += " " + r.name;
  }
  bool paths = true;
  for (const char* p : {"pixel->z_wld", "pixel->z_obj", "loss->theta", "R1->phi"}) paths &= names.count(p) > 0;
  std::string d = std::to_string(results.size()) + " checks, max rel error " + fmt("%.2e", prim) + " (tol 1e-4) / " +
                  fmt("%.2e", e2e) + " end-to-end (tol 1e-3)";
  if (!paths) d += "; missing end-to-end path";
  if (!failed.empty()) d += "; failed:" + failed;
  return {failed.empty() && paths, d};
}

// 4. Traversal against fine-step marching.
Outcome traversal() {
  std::mt19937_64 rng(404);
  int mismatched = 0;
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto g = oracle::random_grid(rng, 8, 16, 0.2);
    const auto [o, d] = oracle::random_ray(rng, g);
    const double limit = (g.upper() - g.lower()).norm() + (o - 0.5 * (g.lower() + g.upper())).norm() + 1.0;
    const auto want = oracle::nonempty(g, oracle::march(g, o, d, limit, 0.25 * g.spacing.minCoeff()), 4, 1e-9);
    std::vector<VoxelHit> got;
    for (const auto& h : traverse_nonempty(g, o, d, 4))
      if (h.t_exit - h.t_enter > 1e-9) got.push_back(h);
    bool ok = got.size() == want.size();
    for (std::size_t k = 0; ok && k < got.size(); ++k) {
      ok = got[k].cell == want[k].cell;
      worst = std::max({worst, std::abs(got[k].t_enter - want[k].t0), std::abs(got[k].t_exit - want[k].t1)});
    }
    mismatched += !ok;
  }
  return {mismatched == 0 && worst <= 1e-6,
          "1000 pairs, " + std::to_string(mismatched) + " identity mismatches, max endpoint error " + fmt("%.2e", worst)};
}

// 5. Guided vs dense sampling on sparse fixtures with band-limited fields.
double dense_gap(const Scene& s, const ParamStore& P, const Camera& cam, int* crowded) {
  RenderOptions o;
  o.neural = false;
  const auto guided = render_scene(P, s, cam, o);
  o.dense_samples = kDenseSamples;
  const auto dense = render_scene(P, s, cam, o);
  if (crowded)
    for (const auto& ray : guided.plan.rays) *crowded += traverse_nonempty(s.grid, ray, 1 << 20).size() > 4;
  double worst = 0;
  for (std::size_t i = 0; i < guided.features.size(); ++i)
    worst = std::max(worst, std::abs(guided.features[i] - dense.features[i]));
  return worst;
}

Outcome quadrature() {
  double worst = 0;
  int crowded = 0;
  for (int seed = 0; seed < 8; ++seed) {
    Scene s = make_preset("sparse", static_cast<std::uint64_t>(seed), 32);
    s.arch = compact_arch();
    s.arch.pe_bands = 2;
    worst = std::max(worst, dense_gap(s, init_generator(s.arch, s.grid.num_labels, 1), s.camera.resized(32, 32), &crowded));
  }
  Scene s = make_preset("sparse", 0, 32);
  s.arch = compact_arch();
  const double wide = dense_gap(s, init_generator(s.arch, s.grid.num_labels, 1), s.camera.resized(32, 32), nullptr);
  return {worst <= 2e-2 && crowded == 0,
          "8 sparse fixtures (2 encoding bands), max |diff| " + fmt("%.4f", worst) + " (tol 2e-2); rays over 4 voxels: " +
              std::to_string(crowded) + "; 10-band fields " + fmt("%.4f", wide) + " (informational)"};
}

// 6. Removing or resampling object k is local.
Outcome locality() {
  int reach = 0, feature_changes = 0, variants = 0, changed_rgb = 0;
  bool rgb_outside = false;
  for (std::uint64_t seed : {3u, 5u, 9u}) {
    Scene s = make_preset("clevr-w", seed, 32);
    s.arch = compact_arch();
    const auto P = init_generator(s.arch, s.grid.num_labels, seed);
    const Camera cam = s.camera.resized(64, 64);
    const auto base = render_scene(P, s, cam);
    for (const auto& [k, box] : s.layout.live_boxes()) {
      const auto rect = project_box(cam, box);
      for (int variant = 0; variant < 2; ++variant) {
        Scene e = s;
        if (variant == 0) e.layout.remove(k);
        else e.layout.set_seed(k, box.latent_seed + 12345);
        const auto out = render_scene(P, e, cam);
        ++variants;
        for (std::size_t r = 0; r < base.plan.rays.size(); ++r) {
          if (ray_box_intersect(base.plan.rays[r], box)) continue;
          for (int c = 0; c < base.features.dim(1); ++c)
            feature_changes += base.features.at(static_cast<int>(r), c) != out.features.at(static_cast<int>(r), c);
        }
        for (int y = 0; y < cam.height; ++y)
          for (int x = 0; x < cam.width; ++x) {
            bool diff = false;
            for (int c = 0; c < 3; ++c) diff |= base.rgb.at(c, y, x) != out.rgb.at(c, y, x);
            if (!diff) continue;
            ++changed_rgb;
            if (!rect) {
              rgb_outside = true;
              continue;
            }
            const int dx = std::max({rect->x0 - x, x - (rect->x1 - 1), 0});
            const int dy = std::max({rect->y0 - y, y - (rect->y1 - 1), 0});
            reach = std::max({reach, dx, dy});
          }
      }
    }
  }
  const int allowed = kRendererHalo + 1;  // halo plus the 2x2 block of a feature pixel on the rectangle edge
  return {feature_changes == 0 && !rgb_outside && reach <= allowed && changed_rgb > 0,
          std::to_string(variants) + " edits, " + std::to_string(feature_changes) +
              " changed features on rays missing the box, RGB changes reach " + std::to_string(reach) +
              " px beyond the rectangle (allowed " + std::to_string(allowed) + ", bound 6)"};
}

// 7. Per-scene fitting on the walled-room fixture.
Tensor<double> quantized(const Tensor<double>& rgb) {
  std::stringstream ss;
  write_ppm(ss, rgb);
  return read_ppm(ss);
}

Outcome fitting() {
  Scene s = make_preset("clevr-w", 7, 32);
  s.arch = compact_arch();
  const ParamStore reference = init_generator(s.arch, s.grid.num_labels, 1001);
  TrajectoryParams tp;
  tp.start = s.camera.position;
  tp.step = 0.25;
  tp.yaw_jitter_deg = 5.0;
  tp.count = 9;
  const auto cams = sample_trajectory(s.camera.resized(64, 64), tp, 7);
  std::vector<FitTarget> train;
  for (int i = 0; i < 8; ++i) train.push_back({cams[i], quantized(render_scene(reference, s, cams[i]).rgb)});
  const FitTarget held{cams[8], quantized(render_scene(reference, s, cams[8]).rgb)};
  const Tensor<double> mask = build_stuff_mask(held.camera, s.layout);
  auto psnr = [&](const ParamStore& p) { return masked_psnr(render_scene(p, s, held.camera).rgb, held.rgb, &mask); };

  ParamStore params = init_generator(s.arch, s.grid.num_labels, 2002);
  const double start = psnr(params);
  FitConfig cfg;
  cfg.iters = 2000;
  cfg.lr = 1e-3;
  cfg.crop = 16;
  cfg.seed = 7;
  double best = start;
  int steps = 0;
  fit_scene(s, train, params, cfg, nlohmann::json::object(), [&](const LossRow& row, const ParamStore& p) {
    steps = row.iter + 1;
    if (steps % 50) return false;
    best = std::max(best, psnr(p));
    return best >= 25.0;
  });
  return {best >= 25.0, "held-out masked PSNR " + fmt("%.2f", start) + " dB at init, " + fmt("%.2f", best) + " dB after " +
                            std::to_string(steps) + " steps (threshold 25 dB, cap 2000)"};
}

// 8. Patch extraction against the per-pixel transcription.
Outcome patches() {
  std::mt19937_64 rng(808);
  std::uniform_real_distribution<double> u(0, 1);
  int exact = 0;
  for (int i = 0; i < 20; ++i) {
    const int H = 2 * std::uniform_int_distribution<int>(2, 24)(rng), W = 2 * std::uniform_int_distribution<int>(2, 24)(rng);
    Tensor<double> rgb(Shape{3, H, W}), alpha(Shape{H / 2, W / 2});
    for (auto& v : rgb.data) v = u(rng);
    for (auto& v : alpha.data) v = u(rng) < 0.2 ? 0.0 : u(rng);
    const int x0 = std::uniform_int_distribution<int>(0, W - 1)(rng), y0 = std::uniform_int_distribution<int>(0, H - 1)(rng);
    const int x1 = std::uniform_int_distribution<int>(x0 + 1, W)(rng), y1 = std::uniform_int_distribution<int>(y0 + 1, H)(rng);
    const auto got = extract_patch(rgb, alpha, PixelRect{x0, y0, x1, y1});
    exact += got.data == oracle::literal_patch(rgb.data, alpha.data, H, W, x0, y0, x1, y1);
  }
  return {exact == 20, std::to_string(exact) + "/20 cases bit-exact"};
}

// 9. CLI runs are byte-identical.
int shell(const std::string& cmd) {
  const int st = std::system((cmd + " > /dev/null 2>&1").c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / "nff_acceptance_determinism";
  fs::remove_all(dir);
  const std::string nff = std::string(NFF_CLI_PATH) + " --seed 11 --deterministic ";
  const std::string sc = (dir / "scene/scene.json").string();
  int failures = shell(nff + "make-scene clevr-w -o " + (dir / "scene").string());
  std::vector<std::string> compared;
  for (const char* run : {"a", "b"}) {
    const fs::path r = dir / run;
    failures += shell(nff + "render " + sc + " -o " + (r / "view.ppm").string() + " --res 64x64 --dump-features " +
                      (r / "features.nfim").string() + " --dump-alphas " + (r / "alphas.nfim").string());
    failures += shell(nff + "render " + sc + " -o " + (r / "t/view.ppm").string() + " --res 32x32 --traj 4 --step 0.25");
    failures += shell(nff + "fit " + sc + " --targets " + (r / "t/view.targets.json").string() + " -o " +
                      (r / "fit").string() + " --iters 50 --crop 8");
  }
  int differing = 0, files = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir / "a");
    std::string x = slurp(e.path()), y = slurp(dir / "b" / rel);
    if (rel.filename() == "view.ppm.meta.json" || rel.filename() == "meta.json") {
      // Sidecars record their own output paths; compare with the run directory masked.
      for (auto* t : {&x, &y})
        for (const std::string run : {"/a/", "/b/"})
          for (std::size_t p; (p = t->find(run)) != std::string::npos;) t->replace(p, 3, "/_/");
    }
    ++files;
    differing += x != y;
  }
  fs::remove_all(dir);
  return {failures == 0 && differing == 0 && files >= 10,
          std::to_string(files) + " output files compared across two runs, " + std::to_string(differing) + " differ" +
              (failures ? ", " + std::to_string(failures) + " commands failed" : "")};
}

// 10. Adversarial training stays finite.
Outcome toy() {
  ToyConfig cfg;
  cfg.steps = 300;
  cfg.size = 32;
  cfg.seed = 5;
  const auto res = train_toy(cfg);
  bool finite = res.rows.size() == 300;
  double gap = 0;
  int patch_steps = 0;
  for (const auto& r : res.rows) {
    finite &= std::isfinite(r.d_image) && std::isfinite(r.d_patch) && std::isfinite(r.g) && std::isfinite(r.gap_image) &&
              std::isfinite(r.gap_patch);
    gap = std::max({gap, std::abs(r.gap_image), std::abs(r.gap_patch)});
    patch_steps += r.patch;
  }
  constexpr double kGapBound = 20.0;
  return {finite && gap <= kGapBound, std::to_string(res.rows.size()) + " steps (" + std::to_string(patch_steps) +
                                          " with object patches), losses finite: " + (finite ? "yes" : "no") +
                                          ", max |logit gap| " + fmt("%.3f", gap) + " (bound 20)"};
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "compositing oracle", 1, compositing},
      {2, "weight normalization", 30, weights},
      {3, "gradient suite", 120, gradients},
      {4, "traversal oracle", 10, traversal},
      {5, "guided vs dense quadrature", 60, quadrature},
      {6, "edit locality", 60, locality},
      {7, "per-scene fitting", 1800, fitting},
      {8, "patch extraction oracle", 5, patches},
      {9, "determinism", 300, determinism},
      {10, "toy adversarial run", 900, toy},
  };
  std::set<int> pick;
  for (int i = 1; i < argc; ++i) pick.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& c : all) {
    if (!pick.empty() && !pick.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double t = seconds_since(t0);
    const bool in_time = t <= c.budget_s;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::printf("%s [%d] %s: %s; %.1f s (budget %.0f s)%s\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), t,
                c.budget_s, in_time ? "" : " over budget");
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}

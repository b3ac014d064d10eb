// SPDX-License-Identifier: Apache-2.0
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "nff/app/edit_script.hpp"
#include "nff/app/fit.hpp"
#include "nff/app/gradcheck_suites.hpp"
#include "nff/app/presets.hpp"
#include "nff/app/toy.hpp"
#include "nff/io/images.hpp"
#include "nff/io/scene_json.hpp"
#include "nff/io/uvgx.hpp"

using namespace nff;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.1.0";

struct Globals {
  std::uint64_t seed = 0;
  int threads = 0;
  bool deterministic = false;
  std::string command;
};

Globals G;

json run_meta(json args) {
  return {{"tool", "nff"},
          {"version", kVersion},
          {"command", G.command},
          {"seed", G.seed},
          {"deterministic", G.deterministic},
          {"args", std::move(args)}};
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw DataError("cannot write " + p.string());
  os << text;
  if (!os) throw DataError("write failed: " + p.string());
}

std::pair<int, int> parse_res(const std::string& s) {
  int w = 0, h = 0;
  char x = 0, extra = 0;
  std::istringstream is(s);
  if (!(is >> w >> x >> h) || x != 'x' || (is >> extra) || w < 2 || h < 2 || w % 2 || h % 2)
    throw UsageError("--res expects WxH with even sizes, got '" + s + "'");
  return {w, h};
}

Camera scene_camera(const Scene& s, const std::string& res) {
  if (res.empty()) return s.camera;
  auto [w, h] = parse_res(res);
  return s.camera.resized(w, h);
}

/// Checkpoint parameters, checked against the scene's architecture.
ParamStore load_params(const std::string& path, const Scene& s) {
  const ParamStore ref = init_generator(s.arch, s.grid.num_labels, 0);
  ParamStore p = ad::unpack_checkpoint(ad::load_tensors(path));
  for (const auto& [k, v] : ref.all()) {
    if (!p.contains(k)) throw DataError(path + ": missing parameter '" + k + "'");
    if (p.get(k).shape != v.shape) throw DataError(path + ": parameter '" + k + "' has the wrong shape");
  }
  if (p.all().size() != ref.all().size()) throw DataError(path + ": unexpected extra parameters");
  return p;
}

ParamStore scene_params(const std::string& path, const Scene& s) {
  return path.empty() ? init_generator(s.arch, s.grid.num_labels, G.seed) : load_params(path, s);
}

fs::path numbered(const fs::path& out, int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "_%03d", i);
  return out.parent_path() / (out.stem().string() + buf + out.extension().string());
}

// ---- make-scene

struct MakeSceneArgs {
  std::string preset, out, arch = "compact";
  int size = 32;
};

void make_scene_cmd(const MakeSceneArgs& a) {
  Scene s = make_preset(a.preset, G.seed, a.size);
  s.arch = named_arch(a.arch);
  s.grid_path = "grid.uvgx";
  fs::create_directories(a.out);
  save_uvgx((fs::path(a.out) / s.grid_path).string(), s.grid);
  save_scene_json((fs::path(a.out) / "scene.json").string(), s);
  write_text(fs::path(a.out) / "make-scene.meta.json",
             dump_json(run_meta({{"preset", a.preset}, {"size", a.size}, {"arch", a.arch}})));
  std::cout << a.out << ": " << s.layout.live_count() << " objects, " << s.grid.dims[0] << "x" << s.grid.dims[1] << "x"
            << s.grid.dims[2] << " grid\n";
}

// ---- render

struct RenderArgs {
  std::string scene, out, res, params, features, alphas;
  int traj = 0;
  double step = 1.0, yaw_jitter = 0, heading = 90, pitch = 15;
  bool no_jitter = false;
};

void render_cmd(const RenderArgs& a) {
  const Scene s = load_scene(a.scene);
  const ParamStore P = scene_params(a.params, s);
  RenderOptions opt;
  opt.jitter = !a.no_jitter;
  const Camera base = scene_camera(s, a.res);
  std::vector<Camera> cams{base};
  if (a.traj > 0) {
    TrajectoryParams tp;
    tp.start = base.position;
    tp.count = a.traj;
    tp.step = a.step;
    tp.yaw_jitter_deg = a.yaw_jitter;
    tp.heading_deg = a.heading;
    tp.pitch_deg = a.pitch;
    cams = sample_trajectory(base, tp, G.seed);
  }
  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  json manifest = json::array();
  for (std::size_t i = 0; i < cams.size(); ++i) {
    const bool many = a.traj > 0;
    const auto r = render_scene(P, s, cams[i], opt);
    const fs::path img = many ? numbered(out, static_cast<int>(i)) : out;
    save_ppm(img.string(), r.rgb);
    const Camera fc = cams[i].half();
    if (!a.features.empty())
      save_nfim((many ? numbered(a.features, static_cast<int>(i)) : fs::path(a.features)).string(), r.features,
                fc.height, fc.width);
    if (!a.alphas.empty())
      save_nfim((many ? numbered(a.alphas, static_cast<int>(i)) : fs::path(a.alphas)).string(), r.alphas, fc.height,
                fc.width);
    manifest.push_back({{"image", img.filename().string()}, {"camera", camera_to_json(cams[i])}});
  }
  json args = {{"scene", a.scene}, {"res", a.res},     {"params", a.params}, {"traj", a.traj},
               {"step", a.step},   {"yaw_jitter", a.yaw_jitter}, {"heading", a.heading},
               {"pitch", a.pitch}, {"jitter", !a.no_jitter}};
  if (a.traj > 0) {
    const fs::path mf = out.parent_path() / (out.stem().string() + ".targets.json");
    write_text(mf, dump_json({{"targets", manifest}}));
    std::cout << "wrote " << cams.size() << " views and " << mf.string() << "\n";
  }
  write_text(out.string() + ".meta.json", dump_json(run_meta(args)));
}

// ---- edit

struct EditArgs {
  std::string scene, script, out;
};

void edit_cmd(const EditArgs& a) {
  const Scene s = load_scene(a.scene);
  std::ifstream is(a.script);
  if (!is) throw DataError("cannot open " + a.script);
  const fs::path in_dir = fs::absolute(a.scene).parent_path();
  fs::create_directories(a.out);
  if (fs::equivalent(in_dir, a.out)) throw UsageError("edit writes new files; --out must differ from the input directory");
  const Scene e = apply_edit_script(s, is, a.script);
  save_uvgx((fs::path(a.out) / e.grid_path).string(), e.grid);
  save_scene_json((fs::path(a.out) / fs::path(a.scene).filename()).string(), e);
  write_text(fs::path(a.out) / "edit.meta.json", dump_json(run_meta({{"scene", a.scene}, {"script", a.script}})));
}

// ---- fit

struct FitArgs {
  std::string scene, targets, out, params;
  int iters = 200, crop = 16, checkpoint_every = 0;
  double lr = 1e-3, lambda_feat = 0.5;
  std::vector<int> hold_out;
  bool resample_jitter = false;
};

std::vector<FitTarget> load_targets(const std::string& path, const std::vector<int>& skip) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw DataError(path + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("targets") || !j["targets"].is_array())
    throw DataError(path + ": expected {\"targets\": [...]}");
  std::vector<FitTarget> out;
  for (std::size_t i = 0; i < j["targets"].size(); ++i) {
    if (std::find(skip.begin(), skip.end(), static_cast<int>(i)) != skip.end()) continue;
    const auto& t = j["targets"][i];
    const std::string where = path + ": targets[" + std::to_string(i) + "]";
    if (!t.is_object() || !t.contains("image") || !t["image"].is_string() || !t.contains("camera"))
      throw DataError(where + ": expected image and camera");
    FitTarget ft;
    ft.camera = camera_from_json(t["camera"], where + ".camera");
    ft.rgb = load_ppm((fs::path(path).parent_path() / t["image"].get<std::string>()).string());
    out.push_back(std::move(ft));
  }
  return out;
}

int fit_cmd(const FitArgs& a) {
  const Scene s = load_scene(a.scene);
  ParamStore P = scene_params(a.params, s);
  const auto targets = load_targets(a.targets, a.hold_out);
  FitConfig cfg;
  cfg.iters = a.iters;
  cfg.lr = a.lr;
  cfg.lambda_feat = a.lambda_feat;
  cfg.crop = a.crop;
  cfg.resample_jitter = a.resample_jitter;
  cfg.seed = G.seed;
  cfg.checkpoint_every = a.checkpoint_every;
  cfg.out_dir = a.out;
  const json extra = run_meta({{"scene", a.scene}, {"targets", a.targets}, {"params", a.params}, {"hold_out", a.hold_out}});
  const auto res = fit_scene(s, targets, P, cfg, {{"run", extra}});
  if (!res.curve.empty())
    std::printf("iter %d: recon %.6g feat %.6g total %.6g\n", res.curve.back().iter, res.curve.back().recon,
                res.curve.back().feat, res.curve.back().total);
  return 0;
}

// ---- train-toy

struct ToyArgs {
  ToyConfig cfg;
};

void toy_cmd(ToyArgs a) {
  a.cfg.seed = G.seed;
  const auto res = train_toy(a.cfg);
  if (!a.cfg.out_dir.empty())
    write_text(fs::path(a.cfg.out_dir) / "run.meta.json",
               dump_json(run_meta({{"steps", a.cfg.steps}, {"size", a.cfg.size}, {"scenes", a.cfg.scenes},
                                   {"poses", a.cfg.poses}, {"preset", a.cfg.preset}, {"lambda_r1", a.cfg.lambda_r1}})));
  if (!res.rows.empty()) {
    const auto& r = res.rows.back();
    std::printf("step %d: d_image %.6g d_patch %.6g g %.6g gap_image %.6g gap_patch %.6g (%d real patches)\n", r.step,
                r.d_image, r.d_patch, r.g, r.gap_image, r.gap_patch, res.real_patches);
  }
}

// ---- bench

struct BenchArgs {
  std::string scene, res, params, mode = "both", out;
  int samples = kDenseSamples;
};

json plan_stats(const RenderPlan& p) {
  const auto& off = p.composite->offsets;
  std::size_t most = 0;
  for (std::size_t r = 0; r < off.size(); ++r)
    most = std::max(most, static_cast<std::size_t>(off[r] - (r ? off[r - 1] : 0)));
  return {{"rays", p.rays.size()}, {"samples", p.composite->refs.size()}, {"max_samples_per_ray", most}};
}

void bench_cmd(const BenchArgs& a) {
  if (a.mode != "guided" && a.mode != "dense" && a.mode != "both") throw UsageError("--mode must be guided, dense or both");
  if (a.samples < 1) throw UsageError("--samples must be positive");
  const Scene s = load_scene(a.scene);
  const ParamStore P = scene_params(a.params, s);
  const Camera cam = scene_camera(s, a.res);
  RenderOptions opt;
  opt.neural = false;
  auto timed = [&](int dense) {
    RenderOptions o = opt;
    o.dense_samples = dense;
    const auto t0 = std::chrono::steady_clock::now();
    auto r = render_scene(P, s, cam, o);
    return std::make_pair(std::move(r), std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  };
  json report = run_meta({{"scene", a.scene}, {"res", a.res}, {"params", a.params}, {"mode", a.mode}, {"samples", a.samples}});
  int crowded = 0;
  const auto [guided, tg] = timed(0);
  for (const auto& ray : guided.plan.rays) crowded += traverse_nonempty(s.grid, ray, 1 << 20).size() > 4;
  report["rays_over_4_voxels"] = crowded;
  report["guided"] = plan_stats(guided.plan);
  report["guided"]["seconds"] = tg;
  report["guided"]["sample_bound_per_ray"] =
      s.arch.max_voxels * s.arch.points_per_voxel + static_cast<int>(s.layout.live_count()) * s.arch.points_per_object;
  if (a.mode != "guided") {
    const auto [dense, td] = timed(a.samples);
    report["dense"] = plan_stats(dense.plan);
    report["dense"]["seconds"] = td;
    report["dense"]["strata_per_ray"] = a.samples;
    std::vector<double> diff(static_cast<std::size_t>(s.arch.feat_dim), 0.0);
    for (int r = 0; r < guided.features.dim(0); ++r)
      for (int c = 0; c < s.arch.feat_dim; ++c)
        diff[static_cast<std::size_t>(c)] =
            std::max(diff[static_cast<std::size_t>(c)], std::abs(guided.features.at(r, c) - dense.features.at(r, c)));
    report["max_feature_diff_per_channel"] = diff;
    report["max_feature_diff"] = *std::max_element(diff.begin(), diff.end());
  }
  const std::string text = dump_json(report);
  if (!a.out.empty()) write_text(a.out, text);
  std::cout << text;
}

// ---- gradcheck

int gradcheck_cmd(const std::string& component, const std::string& corrupt) {
  const auto results = run_gradcheck(component, corrupt);
  std::vector<std::string> failed;
  for (const auto& r : results) {
    std::printf("%-32s %.3e  tol %.0e  %s\n", r.name.c_str(), r.max_rel_error, r.tolerance, r.passed ? "ok" : "FAIL");
    if (!r.passed) failed.push_back(r.name);
  }
  if (!failed.empty()) {
    std::string names;
    for (const auto& f : failed) names += (names.empty() ? "" : ", ") + f;
    throw CheckFailure("gradient check failed: " + names);
  }
  std::printf("%zu checks passed\n", results.size());
  return 0;
}

// ---- sample-rays

struct SampleRaysArgs {
  std::string scene, res, out;
  int dense = 0;
  bool no_jitter = false;
};

void sample_rays_cmd(const SampleRaysArgs& a) {
  const Scene s = load_scene(a.scene);
  const Camera cam = scene_camera(s, a.res);
  const Camera fc = cam.half();
  const Jitter jit{render_jitter_seed(s.world_seed), !a.no_jitter};
  std::ofstream file;
  if (!a.out.empty()) {
    file.open(a.out, std::ios::binary);
    if (!file) throw DataError("cannot write " + a.out);
  }
  std::ostream& os = a.out.empty() ? std::cout : file;
  os << "pixel\tt\tdelta\tsource\n";
  char line[128];
  for (const auto& ray : camera_rays(fc)) {
    const auto pixel = static_cast<std::uint64_t>(ray.v) * static_cast<std::uint64_t>(fc.width) + static_cast<std::uint64_t>(ray.u);
    const auto samples = a.dense > 0 ? dense_ray_samples(s.grid, s.layout, ray, a.dense)
                                     : ray_samples(s.grid, s.layout, s.arch, ray, jit, pixel);
    for (const auto& smp : samples) {
      const std::string src = smp.source == kStuff ? "stuff" : "obj" + std::to_string(smp.source);
      std::snprintf(line, sizeof line, "%llu\t%.17g\t%.17g\t%s\n", static_cast<unsigned long long>(pixel), smp.t,
                    smp.delta, src.c_str());
      os << line;
    }
  }
}

void configure_threads() {
  int n = 0;
  if (const char* env = std::getenv("NFF_THREADS")) {
    try {
      n = std::stoi(env);
    } catch (const std::exception&) {
      throw UsageError(std::string("NFF_THREADS must be an integer, got '") + env + "'");
    }
  }
  if (G.threads > 0) n = G.threads;
  if (G.deterministic) n = 1;
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#endif
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural feature-field scene renderer and tooling"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.add_option("--seed", G.seed, "Seed for every random choice")->capture_default_str();
  app.add_option("--threads", G.threads, "Worker threads (overrides NFF_THREADS)")->check(CLI::PositiveNumber);
  app.add_flag("--deterministic", G.deterministic, "Single-threaded execution");

  MakeSceneArgs ms;
  auto* c_ms = app.add_subcommand("make-scene", "Generate a fixture scene (grid + JSON)");
  c_ms->add_option("preset", ms.preset, "clevr-w, clevr-w-bare, street or sparse")->required();
  c_ms->add_option("-o,--out", ms.out, "Output directory")->required();
  c_ms->add_option("--size", ms.size, "Voxels per axis (multiple of 8)")->capture_default_str();
  c_ms->add_option("--arch", ms.arch, "Network size: full or compact")->capture_default_str();

  RenderArgs ra;
  auto* c_r = app.add_subcommand("render", "Render a scene to PPM");
  c_r->add_option("scene", ra.scene, "Scene JSON")->required()->check(CLI::ExistingFile);
  c_r->add_option("-o,--out", ra.out, "Output PPM")->required();
  c_r->add_option("--res", ra.res, "Output size WxH (default: scene camera)");
  c_r->add_option("--params", ra.params, "Generator checkpoint (default: initialized from --seed)");
  c_r->add_option("--dump-features", ra.features, "Write the feature image (NFIM)");
  c_r->add_option("--dump-alphas", ra.alphas, "Write per-object alpha maps (NFIM)");
  c_r->add_option("--traj", ra.traj, "Render N trajectory poses to numbered files plus a targets manifest");
  c_r->add_option("--step", ra.step, "Trajectory step, meters")->capture_default_str();
  c_r->add_option("--yaw-jitter", ra.yaw_jitter, "Trajectory yaw jitter, degrees")->capture_default_str();
  c_r->add_option("--heading", ra.heading, "Trajectory heading, degrees from +x")->capture_default_str();
  c_r->add_option("--pitch", ra.pitch, "Trajectory downward pitch, degrees")->capture_default_str();
  c_r->add_flag("--no-jitter", ra.no_jitter, "Place samples at stratum starts");

  EditArgs ea;
  auto* c_e = app.add_subcommand("edit", "Apply an edit script, writing a new scene");
  c_e->add_option("scene", ea.scene, "Scene JSON")->required()->check(CLI::ExistingFile);
  c_e->add_option("script", ea.script, "Edit script")->required();
  c_e->add_option("-o,--out", ea.out, "Output directory")->required();

  FitArgs fa;
  auto* c_f = app.add_subcommand("fit", "Fit generator parameters to posed images");
  c_f->add_option("scene", fa.scene, "Scene JSON")->required()->check(CLI::ExistingFile);
  c_f->add_option("--targets", fa.targets, "Targets manifest written by render --traj")->required();
  c_f->add_option("-o,--out", fa.out, "Run directory")->required();
  c_f->add_option("--params", fa.params, "Initial checkpoint (default: initialized from --seed)");
  c_f->add_option("--iters", fa.iters, "Optimizer steps")->capture_default_str()->check(CLI::NonNegativeNumber);
  c_f->add_option("--lr", fa.lr, "Adam learning rate")->capture_default_str();
  c_f->add_option("--lambda-feat", fa.lambda_feat, "Feature-pyramid loss weight")->capture_default_str();
  c_f->add_option("--crop", fa.crop, "Crop side in feature pixels, 0 for whole images")->capture_default_str();
  c_f->add_option("--checkpoint-every", fa.checkpoint_every, "Checkpoint period in steps")->capture_default_str();
  c_f->add_option("--hold-out", fa.hold_out, "Manifest indices to leave out");
  c_f->add_flag("--resample-jitter", fa.resample_jitter, "Fresh sample jitter every step");

  ToyArgs ta;
  auto* c_t = app.add_subcommand("train-toy", "Short adversarial training run on fixture scenes");
  c_t->add_option("--steps", ta.cfg.steps, "Alternating steps")->capture_default_str();
  c_t->add_option("--size", ta.cfg.size, "Image side")->capture_default_str();
  c_t->add_option("--scenes", ta.cfg.scenes, "Fixture scenes")->capture_default_str();
  c_t->add_option("--poses", ta.cfg.poses, "Poses per scene")->capture_default_str();
  c_t->add_option("--preset", ta.cfg.preset, "Fixture preset")->capture_default_str();
  c_t->add_option("--lambda-r1", ta.cfg.lambda_r1, "R1 weight")->capture_default_str();
  c_t->add_option("-o,--out", ta.cfg.out_dir, "Run directory");

  BenchArgs ba;
  auto* c_b = app.add_subcommand("bench", "Time guided and dense sampling and compare features");
  c_b->add_option("scene", ba.scene, "Scene JSON")->required()->check(CLI::ExistingFile);
  c_b->add_option("--mode", ba.mode, "guided, dense or both")->capture_default_str();
  c_b->add_option("--res", ba.res, "Image size WxH");
  c_b->add_option("--params", ba.params, "Generator checkpoint");
  c_b->add_option("--samples", ba.samples, "Dense strata per ray")->capture_default_str();
  c_b->add_option("-o,--out", ba.out, "Also write the report here");

  std::string component, corrupt;
  auto* c_g = app.add_subcommand("gradcheck", "Finite-difference gradient suites");
  c_g->add_option("component", component, "substrate, generators, compositor, losses or all")->required();
  c_g->add_option("--corrupt-op", corrupt)->group("");

  SampleRaysArgs sa;
  auto* c_s = app.add_subcommand("sample-rays", "Dump per-ray samples as TSV");
  c_s->add_option("scene", sa.scene, "Scene JSON")->required()->check(CLI::ExistingFile);
  c_s->add_option("--res", sa.res, "Image size WxH");
  c_s->add_option("--dense", sa.dense, "Dense strata per ray instead of guided sampling");
  c_s->add_flag("--no-jitter", sa.no_jitter, "Place samples at stratum starts");
  c_s->add_option("-o,--out", sa.out, "Output TSV (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    configure_threads();
    G.command = app.get_subcommands().front()->get_name();
    if (*c_ms) make_scene_cmd(ms);
    if (*c_r) render_cmd(ra);
    if (*c_e) edit_cmd(ea);
    if (*c_f) return fit_cmd(fa);
    if (*c_t) toy_cmd(ta);
    if (*c_b) bench_cmd(ba);
    if (*c_g) return gradcheck_cmd(component, corrupt);
    if (*c_s) sample_rays_cmd(sa);
  } catch (const UsageError& e) {
    std::cerr << "nff: " << e.what() << "\n";
    return 1;
  } catch (const Divergence& e) {
    std::cerr << "nff: " << e.what() << "\n";
    return 3;
  } catch (const CheckFailure& e) {
    std::cerr << "nff: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "nff: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

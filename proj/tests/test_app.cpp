// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "nff/app/edit_script.hpp"
#include "nff/app/fit.hpp"
#include "nff/app/toy.hpp"

using namespace nff;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("nff_test_app_" + name);
  fs::remove_all(p);
  return p;
}

Scene edited(const Scene& s, const std::string& script) {
  std::istringstream is(script);
  return apply_edit_script(s, is, "edits");
}

bool same_params(const ParamStore& a, const ParamStore& b) {
  const auto x = a.all(), y = b.all();
  if (x.size() != y.size()) return false;
  for (const auto& [k, v] : x)
    if (!y.count(k) || y.at(k).shape != v.shape || y.at(k).data != v.data) return false;
  return true;
}

}  // namespace

TEST(DenseSampling, StuffDeltasCoverNonEmptyIntervals) {
  auto s = test::tiny_scene();
  for (const auto& ray : camera_rays(s.camera)) {
    const auto samples = dense_ray_samples(s.grid, s.layout, ray, 64);
    double stuff = 0, want = 0;
    for (const auto& h : traverse_nonempty(s.grid, ray, 1 << 20)) want += h.t_exit - h.t_enter;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].source == kStuff) {
        stuff += samples[i].delta;
        auto l = s.grid.semantic_at(samples[i].x);
        ASSERT_TRUE(l.has_value());
        EXPECT_NE(*l, 0);
      } else {
        EXPECT_LE(samples[i].x_obj.cwiseAbs().maxCoeff(), 0.5);
      }
      if (i) {
        EXPECT_LE(samples[i - 1].t, samples[i].t);
      }
    }
    EXPECT_NEAR(stuff, want, 1e-9);
  }
}

TEST(DenseSampling, AgreesWithGuidedOnSparseFixture) {
  Scene s = make_preset("sparse", 3, 32);
  s.arch = test::tiny_arch();
  Camera cam = default_camera(16, 16);
  cam.position = s.camera.position;
  cam.rotation = s.camera.rotation;
  const auto P = init_generator(s.arch, s.grid.num_labels, 1);
  RenderOptions o;
  o.neural = false;
  const auto guided = render_scene(P, s, cam, o);
  o.dense_samples = kDenseSamples;
  const auto dense = render_scene(P, s, cam, o);
  double worst = 0;
  for (std::size_t i = 0; i < guided.features.size(); ++i)
    worst = std::max(worst, std::abs(guided.features[i] - dense.features[i]));
  EXPECT_LE(worst, 2e-2);
}

TEST(EditScript, BlankScriptIsIdentity) {
  auto s = test::tiny_scene();
  auto e = edited(s, "\n  # nothing here\n\n");
  EXPECT_EQ(dump_json(scene_to_json(s)), dump_json(scene_to_json(e)));
  EXPECT_TRUE(s.grid == e.grid);
}

TEST(EditScript, AppliesCommandsInOrder) {
  auto s = test::tiny_scene();
  auto e = edited(s,
                  "relabel 2 1   # wall becomes floor\n"
                  "fill 0 0 3 2 2 4 2\n"
                  "obj-add 2 2 2 1 1 1 45 77\n"
                  "obj-move 0 0.5 0 0\n"
                  "obj-seed 1 5\n"
                  "obj-del 0\n");
  EXPECT_EQ(e.grid.label({3, 7, 2}), 1);
  EXPECT_EQ(e.grid.label({1, 1, 3}), 2);
  EXPECT_EQ(e.grid.label({2, 2, 3}), 0);
  ASSERT_EQ(e.layout.slots(), 2u);
  EXPECT_FALSE(e.layout.live(0));
  EXPECT_EQ(e.layout.at(1).latent_seed, 5u);
  EXPECT_NEAR(e.layout.at(1).size[0], 1.0, 0);
  EXPECT_EQ(s.layout.slots(), 1u);
}

TEST(EditScript, ErrorsNameTheLine) {
  auto s = test::tiny_scene();
  auto fails_with = [&](const std::string& script, const std::string& where) {
    try {
      edited(s, script);
      ADD_FAILURE() << "accepted: " << script;
    } catch (const DataError& e) {
      EXPECT_NE(std::string(e.what()).find(where), std::string::npos) << e.what();
    }
  };
  fails_with("relabel 1 2\n\nfrobnicate\n", "edits:3:");
  fails_with("obj-del 0\nobj-move 0 1 0 0\n", "edits:2:");
  fails_with("relabel 1 nonsense\n", "edits:1:");
  fails_with("obj-rot 0 w 10\n", "edits:1:");
  fails_with("obj-move 0 1 x 0\n", "edits:1:");
  fails_with("fill 0 0 0 1 1\n", "edits:1:");
}

TEST(Fit, TargetEqualToRenderHasZeroLoss) {
  auto s = test::tiny_scene();
  const auto P = init_generator(s.arch, 3, 5);
  const auto out = render_scene(P, s, s.camera);
  auto params = P;
  FitConfig cfg;
  cfg.iters = 2;
  cfg.crop = 4;
  auto res = fit_scene(s, {{s.camera, out.rgb}}, params, cfg);
  ASSERT_EQ(res.curve.size(), 2u);
  EXPECT_LT(res.curve[0].total, 1e-24);
}

TEST(Fit, DeterministicAndDecreasing) {
  auto s = test::tiny_scene();
  const auto ref = init_generator(s.arch, 3, 5);
  const FitTarget target{s.camera, render_scene(ref, s, s.camera).rgb};
  FitConfig cfg;
  cfg.iters = 40;
  cfg.crop = 0;
  cfg.lr = 3e-3;
  cfg.seed = 9;
  auto a = init_generator(s.arch, 3, 6), b = a;
  auto ra = fit_scene(s, {target}, a, cfg), rb = fit_scene(s, {target}, b, cfg);
  for (std::size_t i = 0; i < ra.curve.size(); ++i) EXPECT_EQ(ra.curve[i].total, rb.curve[i].total);
  EXPECT_TRUE(same_params(a, b));
  EXPECT_LT(ra.curve.back().total, 0.5 * ra.curve.front().total);
}

TEST(Fit, WritesRunDirectory) {
  auto s = test::tiny_scene();
  auto params = init_generator(s.arch, 3, 5);
  FitConfig cfg;
  cfg.iters = 3;
  cfg.out_dir = scratch("fit").string();
  fit_scene(s, {{s.camera, Tensor<double>(Shape{3, 16, 16}, 0.5)}}, params, cfg);
  std::ifstream tsv(fs::path(cfg.out_dir) / "loss.tsv");
  int lines = 0;
  for (std::string l; std::getline(tsv, l);) ++lines;
  EXPECT_EQ(lines, 4);
  EXPECT_TRUE(fs::exists(fs::path(cfg.out_dir) / "meta.json"));
  auto ck = ad::load_tensors((fs::path(cfg.out_dir) / "params.nfck").string());
  EXPECT_TRUE(ck.count("stf.out.w"));
  fs::remove_all(cfg.out_dir);
}

TEST(Fit, NonFiniteTargetRestoresParameters) {
  auto s = test::tiny_scene();
  const auto start = init_generator(s.arch, 3, 5);
  auto params = start;
  FitConfig cfg;
  cfg.iters = 3;
  Tensor<double> bad(Shape{3, 16, 16}, std::nan(""));
  EXPECT_THROW(fit_scene(s, {{s.camera, bad}}, params, cfg), Divergence);
  EXPECT_TRUE(same_params(params, start));
  EXPECT_THROW(fit_scene(s, {{s.camera, Tensor<double>(Shape{3, 8, 8})}}, params, cfg), DataError);
}

TEST(Shading, ObjectMapMatchesFirstHits) {
  auto s = test::tiny_scene();
  auto v = shade_fixture(s, s.camera);
  EXPECT_EQ(v.rgb.shape, (Shape{3, 16, 16}));
  for (double x : v.rgb.data) {
    EXPECT_GE(x, 0.0);
    EXPECT_LE(x, 1.0);
  }
  const Camera fc = s.camera.half();
  int hits = 0;
  for (const auto& ray : camera_rays(fc)) {
    const double a = v.objects.at(ray.v * fc.width + ray.u, 0);
    if (a > 0) {
      EXPECT_TRUE(ray_box_intersect(ray, s.layout.at(0)).has_value());
    }
    hits += a > 0;
  }
  EXPECT_GT(hits, 0);
}

TEST(Toy, ShortRunIsFiniteAndWritesFiles) {
  ToyConfig cfg;
  cfg.steps = 3;
  cfg.size = 16;
  cfg.scenes = 1;
  cfg.poses = 2;
  cfg.out_dir = scratch("toy").string();
  auto res = train_toy(cfg);
  ASSERT_EQ(res.rows.size(), 3u);
  for (const auto& r : res.rows) {
    EXPECT_TRUE(std::isfinite(r.d_image));
    EXPECT_TRUE(std::isfinite(r.g));
  }
  for (const char* f : {"train.tsv", "meta.json", "params.nfck", "disc.nfck"})
    EXPECT_TRUE(fs::exists(fs::path(cfg.out_dir) / f)) << f;
  fs::remove_all(cfg.out_dir);
  cfg.size = 10;
  EXPECT_THROW(train_toy(cfg), UsageError);
}

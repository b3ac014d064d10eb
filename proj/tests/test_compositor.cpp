// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "nff/autodiff/gradcheck.hpp"
#include "nff/render/patch.hpp"

using namespace nff;

TEST(CompositeRay, EmptyBatchIsSky) {
  auto r = composite_ray({}, {}, {}, {}, {0.25, -1.0});
  EXPECT_EQ(r.feature, (std::vector<double>{0.25, -1.0}));
  EXPECT_EQ(r.sky_weight, 1.0);
}

TEST(CompositeRay, HalfOpacitySample) {
  auto r = composite_ray({1.0}, {1.0}, {std::log(2.0)}, {{2.0}}, {4.0});
  EXPECT_NEAR(r.weights[0], 0.5, 1e-15);
  EXPECT_NEAR(r.feature[0], 0.5 * 2.0 + 0.5 * 4.0, 1e-15);
}

TEST(CompositeRay, TwoHalfSamples) {
  const double s = std::log(2.0);
  auto r = composite_ray({1, 2}, {1, 1}, {s, s}, {{0.0}, {0.0}}, {1.0});
  EXPECT_NEAR(r.weights[0], 0.5, 1e-15);
  EXPECT_NEAR(r.weights[1], 0.25, 1e-15);
  EXPECT_NEAR(r.sky_weight, 0.25, 1e-15);
}

TEST(CompositeRay, UnsortedRejected) {
  EXPECT_THROW(composite_ray({2, 1}, {1, 1}, {1, 1}, {{0.0}, {0.0}}, {1.0}), std::invalid_argument);
}

TEST(CompositeRay, MatchesLiteralTranscription) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    auto b = oracle::random_batch(rng, 5);
    auto r = composite_ray(b.t, b.delta, b.sigma, b.f, b.sky);
    auto o = oracle::literal_composite(b.delta, b.sigma, b.f, b.sky);
    for (std::size_t c = 0; c < o.size(); ++c) EXPECT_NEAR(r.feature[c], o[c], 1e-12);
    double ws = r.sky_weight;
    for (double w : r.weights) {
      EXPECT_GE(w, 0.0);
      ws += w;
    }
    EXPECT_NEAR(ws, 1.0, 1e-12);
  }
}

TEST(ObjectAlpha, ClosedForms) {
  EXPECT_EQ(object_alpha({kStuff}, {0.3}, 0), 0.0);
  auto one = composite_ray({1}, {1}, {1e9}, {{0.0}}, {0.0});
  EXPECT_NEAR(object_alpha({0}, one.weights, 0), 1.0, 1e-12);
  // Stuff sample with alpha 0.75 in front of an opaque object sample.
  auto r = composite_ray({1, 2}, {1, 1}, {std::log(4.0), 1e9}, {{0.0}, {0.0}}, {0.0});
  EXPECT_NEAR(object_alpha({kStuff, 0}, r.weights, 0), 0.25, 1e-12);
  EXPECT_EQ(object_alpha({kStuff, 0}, r.weights, 7), 0.0);
}

TEST(ObjectAlpha, OpaqueStuffInFrontOccludes) {
  auto r = composite_ray({0.5, 1, 2}, {1, 1, 1}, {50.0, 3.0, 3.0}, {{0.0}, {0.0}, {0.0}}, {0.0});
  EXPECT_LE(object_alpha({kStuff, 0, 1}, r.weights, 0), 1e-6);
  EXPECT_LE(object_alpha({kStuff, 0, 1}, r.weights, 1), 1e-6);
}

namespace {

// Two sources, three rays; ray 1 is empty.
std::shared_ptr<CompositePlan> small_plan() {
  auto p = std::make_shared<CompositePlan>();
  p->refs = {{0, 0, 0.3, 0.1}, {1, 0, 0.2, 0.2}, {0, 1, 0.4, 0.5}, {1, 1, 0.5, 0.3}, {1, 2, 0.1, 0.4}, {0, 2, 0.6, 0.9}};
  p->offsets = {0, 3, 3, 6};
  return p;
}

ad::Tensor<double> uniform_tensor(ad::Shape s, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  ad::Tensor<double> t(std::move(s));
  for (auto& v : t.data) v = u(rng);
  return t;
}

}  // namespace

TEST(CompositeOp, MatchesPerRayComposite) {
  auto plan = small_plan();
  Graph<double> g;
  auto f0 = uniform_tensor({3, 2}, 1, -1, 1), f1 = uniform_tensor({3, 2}, 2, -1, 1);
  auto s0 = uniform_tensor({3}, 3, 0, 3), s1 = uniform_tensor({3}, 4, 0, 3);
  auto sky = uniform_tensor({3, 2}, 5, -1, 1);
  auto stats = std::make_shared<CompositeStats>();
  Var out = composite(g, {g.constant(f0), g.constant(f1)}, {g.constant(s0), g.constant(s1)}, g.constant(sky), plan,
                      stats);
  const ad::Tensor<double>* F[2] = {&f0, &f1};
  const ad::Tensor<double>* S[2] = {&s0, &s1};
  for (int r = 0; r < 3; ++r) {
    std::vector<double> t, d, s;
    std::vector<std::vector<double>> f;
    for (int i = plan->offsets[r]; i < plan->offsets[r + 1]; ++i) {
      const auto& ref = plan->refs[static_cast<std::size_t>(i)];
      t.push_back(ref.t);
      d.push_back(ref.delta);
      s.push_back((*S[ref.src])[static_cast<std::size_t>(ref.row)]);
      f.push_back({F[ref.src]->at(ref.row, 0), F[ref.src]->at(ref.row, 1)});
    }
    auto want = composite_ray(t, d, s, f, {sky.at(r, 0), sky.at(r, 1)});
    EXPECT_NEAR(g.value(out).at(r, 0), want.feature[0], 1e-14);
    EXPECT_NEAR(g.value(out).at(r, 1), want.feature[1], 1e-14);
    EXPECT_NEAR(stats->sky_weight[static_cast<std::size_t>(r)], want.sky_weight, 1e-14);
  }
  EXPECT_EQ(g.value(out).at(1, 0), sky.at(1, 0));
}

TEST(CompositeOp, GradientMatchesFiniteDifferences) {
  auto plan = small_plan();
  auto r = ad::check_gradients(
      "composite",
      {uniform_tensor({3, 2}, 1, -1, 1), uniform_tensor({3, 2}, 2, -1, 1), uniform_tensor({3}, 3, 0.1, 3),
       uniform_tensor({3}, 4, 0.1, 3), uniform_tensor({3, 2}, 5, -1, 1)},
      [plan](Graph<double>& g, const std::vector<Var>& v) { return composite(g, {v[0], v[1]}, {v[2], v[3]}, v[4], plan); });
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(CompositeOp, RejectsUnsortedPlan) {
  auto plan = small_plan();
  std::swap(plan->refs[0].t, plan->refs[2].t);
  Graph<double> g;
  auto f = g.constant(uniform_tensor({3, 2}, 1, -1, 1));
  auto s = g.constant(uniform_tensor({3}, 2, 0, 1));
  EXPECT_THROW(composite(g, {f, f}, {s, s}, g.constant(uniform_tensor({3, 2}, 3, -1, 1)), plan), std::invalid_argument);
}

TEST(Render, WeightsPartitionUnity) {
  auto s = test::tiny_scene();
  auto params = init_generator(s.arch, s.grid.num_labels, 5);
  RenderOptions opt;
  opt.neural = false;
  auto out = render_scene(params, s, s.camera, opt);
  bool any_object = false, any_stuff = false;
  for (std::size_t r = 0; r < out.sky_weight.size(); ++r) {
    double alpha_sum = 0;
    for (int k = 0; k < out.alphas.dim(1); ++k) {
      const double a = out.alphas.at(static_cast<int>(r), k);
      EXPECT_GE(a, -1e-12);
      EXPECT_LE(a, 1 + 1e-12);
      alpha_sum += a;
    }
    EXPECT_NEAR(alpha_sum, out.object_weight[r], 1e-12);
    EXPECT_NEAR(out.object_weight[r] + out.stuff_weight[r] + out.sky_weight[r], 1.0, 1e-9);
    any_object |= out.object_weight[r] > 0.01;
    any_stuff |= out.stuff_weight[r] > 0.01;
  }
  EXPECT_TRUE(any_object);
  EXPECT_TRUE(any_stuff);
}

TEST(Render, EmptySceneIsPureSky) {
  auto s = test::tiny_scene();
  std::fill(s.grid.labels.begin(), s.grid.labels.end(), 0);
  s.layout = ObjectLayout{};
  auto params = init_generator(s.arch, s.grid.num_labels, 5);
  RenderOptions opt;
  opt.neural = false;
  auto out = render_scene(params, s, s.camera, opt);
  Graph<double> g;
  ParamBinder<double> P(g, params, false);
  auto L = latent_leaves<double>(g, s);
  std::vector<double> dirs;
  for (const auto& r : out.plan.rays) dirs.insert(dirs.end(), {r.dir[0], r.dir[1], r.dir[2]});
  const auto& sky = g.value(sky_feature(g, P, s.arch, L.z_wld, dirs));
  EXPECT_EQ(out.features.data, sky.data);
}

TEST(Render, ObjectBehindCameraChangesNothing) {
  auto s = test::tiny_scene();
  auto params = init_generator(s.arch, s.grid.num_labels, 5);
  auto before = render_scene(params, s, s.camera);
  ObjectBox b;
  b.translation = s.camera.position - 3.0 * (s.camera.R() * Vec3::UnitZ());
  b.size = Vec3(0.5, 0.5, 0.5);
  s.layout.insert(b);
  auto after = render_scene(params, s, s.camera);
  EXPECT_EQ(before.features.data, after.features.data);
  EXPECT_EQ(before.rgb.data, after.rgb.data);
}

TEST(Render, GuidedSampleCountBound) {
  auto s = test::tiny_scene();
  auto plan = plan_render(s.grid, s.layout, s.arch, s.camera, Jitter{3, true});
  const int K = static_cast<int>(s.layout.live_count());
  for (int r = 0; r < plan.composite->rays(); ++r)
    EXPECT_LE(plan.composite->offsets[r + 1] - plan.composite->offsets[r],
              s.arch.max_voxels * s.arch.points_per_voxel + K * s.arch.points_per_object);
}

namespace {

ArchConfig renderer_arch() {
  auto a = test::tiny_arch();
  a.feat_dim = 3;
  return a;
}

}  // namespace

TEST(NeuralRenderer, OutputShapeAndRange) {
  auto a = renderer_arch();
  ParamStore s;
  std::mt19937_64 rng(3);
  init_neural_renderer(s, a, rng);
  Graph<double> g;
  ParamBinder<double> P(g, s, false);
  Var f = g.constant(uniform_tensor({3, 1, 5, 7}, 9, -2, 2));
  Var z = g.constant(uniform_tensor({8}, 10, -1, 1));
  const auto& rgb = g.value(neural_render(g, P, a, f, z));
  EXPECT_EQ(rgb.shape, (ad::Shape{3, 10, 14}));
  for (double v : rgb.data) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_THROW(neural_render(g, P, a, g.constant(uniform_tensor({2, 1, 4, 4}, 1, -1, 1)), z), std::invalid_argument);
}

TEST(NeuralRenderer, TranslationCovariance) {
  auto a = renderer_arch();
  ParamStore s;
  std::mt19937_64 rng(4);
  init_neural_renderer(s, a, rng);
  const int H = 10, W = 12;
  auto base = uniform_tensor({3, 1, H, W + 1}, 5, -1, 1);
  ad::Tensor<double> left({3, 1, H, W}), right({3, 1, H, W});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        left[static_cast<std::size_t>((c * H + y) * W + x)] = base[static_cast<std::size_t>((c * H + y) * (W + 1) + x)];
        right[static_cast<std::size_t>((c * H + y) * W + x)] = base[static_cast<std::size_t>((c * H + y) * (W + 1) + x + 1)];
      }
  auto render = [&](const ad::Tensor<double>& f) {
    Graph<double> g;
    ParamBinder<double> P(g, s, false);
    return g.value(neural_render(g, P, a, g.constant(f), g.constant(uniform_tensor({8}, 6, -1, 1))));
  };
  auto L = render(left), R = render(right);
  // Output pixel x of R equals pixel x + 2 of L away from the borders.
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 2 * H; ++y)
      for (int x = kRendererHalo; x < 2 * W - 2 - kRendererHalo; ++x)
        ASSERT_EQ(R.at(c, y, x), L.at(c, y, x + 2)) << c << " " << y << " " << x;
}

TEST(NeuralRenderer, FeatureGradientMatchesFiniteDifferences) {
  auto a = renderer_arch();
  ParamStore s;
  std::mt19937_64 rng(5);
  init_neural_renderer(s, a, rng);
  const auto z = uniform_tensor({8}, 7, -1, 1);
  auto r = ad::check_gradients("neural_render", {uniform_tensor({3, 1, 4, 4}, 8, -1, 1)},
                               [&](Graph<double>& g, const std::vector<Var>& v) {
                                 ParamBinder<double> P(g, s, false);
                                 return neural_render(g, P, a, v[0], g.constant(z));
                               });
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(Patch, AllOnesIsPlainCrop) {
  auto rgb = uniform_tensor({3, 8, 10}, 1, 0, 1);
  ad::Tensor<double> alpha({4, 5}, 1.0);
  PixelRect rect{2, 1, 7, 6};
  auto p = extract_patch(rgb, alpha, rect);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 5; ++x) EXPECT_EQ(p.at(c, y, x), rgb.at(c, y + 1, x + 2));
}

TEST(Patch, AllZerosIsBlack) {
  auto rgb = uniform_tensor({3, 8, 10}, 1, 0, 1);
  ad::Tensor<double> alpha({4, 5}, 0.0);
  auto p = extract_patch(rgb, alpha, PixelRect{0, 0, 10, 8});
  for (double v : p.data) EXPECT_EQ(v, 0.0);
}

TEST(Patch, CheckerboardCoversTwoByTwoBlocks) {
  ad::Tensor<double> rgb({3, 8, 8}, 1.0);
  ad::Tensor<double> alpha({4, 4});
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) alpha.at(y, x) = (x + y) % 2;
  auto p = extract_patch(rgb, alpha, PixelRect{0, 0, 8, 8});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) EXPECT_EQ(p.at(1, y, x), static_cast<double>((x / 2 + y / 2) % 2));
}

TEST(Patch, EmptyRectRejected) {
  EXPECT_THROW(extract_patch(ad::Tensor<double>({3, 4, 4}), ad::Tensor<double>({2, 2}), PixelRect{1, 1, 1, 3}),
               std::invalid_argument);
}

TEST(Patch, DifferentiableFormMatchesExactly) {
  auto rgb = uniform_tensor({3, 12, 16}, 2, 0, 1);
  auto alpha = uniform_tensor({6, 8}, 3, 0, 1);
  PixelRect rect{3, 1, 14, 10};
  Graph<double> g;
  auto a4 = alpha;
  a4.shape = {1, 1, 6, 8};
  const auto& v = g.value(patch_var(g, g.constant(rgb), g.constant(a4), rect));
  EXPECT_EQ(v.data, extract_patch(rgb, alpha, rect).data);
  auto scaled = rescale_patch(v);
  EXPECT_EQ(scaled.shape, (ad::Shape{3, kPatchSize, kPatchSize}));
}

TEST(Patch, VisiblePixelCount) {
  ad::Tensor<double> alpha({4, 4}, 0.0);
  alpha.at(1, 1) = 0.9;
  alpha.at(1, 2) = 0.4;
  EXPECT_EQ(visible_pixels(alpha, 8, PixelRect{0, 0, 8, 8}), 4);
  EXPECT_EQ(visible_pixels(alpha, 8, PixelRect{0, 0, 3, 3}), 1);
}

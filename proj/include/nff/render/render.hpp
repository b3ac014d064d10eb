// SPDX-License-Identifier: Apache-2.0
#pragma once

// Scene rendering: per-ray guided sampling, field evaluation, compositing into
// a feature image, object alpha maps, and the neural renderer.

#include <memory>
#include <optional>
#include <random>
#include <vector>

#include "nff/generators/feature_grid.hpp"
#include "nff/generators/fields.hpp"
#include "nff/render/composite.hpp"
#include "nff/render/neural_renderer.hpp"
#include "nff/sampling/samplers.hpp"
#include "nff/scene/scene.hpp"

namespace nff {

/// All generator parameters (feature grid, stuff/object/sky heads, renderer).
inline ParamStore init_generator(const ArchConfig& a, int num_labels, std::uint64_t seed) {
  a.validate();
  ParamStore s;
  std::mt19937_64 rng(seed);
  init_feature_grid(s, a, num_labels, rng);
  init_stuff_head(s, a, rng);
  init_object_head(s, a, rng);
  init_sky_head(s, a, rng);
  init_neural_renderer(s, a, rng);
  return s;
}

/// Feature-pixel window [x0, x1) x [y0, y1); the default covers the image.
struct Window {
  int x0 = 0, y0 = 0, x1 = -1, y1 = -1;
};

/// Ray samples for a window of feature pixels, grouped for batched evaluation.
struct RenderPlan {
  Camera feature_camera;
  Window window;
  std::vector<Ray> rays;
  std::vector<double> stuff_pts;                 // world xyz of stuff samples
  std::vector<int> object_slots;                 // layout slots with samples
  std::vector<std::vector<double>> object_pts;   // canonical xyz per entry of object_slots
  std::shared_ptr<CompositePlan> composite = std::make_shared<CompositePlan>();

  int width() const { return window.x1 - window.x0; }
  int height() const { return window.y1 - window.y0; }
};

/// Samples of one ray in depth order.
inline std::vector<Sample> ray_samples(const SemanticVoxelGrid& grid, const ObjectLayout& layout, const ArchConfig& a,
                                       const Ray& ray, const Jitter& jit, std::uint64_t pixel) {
  const auto hits = traverse_nonempty(grid, ray, a.max_voxels);
  const auto stuff = sample_stuff(ray, hits, a.points_per_voxel, jit, pixel);
  std::vector<std::vector<Sample>> objs;
  for (const auto& [k, box] : layout.live_boxes())
    objs.push_back(sample_object(ray, box, static_cast<int>(k), a.points_per_object, jit, pixel));
  return merge_sort_samples(stuff, objs);
}

namespace detail {

/// Shared plan assembly; `sample(ray, pixel)` returns one ray's sorted samples.
template <class SampleFn>
RenderPlan build_plan(const ObjectLayout& layout, const Camera& cam, Window win, SampleFn&& sample) {
  cam.validate();
  RenderPlan p;
  p.feature_camera = cam.half();
  const int W = p.feature_camera.width, H = p.feature_camera.height;
  if (win.x1 < 0) win = {0, 0, W, H};
  if (win.x0 < 0 || win.y0 < 0 || win.x1 > W || win.y1 > H || win.x0 >= win.x1 || win.y0 >= win.y1)
    throw std::invalid_argument("render window outside the feature image");
  p.window = win;
  for (int v = win.y0; v < win.y1; ++v)
    for (int u = win.x0; u < win.x1; ++u) p.rays.push_back({p.feature_camera.position, p.feature_camera.pixel_dir(u, v), u, v});

  const int R = static_cast<int>(p.rays.size());
  std::vector<std::vector<Sample>> per_ray(static_cast<std::size_t>(R));
#pragma omp parallel for schedule(dynamic, 8)
  for (int r = 0; r < R; ++r) {
    const Ray& ray = p.rays[static_cast<std::size_t>(r)];
    const auto pixel = static_cast<std::uint64_t>(ray.v) * static_cast<std::uint64_t>(W) + static_cast<std::uint64_t>(ray.u);
    per_ray[static_cast<std::size_t>(r)] = sample(ray, pixel);
  }

  // Source 0 is stuff; object slot k maps to source 1 + position in object_slots.
  std::vector<int> slot_source(layout.slots(), -1);
  std::vector<int> counts(layout.slots(), 0);
  for (const auto& samples : per_ray)
    for (const auto& s : samples)
      if (s.source >= 0) ++counts[static_cast<std::size_t>(s.source)];
  for (std::size_t k = 0; k < layout.slots(); ++k)
    if (counts[k] > 0) {
      slot_source[k] = 1 + static_cast<int>(p.object_slots.size());
      p.object_slots.push_back(static_cast<int>(k));
      p.object_pts.emplace_back();
    }
  auto& cp = *p.composite;
  for (const auto& samples : per_ray) {
    for (const auto& s : samples) {
      SampleRef ref;
      ref.delta = s.delta;
      ref.t = s.t;
      if (s.source == kStuff) {
        ref.src = 0;
        ref.row = static_cast<int>(p.stuff_pts.size() / 3);
        p.stuff_pts.insert(p.stuff_pts.end(), {s.x[0], s.x[1], s.x[2]});
      } else {
        ref.src = slot_source[static_cast<std::size_t>(s.source)];
        auto& pts = p.object_pts[static_cast<std::size_t>(ref.src - 1)];
        ref.row = static_cast<int>(pts.size() / 3);
        pts.insert(pts.end(), {s.x_obj[0], s.x_obj[1], s.x_obj[2]});
      }
      cp.refs.push_back(ref);
    }
    cp.offsets.push_back(static_cast<int>(cp.refs.size()));
  }
  return p;
}

}  // namespace detail

inline RenderPlan plan_render(const SemanticVoxelGrid& grid, const ObjectLayout& layout, const ArchConfig& a,
                              const Camera& cam, const Jitter& jit, Window win = {}) {
  return detail::build_plan(layout, cam, win, [&](const Ray& ray, std::uint64_t pixel) {
    return ray_samples(grid, layout, a, ray, jit, pixel);
  });
}

inline constexpr int kDenseSamples = 256;

/// `n` equal strata over the union of the ray's overlap with the grid and with
/// every box. Density is zero outside non-empty voxels and outside boxes, so
/// each stratum contributes one sample per piece it shares with a non-empty
/// voxel or a box, placed at the piece's midpoint with the piece's length.
inline std::vector<Sample> dense_ray_samples(const SemanticVoxelGrid& grid, const ObjectLayout& layout, const Ray& ray,
                                             int n = kDenseSamples) {
  std::vector<Sample> out;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  auto extend = [&](const std::optional<std::pair<double, double>>& span) {
    if (!span || span->second <= span->first) return;
    lo = std::min(lo, span->first);
    hi = std::max(hi, span->second);
  };
  extend(ray_aabb(ray.origin, ray.dir, grid.lower(), grid.upper()));
  const auto boxes = layout.live_boxes();
  std::vector<std::pair<int, std::pair<double, double>>> spans;
  for (const auto& h : traverse_nonempty(grid, ray, std::numeric_limits<int>::max()))
    spans.push_back({kStuff, {h.t_enter, h.t_exit}});
  for (const auto& [k, box] : boxes) {
    auto span = ray_box_intersect(ray, box);
    extend(span);
    if (span && span->second > span->first) spans.push_back({static_cast<int>(k), *span});
  }
  if (!(hi > lo)) return out;
  const double step = (hi - lo) / n;
  for (int j = 0; j < n; ++j) {
    const double a = lo + j * step, b = j + 1 == n ? hi : lo + (j + 1) * step;
    for (const auto& [src, span] : spans) {
      const double p = std::max(a, span.first), q = std::min(b, span.second);
      if (q <= p) continue;
      Sample s;
      s.t = 0.5 * (p + q);
      s.delta = q - p;
      s.x = ray.origin + s.t * ray.dir;
      s.source = src;
      if (src != kStuff)
        s.x_obj = object_from_world(s.x, layout.at(static_cast<std::size_t>(src)))
                      .cwiseMax(Vec3::Constant(-0.5))
                      .cwiseMin(Vec3::Constant(0.5));
      out.push_back(s);
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const Sample& x, const Sample& y) {
    if (x.t != y.t) return x.t < y.t;
    return x.source < y.source;
  });
  return out;
}

/// Plan for the dense reference renderer.
inline RenderPlan plan_dense(const SemanticVoxelGrid& grid, const ObjectLayout& layout, const Camera& cam,
                             int n = kDenseSamples, Window win = {}) {
  return detail::build_plan(layout, cam, win, [&](const Ray& ray, std::uint64_t) {
    return dense_ray_samples(grid, layout, ray, n);
  });
}

template <class T>
struct FeatureRender {
  Var features;  // [R, M_f]
  Var alphas;    // [R, slots]; invalid when the layout has no slots
  std::shared_ptr<CompositeStats> stats;
};

/// Differentiable feature image for a plan. `z_obj` is indexed by layout slot
/// (entries for dead slots are ignored); `alpha_slots` is layout.slots().
template <class T>
FeatureRender<T> render_features(Graph<T>& g, ParamBinder<T>& P, const ArchConfig& a, const SemanticVoxelGrid& grid,
                                 const RenderPlan& plan, Var psi, Var z_wld, const std::vector<Var>& z_obj,
                                 int alpha_slots) {
  const int M = a.feat_dim, K = alpha_slots;
  const int R = static_cast<int>(plan.rays.size());
  auto with_alpha = [&](Var f, int rows, int slot) {
    if (K == 0) return f;
    Tensor<T> oh(Shape{rows, K}, T(0));
    if (slot >= 0)
      for (int r = 0; r < rows; ++r) oh.at(r, slot) = T(1);
    return ad::concat(g, {f, g.constant(std::move(oh))}, 1);
  };

  std::vector<Var> feats, sigmas;
  const int ns = static_cast<int>(plan.stuff_pts.size() / 3);
  if (ns > 0) {
    Var at = trilerp_points(g, psi, grid, plan.stuff_pts);
    auto f = stuff_field(g, P, a, at, grid, plan.stuff_pts);
    feats.push_back(with_alpha(f.feat, ns, -1));
    sigmas.push_back(f.sigma);
  } else {
    feats.push_back(g.constant(Tensor<T>(Shape{0, M + K})));
    sigmas.push_back(g.constant(Tensor<T>(Shape{0})));
  }
  for (std::size_t j = 0; j < plan.object_slots.size(); ++j) {
    const int slot = plan.object_slots[j];
    const auto& pts = plan.object_pts[j];
    auto f = object_field(g, P, a, z_obj.at(static_cast<std::size_t>(slot)), pts);
    feats.push_back(with_alpha(f.feat, static_cast<int>(pts.size() / 3), slot));
    sigmas.push_back(f.sigma);
  }
  std::vector<double> dirs;
  dirs.reserve(static_cast<std::size_t>(R) * 3);
  for (const auto& r : plan.rays) dirs.insert(dirs.end(), {r.dir[0], r.dir[1], r.dir[2]});
  Var sky = with_alpha(sky_feature(g, P, a, z_wld, dirs), R, -1);

  FeatureRender<T> out;
  out.stats = std::make_shared<CompositeStats>();
  Var comp = composite(g, feats, sigmas, sky, std::shared_ptr<const CompositePlan>(plan.composite), out.stats);
  if (K == 0) {
    out.features = comp;
  } else {
    out.features = ad::slice(g, comp, 1, 0, M);
    out.alphas = ad::slice(g, comp, 1, M, M + K);
  }
  return out;
}

/// [R, C] rows of a W x H window -> [C, 1, H, W].
template <class T>
Var to_image(Graph<T>& g, Var rows, int width, int height) {
  const int C = g.shape(rows)[1];
  return ad::reshape(g, ad::transpose(g, rows), Shape{C, 1, height, width});
}

/// Latent leaves for a scene: z_wld and one z_obj per layout slot.
template <class T>
struct Latents {
  Var z_wld;
  std::vector<Var> z_obj;
};

template <class T>
Latents<T> latent_leaves(Graph<T>& g, const Scene& s, bool requires_grad = false) {
  auto leaf = [&](const std::vector<double>& z, const char* name) {
    Tensor<T> t(Shape{static_cast<int>(z.size())});
    for (std::size_t i = 0; i < z.size(); ++i) t[i] = T(z[i]);
    return g.leaf(std::move(t), requires_grad, name);
  };
  Latents<T> L;
  L.z_wld = leaf(world_latent(s.world_seed, s.arch.z_dim), "z_wld");
  for (std::size_t k = 0; k < s.layout.slots(); ++k)
    L.z_obj.push_back(s.layout.live(k) ? leaf(object_latent(s.layout.at(k).latent_seed, s.arch.z_dim), "z_obj")
                                       : Var{});
  return L;
}

/// Differentiable RGB [3, 2h, 2w] of a plan window, plus the feature render.
template <class T>
struct RgbRender {
  Var rgb;
  FeatureRender<T> feat;
};

template <class T>
RgbRender<T> render_rgb(Graph<T>& g, ParamBinder<T>& P, const Scene& s, const RenderPlan& plan, const Latents<T>& L,
                        Var psi = Var{}) {
  if (!psi.valid()) psi = feature_grid(g, P, L.z_wld, s.grid);
  RgbRender<T> out;
  out.feat = render_features(g, P, s.arch, s.grid, plan, psi, L.z_wld, L.z_obj, static_cast<int>(s.layout.slots()));
  out.rgb = neural_render(g, P, s.arch, to_image(g, out.feat.features, plan.width(), plan.height()), L.z_wld);
  return out;
}

/// Everything a render produces, as plain tensors.
struct RenderOutput {
  int width = 0, height = 0;              // RGB resolution
  Tensor<double> features;                // [H_f * W_f, M_f], row-major pixels
  Tensor<double> alphas;                  // [H_f * W_f, slots]
  Tensor<double> rgb;                     // [3, H, W]
  std::vector<double> stuff_weight;       // per feature pixel
  std::vector<double> object_weight;      // per feature pixel, all objects
  std::vector<double> sky_weight;         // per feature pixel
  RenderPlan plan;
};

struct RenderOptions {
  std::optional<std::uint64_t> jitter_seed;  // defaults to the scene's render seed
  bool jitter = true;
  bool neural = true;
  int dense_samples = 0;  // > 0: dense reference sampling instead of guided
};

/// Full render of `scene` at `cam` with generator parameters `params`.
inline RenderOutput render_scene(const ParamStore& params, const Scene& scene, const Camera& cam,
                                 const RenderOptions& opt = {}) {
  const ArchConfig& a = scene.arch;
  Graph<double> g;
  ParamBinder<double> P(g, params, false);
  auto L = latent_leaves<double>(g, scene);
  Var psi = feature_grid(g, P, L.z_wld, scene.grid);
  Jitter jit{opt.jitter_seed.value_or(render_jitter_seed(scene.world_seed)), opt.jitter};
  RenderOutput out;
  out.plan = opt.dense_samples > 0 ? plan_dense(scene.grid, scene.layout, cam, opt.dense_samples)
                                   : plan_render(scene.grid, scene.layout, a, cam, jit);
  const int K = static_cast<int>(scene.layout.slots());
  auto fr = render_features(g, P, a, scene.grid, out.plan, psi, L.z_wld, L.z_obj, K);
  out.features = g.value(fr.features);
  if (K > 0) out.alphas = g.value(fr.alphas);
  const int R = out.plan.composite->rays();
  const int S = fr.stats->sources;
  out.stuff_weight.resize(static_cast<std::size_t>(R));
  out.object_weight.resize(static_cast<std::size_t>(R));
  out.sky_weight = fr.stats->sky_weight;
  for (int r = 0; r < R; ++r) {
    out.stuff_weight[static_cast<std::size_t>(r)] = fr.stats->source_weight[static_cast<std::size_t>(r) * S];
    double o = 0;
    for (int s = 1; s < S; ++s) o += fr.stats->source_weight[static_cast<std::size_t>(r) * S + s];
    out.object_weight[static_cast<std::size_t>(r)] = o;
  }
  out.width = cam.width;
  out.height = cam.height;
  if (opt.neural) {
    Var img = to_image(g, fr.features, out.plan.width(), out.plan.height());
    out.rgb = g.value(neural_render(g, P, a, img, L.z_wld));
  }
  return out;
}

}  // namespace nff

// SPDX-License-Identifier: Apache-2.0
#pragma once

// Front-to-back compositing of depth-sorted samples with a sky fallback:
//   alpha_i = 1 - exp(-sigma_i delta_i),  T_i = prod_{j<i} (1 - alpha_j),
//   w_i = T_i alpha_i,  F = sum_i w_i f_i + (1 - sum_i w_i) f_sky.

#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

#include "nff/autodiff/graph.hpp"

namespace nff {

using ad::Graph;
using ad::Shape;
using ad::Tensor;
using ad::Var;

struct CompositeResult {
  std::vector<double> feature;
  std::vector<double> weights;
  double sky_weight = 1.0;
};

/// Single-ray compositing over explicit per-sample features.
inline CompositeResult composite_ray(const std::vector<double>& t, const std::vector<double>& delta,
                                     const std::vector<double>& sigma, const std::vector<std::vector<double>>& f,
                                     const std::vector<double>& f_sky) {
  const std::size_t n = sigma.size();
  if (t.size() != n || delta.size() != n || f.size() != n) throw std::invalid_argument("composite_ray: size mismatch");
  for (std::size_t i = 1; i < n; ++i)
    if (t[i] < t[i - 1]) throw std::invalid_argument("composite_ray: samples are not sorted by depth");
  CompositeResult r;
  r.feature.assign(f_sky.size(), 0.0);
  r.weights.resize(n);
  double T = 1.0, wsum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (f[i].size() != f_sky.size()) throw std::invalid_argument("composite_ray: feature width mismatch");
    const double alpha = 1.0 - std::exp(-sigma[i] * delta[i]);
    const double w = T * alpha;
    r.weights[i] = w;
    wsum += w;
    for (std::size_t c = 0; c < f_sky.size(); ++c) r.feature[c] += w * f[i][c];
    T *= 1.0 - alpha;
  }
  r.sky_weight = 1.0 - wsum;
  for (std::size_t c = 0; c < f_sky.size(); ++c) r.feature[c] += r.sky_weight * f_sky[c];
  return r;
}

/// Accumulated weight of samples tagged `k`.
inline double object_alpha(const std::vector<int>& sources, const std::vector<double>& weights, int k) {
  double a = 0;
  for (std::size_t i = 0; i < sources.size(); ++i)
    if (sources[i] == k) a += weights[i];
  return a;
}

/// Sample reference inside a CompositePlan: `src` selects the feature/density
/// tensor pair, `row` the row inside it.
struct SampleRef {
  int src = 0;
  int row = 0;
  double delta = 0;
  double t = 0;
};

/// Per-ray sample lists in CSR form (ray r owns refs[offsets[r] .. offsets[r+1])).
struct CompositePlan {
  std::vector<int> offsets{0};
  std::vector<SampleRef> refs;
  int rays() const { return static_cast<int>(offsets.size()) - 1; }
};

/// Per-ray weight bookkeeping filled by each forward evaluation.
struct CompositeStats {
  std::vector<double> sample_weight;  // aligned with plan.refs
  std::vector<double> source_weight;  // [rays, sources]
  std::vector<double> sky_weight;     // [rays]
  int sources = 0;
};

/// Differentiable composite over all rays. feats[s] is [N_s, C], sigmas[s] is
/// [N_s], sky is [R, C]; output [R, C].
template <class T>
Var composite(Graph<T>& g, const std::vector<Var>& feats, const std::vector<Var>& sigmas, Var sky,
              std::shared_ptr<const CompositePlan> plan, std::shared_ptr<CompositeStats> stats = nullptr) {
  const std::size_t S = feats.size();
  if (sigmas.size() != S) throw std::invalid_argument("composite: feature/density list mismatch");
  const Shape ss = g.shape(sky);
  if (ss.size() != 2 || ss[0] != plan->rays()) throw std::invalid_argument("composite: sky must be [rays, C]");
  const int C = ss[1];
  for (std::size_t s = 0; s < S; ++s) {
    const Shape fs = g.shape(feats[s]);
    if (fs.size() != 2 || fs[1] != C || g.value(sigmas[s]).size() != static_cast<std::size_t>(fs[0]))
      throw std::invalid_argument("composite: source tensors have inconsistent shapes");
  }
  for (const auto& r : plan->refs)
    if (r.src < 0 || static_cast<std::size_t>(r.src) >= S || r.row < 0 || r.row >= g.shape(feats[static_cast<std::size_t>(r.src)])[0])
      throw std::out_of_range("composite: sample reference out of range");
  for (int r = 0; r < plan->rays(); ++r)
    for (int i = plan->offsets[static_cast<std::size_t>(r)] + 1; i < plan->offsets[static_cast<std::size_t>(r) + 1]; ++i)
      if (plan->refs[static_cast<std::size_t>(i)].t < plan->refs[static_cast<std::size_t>(i) - 1].t)
        throw std::invalid_argument("composite: samples are not sorted by depth");

  std::vector<Var> ins;
  ins.push_back(sky);
  ins.insert(ins.end(), feats.begin(), feats.end());
  ins.insert(ins.end(), sigmas.begin(), sigmas.end());
  const int nsrc = static_cast<int>(S);

  auto fwd = [plan, stats, nsrc, C](Graph<T>& gr, int self) {
    using std::exp;
    const auto& skyv = gr.in(self, 0);
    const int R = plan->rays();
    Tensor<T> out(Shape{R, C}, T(0));
    if (stats) {
      stats->sources = nsrc;
      stats->sample_weight.assign(plan->refs.size(), 0.0);
      stats->source_weight.assign(static_cast<std::size_t>(R) * nsrc, 0.0);
      stats->sky_weight.assign(static_cast<std::size_t>(R), 0.0);
    }
#pragma omp parallel for schedule(dynamic, 16)
    for (int r = 0; r < R; ++r) {
      T* o = out.ptr() + static_cast<std::size_t>(r) * C;
      T trans(1), wsum(0);
      for (int i = plan->offsets[static_cast<std::size_t>(r)]; i < plan->offsets[static_cast<std::size_t>(r) + 1]; ++i) {
        const SampleRef& ref = plan->refs[static_cast<std::size_t>(i)];
        const auto& f = gr.in(self, 1 + ref.src);
        const T sigma = gr.in(self, 1 + nsrc + ref.src)[static_cast<std::size_t>(ref.row)];
        const T alpha = T(1) - exp(-sigma * T(ref.delta));
        const T w = trans * alpha;
        wsum += w;
        const T* fr = f.ptr() + static_cast<std::size_t>(ref.row) * C;
        for (int c = 0; c < C; ++c) o[c] += w * fr[c];
        trans *= T(1) - alpha;
        if (stats) {
          stats->sample_weight[static_cast<std::size_t>(i)] = ad::primal(w);
          stats->source_weight[static_cast<std::size_t>(r) * nsrc + ref.src] += ad::primal(w);
        }
      }
      const T skyw = T(1) - wsum;
      const T* sr = skyv.ptr() + static_cast<std::size_t>(r) * C;
      for (int c = 0; c < C; ++c) o[c] += skyw * sr[c];
      if (stats) stats->sky_weight[static_cast<std::size_t>(r)] = ad::primal(skyw);
    }
    gr.node(self).value = std::move(out);
  };

  auto bwd = [plan, nsrc, C](Graph<T>& gr, int self) {
    using std::exp;
    const auto& gout = gr.node(self).grad;
    const auto& skyv = gr.in(self, 0);
    const int sky_id = gr.input_id(self, 0);
    T* gsky = gr.needs_grad(sky_id) ? gr.grad_ref(sky_id).ptr() : nullptr;
    std::vector<T*> gf(static_cast<std::size_t>(nsrc), nullptr), gs(static_cast<std::size_t>(nsrc), nullptr);
    for (int s = 0; s < nsrc; ++s) {
      const int fid = gr.input_id(self, 1 + s), sid = gr.input_id(self, 1 + nsrc + s);
      if (gr.needs_grad(fid)) gf[static_cast<std::size_t>(s)] = gr.grad_ref(fid).ptr();
      if (gr.needs_grad(sid)) gs[static_cast<std::size_t>(s)] = gr.grad_ref(sid).ptr();
    }
    const int R = plan->rays();
#pragma omp parallel for schedule(dynamic, 16)
    for (int r = 0; r < R; ++r) {
      const int b = plan->offsets[static_cast<std::size_t>(r)], e = plan->offsets[static_cast<std::size_t>(r) + 1];
      const int n = e - b;
      const T* G = gout.ptr() + static_cast<std::size_t>(r) * C;
      const T* fsky = skyv.ptr() + static_cast<std::size_t>(r) * C;
      std::vector<T> w(static_cast<std::size_t>(n)), tnext(static_cast<std::size_t>(n)), gi(static_cast<std::size_t>(n));
      T trans(1), wsum(0);
      for (int i = 0; i < n; ++i) {
        const SampleRef& ref = plan->refs[static_cast<std::size_t>(b + i)];
        const T sigma = gr.in(self, 1 + nsrc + ref.src)[static_cast<std::size_t>(ref.row)];
        const T alpha = T(1) - exp(-sigma * T(ref.delta));
        w[static_cast<std::size_t>(i)] = trans * alpha;
        wsum += w[static_cast<std::size_t>(i)];
        trans *= T(1) - alpha;
        tnext[static_cast<std::size_t>(i)] = trans;
        const T* fr = gr.in(self, 1 + ref.src).ptr() + static_cast<std::size_t>(ref.row) * C;
        T acc(0);
        for (int c = 0; c < C; ++c) acc += G[c] * (fr[c] - fsky[c]);
        gi[static_cast<std::size_t>(i)] = acc;
        if (T* d = gf[static_cast<std::size_t>(ref.src)]) {
          T* dr = d + static_cast<std::size_t>(ref.row) * C;
          for (int c = 0; c < C; ++c) dr[c] += w[static_cast<std::size_t>(i)] * G[c];
        }
      }
      if (gsky) {
        const T skyw = T(1) - wsum;
        T* dr = gsky + static_cast<std::size_t>(r) * C;
        for (int c = 0; c < C; ++c) dr[c] += skyw * G[c];
      }
      // dL/dsigma_k = delta_k (T_{k+1} g_k - sum_{i>k} w_i g_i)
      T tail(0);
      for (int i = n - 1; i >= 0; --i) {
        const SampleRef& ref = plan->refs[static_cast<std::size_t>(b + i)];
        if (T* d = gs[static_cast<std::size_t>(ref.src)])
          d[ref.row] += T(ref.delta) * (tnext[static_cast<std::size_t>(i)] * gi[static_cast<std::size_t>(i)] - tail);
        tail += w[static_cast<std::size_t>(i)] * gi[static_cast<std::size_t>(i)];
      }
    }
  };
  return g.record("composite", ins, true, fwd, bwd);
}

}  // namespace nff

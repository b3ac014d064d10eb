// SPDX-License-Identifier: Apache-2.0
#pragma once

// Central finite-difference verification of reverse-mode gradients.
//
// The graph output is projected onto a fixed random cotangent c, so the check
// compares grad <out(x), c> against (f(x + eps e_i) - f(x - eps e_i)) / 2eps
// for every input element. Perturbations go through Graph::set_value and
// Graph::forward, i.e. the numeric side uses replay, not a rebuild.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "nff/autodiff/graph.hpp"

namespace nff::ad {

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0;  // max over inputs of |a - n|_inf / max(|a|_inf, |n|_inf)
  double tolerance = 0;
  bool passed = false;
};

using GradBuild = std::function<Var(Graph<double>&, const std::vector<Var>&)>;
using GraphHook = std::function<void(Graph<double>&)>;

/// Relative error between analytic and numeric gradient vectors.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& n) {
  double diff = 0, scale = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - n[i]));
    scale = std::max({scale, std::abs(a[i]), std::abs(n[i])});
  }
  if (scale < 1e-12) return diff;
  return diff / scale;
}

/// `hook` runs after the graph is built and may tamper with it (self-tests).
inline GradCheckResult check_gradients(std::string name, const std::vector<Tensor<double>>& inputs,
                                       const GradBuild& build, double tol = 1e-4, double eps = 1e-4,
                                       std::uint64_t seed = 7, const GraphHook& hook = {}) {
  Graph<double> g;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(g.leaf(t, true, "input"));
  Var out = build(g, vars);
  if (hook) hook(g);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor<double> cot(g.shape(out));
  for (auto& v : cot.data) v = u(rng);

  g.backward(out, cot);
  auto project = [&]() {
    const auto& y = g.value(out);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * cot[i];
    return s;
  };

  GradCheckResult r;
  r.name = std::move(name);
  r.tolerance = tol;
  for (std::size_t k = 0; k < vars.size(); ++k) {
    const auto analytic = g.grad(vars[k]).data;
    std::vector<double> numeric(analytic.size());
    Tensor<double> x = inputs[k];
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double x0 = x[i];
      x[i] = x0 + eps;
      g.set_value(vars[k], x);
      g.forward();
      const double fp = project();
      x[i] = x0 - eps;
      g.set_value(vars[k], x);
      g.forward();
      const double fm = project();
      x[i] = x0;
      numeric[i] = (fp - fm) / (2 * eps);
    }
    g.set_value(vars[k], x);
    g.forward();
    r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic, numeric));
  }
  r.passed = std::isfinite(r.max_rel_error) && r.max_rel_error <= tol;
  return r;
}

/// Makes every node with the given op name push its gradient twice.
inline GraphHook corrupt_op(const std::string& op) {
  return [op](Graph<double>& g) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      auto& n = g.node(static_cast<int>(i));
      if (n.op != op || !n.backward) continue;
      auto orig = n.backward;
      n.backward = [orig](Graph<double>& gr, int self) {
        orig(gr, self);
        orig(gr, self);
      };
    }
  };
}

}  // namespace nff::ad

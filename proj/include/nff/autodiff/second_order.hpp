// SPDX-License-Identifier: Apache-2.0
#pragma once

// Gradient of the input-gradient norm ||grad_x D(x)||^2 with respect to the
// parameters of D, by forward-over-reverse: the reverse pass is rerun over
// dual numbers whose input tangent is grad_x D, so the tangent part of each
// parameter gradient is the mixed second derivative applied to grad_x D.

#include <stdexcept>
#include <string>

#include "nff/autodiff/dual.hpp"
#include "nff/autodiff/params.hpp"

namespace nff::ad {

struct InputGradPenalty {
  double output = 0;            // D(x)
  Tensor<double> input_grad;    // grad_x D(x)
  double penalty = 0;           // ||grad_x D(x)||^2
  TensorMap param_grad;         // d penalty / d theta
};

/// `build(graph, binder, x)` must record D on any scalar type and return a
/// scalar Var. It is invoked twice: over double and over Dual<double>.
template <class Build>
InputGradPenalty input_grad_penalty(const ParamStore& store, const Tensor<double>& x, Build&& build) {
  InputGradPenalty r;
  {
    Graph<double> g;
    ParamBinder<double> P(g, store, false);
    Var xv = g.leaf(x, true, "input");
    Var out = build(g, P, xv);
    if (g.value(out).size() != 1) throw std::invalid_argument("input_grad_penalty: D must return a scalar");
    if (auto op = g.first_without_second_order(); !op.empty())
      throw std::invalid_argument("second-order gradient unavailable: op '" + op + "' has no forward-over-reverse rule");
    g.backward(out);
    r.output = g.value(out)[0];
    r.input_grad = g.grad(xv);
  }
  for (double v : r.input_grad.data) r.penalty += v * v;

  using D = Dual<double>;
  Graph<D> h;
  ParamBinder<D> P(h, store, true);
  Tensor<D> xd(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) xd[i] = D(x[i], r.input_grad[i]);
  Var xv = h.leaf(std::move(xd), false, "input");
  Var out = build(h, P, xv);
  if (auto op = h.first_without_second_order(); !op.empty())
    throw std::invalid_argument("second-order gradient unavailable: op '" + op + "' has no forward-over-reverse rule");
  h.backward(out);
  for (const auto& [name, v] : P.bound())
    r.param_grad[name] = map_tensor<double>(h.grad(v), [](const D& d) { return 2.0 * d.d; });
  return r;
}

}  // namespace nff::ad

// SPDX-License-Identifier: Apache-2.0
#pragma once

// Primitive operations with reverse-mode rules. Every op is written once for a
// generic scalar, so evaluating the same graph over Dual<double> gives the
// forward-over-reverse products needed for input-gradient penalties. Ops whose
// backward is only piecewise differentiable (relu, leaky_relu) are recorded
// without a second-order rule.

#include <array>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "nff/autodiff/dual.hpp"
#include "nff/autodiff/graph.hpp"
#include "nff/autodiff/kernels.hpp"

namespace nff::ad {

namespace detail {

inline void same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

template <class T>
void accumulate(Graph<T>& g, int id, const Tensor<T>& src) {
  if (!g.needs_grad(id)) return;
  auto& dst = g.grad_ref(id);
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <class T>
T softplus(T x) {
  using std::exp;
  using std::log1p;
  return x > T(0) ? x + log1p(exp(-x)) : log1p(exp(x));
}

template <class T>
T sigmoid(T x) {
  using std::exp;
  if (x >= T(0)) return T(1) / (T(1) + exp(-x));
  const T e = exp(x);
  return e / (T(1) + e);
}

/// Elementwise unary op: value f(x), derivative df(x, f(x)).
template <class T, class F, class DF>
Var unary(Graph<T>& g, Var x, const char* name, bool second_order, F f, DF df) {
  return g.record(
      name, {x}, second_order,
      [f](Graph<T>& gr, int self) {
        const auto& a = gr.in(self, 0);
        auto& out = gr.node(self).value;
        out.shape = a.shape;
        out.data.resize(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
      },
      [df](Graph<T>& gr, int self) {
        const int xi = gr.input_id(self, 0);
        if (!gr.needs_grad(xi)) return;
        const auto& a = gr.in(self, 0);
        const auto& y = gr.node(self).value;
        const auto& gy = gr.node(self).grad;
        auto& gx = gr.grad_ref(xi);
        for (std::size_t i = 0; i < a.size(); ++i) gx[i] += gy[i] * df(a[i], y[i]);
      });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <class T>
Var add(Graph<T>& g, Var a, Var b) {
  detail::same_shape(g.shape(a), g.shape(b), "add");
  return g.record(
      "add", {a, b}, true,
      [](Graph<T>& gr, int self) {
        const auto &x = gr.in(self, 0), &y = gr.in(self, 1);
        auto& out = gr.node(self).value;
        out.shape = x.shape;
        out.data.resize(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
      },
      [](Graph<T>& gr, int self) {
        const auto& gy = gr.node(self).grad;
        detail::accumulate(gr, gr.input_id(self, 0), gy);
        detail::accumulate(gr, gr.input_id(self, 1), gy);
      });
}

template <class T>
Var sub(Graph<T>& g, Var a, Var b) {
  detail::same_shape(g.shape(a), g.shape(b), "sub");
  return g.record(
      "sub", {a, b}, true,
      [](Graph<T>& gr, int self) {
        const auto &x = gr.in(self, 0), &y = gr.in(self, 1);
        auto& out = gr.node(self).value;
        out.shape = x.shape;
        out.data.resize(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
      },
      [](Graph<T>& gr, int self) {
        const auto& gy = gr.node(self).grad;
        detail::accumulate(gr, gr.input_id(self, 0), gy);
        const int bi = gr.input_id(self, 1);
        if (gr.needs_grad(bi)) {
          auto& gb = gr.grad_ref(bi);
          for (std::size_t i = 0; i < gy.size(); ++i) gb[i] -= gy[i];
        }
      });
}

template <class T>
Var mul(Graph<T>& g, Var a, Var b) {
  detail::same_shape(g.shape(a), g.shape(b), "mul");
  return g.record(
      "mul", {a, b}, true,
      [](Graph<T>& gr, int self) {
        const auto &x = gr.in(self, 0), &y = gr.in(self, 1);
        auto& out = gr.node(self).value;
        out.shape = x.shape;
        out.data.resize(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
      },
      [](Graph<T>& gr, int self) {
        const auto& gy = gr.node(self).grad;
        const auto &x = gr.in(self, 0), &y = gr.in(self, 1);
        const int ai = gr.input_id(self, 0), bi = gr.input_id(self, 1);
        if (gr.needs_grad(ai)) {
          auto& ga = gr.grad_ref(ai);
          for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * y[i];
        }
        if (gr.needs_grad(bi)) {
          auto& gb = gr.grad_ref(bi);
          for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * x[i];
        }
      });
}

template <class T>
Var scale(Graph<T>& g, Var a, double c) {
  const T k(c);
  return detail::unary(
      g, a, "scale", true, [k](T x) { return k * x; }, [k](T, T) { return k; });
}

template <class T>
Var add_scalar(Graph<T>& g, Var a, double c) {
  const T k(c);
  return detail::unary(
      g, a, "add_scalar", true, [k](T x) { return x + k; }, [](T, T) { return T(1); });
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities

template <class T>
Var relu(Graph<T>& g, Var x) {
  // Subgradient at 0 is 0.
  return detail::unary(
      g, x, "relu", false, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Var leaky_relu(Graph<T>& g, Var x, double slope = 0.2) {
  const T s(slope);
  return detail::unary(
      g, x, "leaky_relu", false, [s](T v) { return v > T(0) ? v : s * v; },
      [s](T v, T) { return v > T(0) ? T(1) : s; });
}

template <class T>
Var softplus(Graph<T>& g, Var x) {
  return detail::unary(
      g, x, "softplus", true, [](T v) { return detail::softplus(v); }, [](T v, T) { return detail::sigmoid(v); });
}

template <class T>
Var sigmoid(Graph<T>& g, Var x) {
  return detail::unary(
      g, x, "sigmoid", true, [](T v) { return detail::sigmoid(v); }, [](T, T y) { return y * (T(1) - y); });
}

/// x^p for strictly positive x.
template <class T>
Var pow_scalar(Graph<T>& g, Var x, double p) {
  const double pp = p;
  return detail::unary(
      g, x, "pow", true,
      [pp](T v) {
        using std::pow;
        return pow(v, static_cast<decltype(primal(v))>(pp));
      },
      [pp](T v, T) {
        using std::pow;
        return T(pp) * pow(v, static_cast<decltype(primal(v))>(pp - 1.0));
      });
}

template <class T>
Var sin(Graph<T>& g, Var x) {
  return detail::unary(
      g, x, "sin", true,
      [](T v) {
        using std::sin;
        return sin(v);
      },
      [](T v, T) {
        using std::cos;
        return cos(v);
      });
}

// ---------------------------------------------------------------------------
// Reductions and shape manipulation

template <class T>
Var sum(Graph<T>& g, Var x) {
  return g.record(
      "sum", {x}, true,
      [](Graph<T>& gr, int self) {
        const auto& a = gr.in(self, 0);
        T acc(0);
        for (const T& v : a.data) acc += v;
        gr.node(self).value = Tensor<T>::scalar(acc);
      },
      [](Graph<T>& gr, int self) {
        const int xi = gr.input_id(self, 0);
        if (!gr.needs_grad(xi)) return;
        const T gy = gr.node(self).grad[0];
        auto& gx = gr.grad_ref(xi);
        for (auto& v : gx.data) v += gy;
      });
}

template <class T>
Var mean(Graph<T>& g, Var x) {
  const double n = static_cast<double>(g.value(x).size());
  return scale(g, sum(g, x), 1.0 / n);
}

template <class T>
Var reshape(Graph<T>& g, Var x, Shape shape) {
  if (numel(shape) != g.value(x).size())
    throw std::invalid_argument("reshape: " + shape_str(g.shape(x)) + " -> " + shape_str(shape));
  return g.record(
      "reshape", {x}, true,
      [shape](Graph<T>& gr, int self) {
        auto& out = gr.node(self).value;
        out.data = gr.in(self, 0).data;
        out.shape = shape;
      },
      [](Graph<T>& gr, int self) {
        const int xi = gr.input_id(self, 0);
        if (!gr.needs_grad(xi)) return;
        auto& gx = gr.grad_ref(xi);
        const auto& gy = gr.node(self).grad;
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
      });
}

/// Rank-2 transpose.
template <class T>
Var transpose(Graph<T>& g, Var x) {
  if (g.value(x).rank() != 2) throw std::invalid_argument("transpose expects rank 2");
  return g.record(
      "transpose", {x}, true,
      [](Graph<T>& gr, int self) {
        const auto& a = gr.in(self, 0);
        const int r = a.dim(0), c = a.dim(1);
        Tensor<T> out(Shape{c, r});
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) out.at(j, i) = a.at(i, j);
        gr.node(self).value = std::move(out);
      },
      [](Graph<T>& gr, int self) {
        const int xi = gr.input_id(self, 0);
        if (!gr.needs_grad(xi)) return;
        auto& gx = gr.grad_ref(xi);
        const auto& gy = gr.node(self).grad;
        const int r = gx.dim(0), c = gx.dim(1);
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) gx.at(i, j) += gy.at(j, i);
      });
}

namespace detail {
inline void split_axis(const Shape& s, int axis, std::size_t& outer, std::size_t& inner) {
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(s[static_cast<std::size_t>(i)]);
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) inner *= static_cast<std::size_t>(s[i]);
}
}  // namespace detail

/// Concatenation along `axis`; all other dimensions must agree.
template <class T>
Var concat(Graph<T>& g, const std::vector<Var>& xs, int axis) {
  if (xs.empty()) throw std::invalid_argument("concat of nothing");
  Shape base = g.shape(xs[0]);
  if (axis < 0 || axis >= static_cast<int>(base.size())) throw std::invalid_argument("concat: bad axis");
  for (Var v : xs) {
    Shape s = g.shape(v);
    if (s.size() != base.size()) throw std::invalid_argument("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      if (static_cast<int>(i) != axis && s[i] != base[i])
        throw std::invalid_argument("concat: shape mismatch " + shape_str(s) + " vs " + shape_str(base));
  }
  return g.record(
      "concat", xs, true,
      [axis](Graph<T>& gr, int self) {
        const auto& ins = gr.node(self).inputs;
        Shape s = gr.node(ins[0]).value.shape;
        int total = 0;
        for (int id : ins) total += gr.node(id).value.shape[static_cast<std::size_t>(axis)];
        s[static_cast<std::size_t>(axis)] = total;
        std::size_t outer, inner;
        detail::split_axis(s, axis, outer, inner);
        Tensor<T> out(s);
        std::size_t offset = 0;
        const std::size_t row = static_cast<std::size_t>(total) * inner;
        for (int id : ins) {
          const auto& a = gr.node(id).value;
          const std::size_t chunk = static_cast<std::size_t>(a.shape[static_cast<std::size_t>(axis)]) * inner;
          for (std::size_t o = 0; o < outer; ++o)
            std::copy(a.data.begin() + static_cast<std::ptrdiff_t>(o * chunk),
                      a.data.begin() + static_cast<std::ptrdiff_t>((o + 1) * chunk),
                      out.data.begin() + static_cast<std::ptrdiff_t>(o * row + offset));
          offset += chunk;
        }
        gr.node(self).value = std::move(out);
      },
      [axis](Graph<T>& gr, int self) {
        const auto ins = gr.node(self).inputs;
        const auto& gy = gr.node(self).grad;
        std::size_t outer, inner;
        detail::split_axis(gy.shape, axis, outer, inner);
        const std::size_t row = static_cast<std::size_t>(gy.shape[static_cast<std::size_t>(axis)]) * inner;
        std::size_t offset = 0;
        for (int id : ins) {
          const std::size_t chunk =
              static_cast<std::size_t>(gr.node(id).value.shape[static_cast<std::size_t>(axis)]) * inner;
          if (gr.needs_grad(id)) {
            auto& ga = gr.grad_ref(id);
            for (std::size_t o = 0; o < outer; ++o)
              for (std::size_t i = 0; i < chunk; ++i) ga[o * chunk + i] += gy[o * row + offset + i];
          }
          offset += chunk;
        }
      });
}

/// Elements [begin, end) along `axis`.
template <class T>
Var slice(Graph<T>& g, Var x, int axis, int begin, int end) {
  const Shape s = g.shape(x);
  if (axis < 0 || axis >= static_cast<int>(s.size()) || begin < 0 || end > s[static_cast<std::size_t>(axis)] ||
      begin >= end)
    throw std::invalid_argument("slice: bad range on " + shape_str(s));
  return g.record(
      "slice", {x}, true,
      [axis, begin, end](Graph<T>& gr, int self) {
        const auto& a = gr.in(self, 0);
        std::size_t outer, inner;
        detail::split_axis(a.shape, axis, outer, inner);
        Shape os = a.shape;
        os[static_cast<std::size_t>(axis)] = end - begin;
        Tensor<T> out(os);
        const std::size_t src_row = static_cast<std::size_t>(a.shape[static_cast<std::size_t>(axis)]) * inner;
        const std::size_t chunk = static_cast<std::size_t>(end - begin) * inner;
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < chunk; ++i) out[o * chunk + i] = a[o * src_row + begin * inner + i];
        gr.node(self).value = std::move(out);
      },
      [axis, begin, end](Graph<T>& gr, int self) {
        const int xi = gr.input_id(self, 0);
        if (!gr.needs_grad(xi)) return;
        auto& gx = gr.grad_ref(xi);
        const auto& gy = gr.node(self).grad;
        std::size_t outer, inner;
        detail::split_axis(gx.shape, axis, outer, inner);
        const std::size_t src_row = static_cast<std::size_t>(gx.shape[static_cast<std::size_t>(axis)]) * inner;
        const std::size_t chunk = static_cast<std::size_t>(end - begin) * inner;
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < chunk; ++i) gx[o * src_row + begin * inner + i] += gy[o * chunk + i];
      });
}

/// Rows of x (axis 0) selected by `index`; rows may repeat. Backward scatter-adds
/// in ascending output-row order.
template <class T>
Var gather_rows(Graph<T>& g, Var x, std::vector<int> index) {
  const Shape s = g.shape(x);
  if (s.empty()) throw std::invalid_argument("gather_rows on scalar");
  for (int i : index)
    if (i < 0 || i >= s[0]) throw std::out_of_range("gather_rows index out of range");
  auto idx = std::make_shared<const std::vector<int>>(std::move(index));
  return g.record(
      "gather_rows", {x}, true,
      [idx](Graph<T>& gr, int self) {
        const auto& a = gr.in(self, 0);
        const std::size_t row = a.size() / static_cast<std::size_t>(a.shape[0]);
        Shape os = a.shape;
        os[0] = static_cast<int>(idx->size());
        Tensor<T> out(os);
        for (std::size_t r = 0; r < idx->size(); ++r)
          std::copy_n(a.data.begin() + static_cast<std::ptrdiff_t>((*idx)[r] * row), row,
                      out.data.begin() + static_cast<std::ptrdiff_t>(r * row));
        gr.node(self).value = std::move(out);
      },
      [idx](Graph<T>& gr, int self) {
        const int xi = gr.input_id(self, 0);
        if (!gr.needs_grad(xi)) return;
        auto& gx = gr.grad_ref(xi);
        const auto& gy = gr.node(self).grad;
        const std::size_t row = gx.size() / static_cast<std::size_t>(gx.shape[0]);
        for (std::size_t r = 0; r < idx->size(); ++r) {
          T* dst = gx.ptr() + static_cast<std::size_t>((*idx)[r]) * row;
          const T* src = gy.ptr() + r * row;
          for (std::size_t j = 0; j < row; ++j) dst[j] += src[j];
        }
      });
}

/// Multiplies x by vector v broadcast along `axis` (v has x.shape[axis] entries).
template <class T>
Var mul_axis(Graph<T>& g, Var x, Var v, int axis) {
  const Shape s = g.shape(x);
  if (axis < 0 || axis >= static_cast<int>(s.size()) ||
      g.value(v).size() != static_cast<std::size_t>(s[static_cast<std::size_t>(axis)]))
    throw std::invalid_argument("mul_axis: vector length does not match axis of " + shape_str(s));
  return g.record(
      "mul_axis", {x, v}, true,
      [axis](Graph<T>& gr, int self) {
        const auto &a = gr.in(self, 0), &b = gr.in(self, 1);
        std::size_t outer, inner;
        detail::split_axis(a.shape, axis, outer, inner);
        const std::size_t n = b.size();
        Tensor<T> out(a.shape);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t k = 0; k < n; ++k)
            for (std::size_t i = 0; i < inner; ++i) {
              const std::size_t idx = (o * n + k) * inner + i;
              out[idx] = a[idx] * b[k];
            }
        gr.node(self).value = std::move(out);
      },
      [axis](Graph<T>& gr, int self) {
        const auto &a = gr.in(self, 0), &b = gr.in(self, 1);
        const auto& gy = gr.node(self).grad;
        const int ai = gr.input_id(self, 0), bi = gr.input_id(self, 1);
        std::size_t outer, inner;
        detail::split_axis(a.shape, axis, outer, inner);
        const std::size_t n = b.size();
        if (gr.needs_grad(ai)) {
          auto& ga = gr.grad_ref(ai);
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t k = 0; k < n; ++k)
              for (std::size_t i = 0; i < inner; ++i) {
                const std::size_t idx = (o * n + k) * inner + i;
                ga[idx] += gy[idx] * b[k];
              }
        }
        if (gr.needs_grad(bi)) {
          auto& gb = gr.grad_ref(bi);
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t k = 0; k < n; ++k) {
              T acc(0);
              for (std::size_t i = 0; i < inner; ++i) {
                const std::size_t idx = (o * n + k) * inner + i;
                acc += gy[idx] * a[idx];
              }
              gb[k] += acc;
            }
        }
      });
}

/// Sums over every axis except the first: [A, ...] -> [A].
template <class T>
Var sum_rows(Graph<T>& g, Var x) {
  return g.record(
      "sum_rows", {x}, true,
      [](Graph<T>& gr, int self) {
        const auto& a = gr.in(self, 0);
        const int rows = a.dim(0);
        const std::size_t inner = a.size() / static_cast<std::size_t>(rows);
        Tensor<T> out(Shape{rows});
        for (int r = 0; r < rows; ++r) {
          T acc(0);
          for (std::size_t i = 0; i < inner; ++i) acc += a[static_cast<std::size_t>(r) * inner + i];
          out[static_cast<std::size_t>(r)] = acc;
        }
        gr.node(self).value = std::move(out);
      },
      [](Graph<T>& gr, int self) {
        const int xi = gr.input_id(self, 0);
        if (!gr.needs_grad(xi)) return;
        auto& gx = gr.grad_ref(xi);
        const auto& gy = gr.node(self).grad;
        const int rows = gx.dim(0);
        const std::size_t inner = gx.size() / static_cast<std::size_t>(rows);
        for (int r = 0; r < rows; ++r)
          for (std::size_t i = 0; i < inner; ++i) gx[static_cast<std::size_t>(r) * inner + i] += gy[static_cast<std::size_t>(r)];
      });
}

/// Broadcasts a vector [P] (or [1, P]) to a channel-first field [P, spatial...].
template <class T>
Var broadcast_spatial(Graph<T>& g, Var v, Shape spatial) {
  const std::size_t reps = numel(spatial);
  return g.record(
      "broadcast_spatial", {v}, true,
      [spatial, reps](Graph<T>& gr, int self) {
        const auto& a = gr.in(self, 0);
        Shape os{static_cast<int>(a.size())};
        os.insert(os.end(), spatial.begin(), spatial.end());
        Tensor<T> out(os);
        for (std::size_t c = 0; c < a.size(); ++c) std::fill_n(out.ptr() + c * reps, reps, a[c]);
        gr.node(self).value = std::move(out);
      },
      [reps](Graph<T>& gr, int self) {
        const int xi = gr.input_id(self, 0);
        if (!gr.needs_grad(xi)) return;
        auto& gx = gr.grad_ref(xi);
        const auto& gy = gr.node(self).grad;
        for (std::size_t c = 0; c < gx.size(); ++c) {
          T acc(0);
          for (std::size_t i = 0; i < reps; ++i) acc += gy[c * reps + i];
          gx[c] += acc;
        }
      });
}

// ---------------------------------------------------------------------------
// Affine map and convolution

/// y = x w^T + b for x [N, in], w [out, in], optional b [out].
template <class T>
Var affine(Graph<T>& g, Var x, Var w, Var b = Var{}) {
  const Shape xs = g.shape(x), ws = g.shape(w);
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1])
    throw std::invalid_argument("affine: incompatible shapes " + shape_str(xs) + " and " + shape_str(ws));
  if (b.valid() && g.value(b).size() != static_cast<std::size_t>(ws[0]))
    throw std::invalid_argument("affine: bias length mismatch");
  std::vector<Var> ins{x, w};
  if (b.valid()) ins.push_back(b);
  return g.record(
      "affine", ins, true,
      [](Graph<T>& gr, int self) {
        const auto &a = gr.in(self, 0), &wt = gr.in(self, 1);
        const T* bias = gr.node(self).inputs.size() > 2 ? gr.in(self, 2).ptr() : nullptr;
        const int n = a.dim(0), in = a.dim(1), out = wt.dim(0);
        auto& y = gr.node(self).value;
        y = Tensor<T>(Shape{n, out});
        kernels::affine_forward(a.ptr(), wt.ptr(), bias, y.ptr(), n, in, out);
      },
      [](Graph<T>& gr, int self) {
        const auto &a = gr.in(self, 0), &wt = gr.in(self, 1);
        const auto& gy = gr.node(self).grad;
        const int n = a.dim(0), in = a.dim(1), out = wt.dim(0);
        const int xi = gr.input_id(self, 0), wi = gr.input_id(self, 1);
        const bool has_b = gr.node(self).inputs.size() > 2;
        const int bi = has_b ? gr.input_id(self, 2) : -1;
        if (gr.needs_grad(xi)) kernels::affine_backward_input(gy.ptr(), wt.ptr(), gr.grad_ref(xi).ptr(), n, in, out);
        T* dw = gr.needs_grad(wi) ? gr.grad_ref(wi).ptr() : nullptr;
        T* db = (has_b && gr.needs_grad(bi)) ? gr.grad_ref(bi).ptr() : nullptr;
        if (dw || db) kernels::affine_backward_params(gy.ptr(), a.ptr(), dw, db, n, in, out);
      });
}

struct ConvSpec {
  std::array<int, 3> stride{1, 1, 1};
  std::array<int, 3> pad{0, 0, 0};
};

/// 3D convolution: x [Ci, D, H, W], w [Co, Ci, kd, kh, kw], optional b [Co].
/// 2D convolutions use D = kd = 1.
template <class T>
Var conv(Graph<T>& g, Var x, Var w, Var b, ConvSpec spec) {
  const Shape xs = g.shape(x), ws = g.shape(w);
  if (xs.size() != 4 || ws.size() != 5 || xs[0] != ws[1])
    throw std::invalid_argument("conv: incompatible shapes " + shape_str(xs) + " and " + shape_str(ws));
  if (b.valid() && g.value(b).size() != static_cast<std::size_t>(ws[0]))
    throw std::invalid_argument("conv: bias length mismatch");
  auto geom = [spec](const Shape& in, const Shape& k) {
    kernels::ConvGeometry c;
    c.ci = in[0];
    c.d = in[1];
    c.h = in[2];
    c.w = in[3];
    c.co = k[0];
    c.kd = k[2];
    c.kh = k[3];
    c.kw = k[4];
    c.sd = spec.stride[0];
    c.sh = spec.stride[1];
    c.sw = spec.stride[2];
    c.pd = spec.pad[0];
    c.ph = spec.pad[1];
    c.pw = spec.pad[2];
    return c;
  };
  const auto g0 = geom(xs, ws);
  if (g0.od() <= 0 || g0.oh() <= 0 || g0.ow() <= 0) throw std::invalid_argument("conv: empty output");
  std::vector<Var> ins{x, w};
  if (b.valid()) ins.push_back(b);
  return g.record(
      "conv", ins, true,
      [geom](Graph<T>& gr, int self) {
        const auto &a = gr.in(self, 0), &k = gr.in(self, 1);
        const auto c = geom(a.shape, k.shape);
        const T* bias = gr.node(self).inputs.size() > 2 ? gr.in(self, 2).ptr() : nullptr;
        auto& y = gr.node(self).value;
        y = Tensor<T>(Shape{c.co, c.od(), c.oh(), c.ow()});
        kernels::conv_forward(c, a.ptr(), k.ptr(), bias, y.ptr());
      },
      [geom](Graph<T>& gr, int self) {
        const auto &a = gr.in(self, 0), &k = gr.in(self, 1);
        const auto c = geom(a.shape, k.shape);
        const int xi = gr.input_id(self, 0), wi = gr.input_id(self, 1);
        const bool has_b = gr.node(self).inputs.size() > 2;
        T* dx = gr.needs_grad(xi) ? gr.grad_ref(xi).ptr() : nullptr;
        T* dw = gr.needs_grad(wi) ? gr.grad_ref(wi).ptr() : nullptr;
        T* db = (has_b && gr.needs_grad(gr.input_id(self, 2))) ? gr.grad_ref(gr.input_id(self, 2)).ptr() : nullptr;
        kernels::conv_backward(c, a.ptr(), k.ptr(), gr.node(self).grad.ptr(), dx, dw, db);
      });
}

/// Nearest-neighbour upsampling of [C, D, H, W] by integer factors.
template <class T>
Var upsample_nearest(Graph<T>& g, Var x, std::array<int, 3> f) {
  if (g.value(x).rank() != 4) throw std::invalid_argument("upsample_nearest expects [C,D,H,W]");
  return g.record(
      "upsample_nearest", {x}, true,
      [f](Graph<T>& gr, int self) {
        const auto& a = gr.in(self, 0);
        const int C = a.dim(0), D = a.dim(1), H = a.dim(2), W = a.dim(3);
        Tensor<T> out(Shape{C, D * f[0], H * f[1], W * f[2]});
        std::size_t o = 0;
        for (int c = 0; c < C; ++c)
          for (int z = 0; z < D * f[0]; ++z)
            for (int y = 0; y < H * f[1]; ++y)
              for (int xx = 0; xx < W * f[2]; ++xx, ++o)
                out[o] = a[((static_cast<std::size_t>(c) * D + z / f[0]) * H + y / f[1]) * W + xx / f[2]];
        gr.node(self).value = std::move(out);
      },
      [f](Graph<T>& gr, int self) {
        const int xi = gr.input_id(self, 0);
        if (!gr.needs_grad(xi)) return;
        auto& gx = gr.grad_ref(xi);
        const auto& gy = gr.node(self).grad;
        const int C = gx.dim(0), D = gx.dim(1), H = gx.dim(2), W = gx.dim(3);
        std::size_t o = 0;
        for (int c = 0; c < C; ++c)
          for (int z = 0; z < D * f[0]; ++z)
            for (int y = 0; y < H * f[1]; ++y)
              for (int xx = 0; xx < W * f[2]; ++xx, ++o)
                gx[((static_cast<std::size_t>(c) * D + z / f[0]) * H + y / f[1]) * W + xx / f[2]] += gy[o];
      });
}

/// Per-channel normalization over all spatial positions (no affine part).
template <class T>
Var instance_norm(Graph<T>& g, Var x, double eps = 1e-5) {
  return g.record(
      "instance_norm", {x}, true,
      [eps](Graph<T>& gr, int self) {
        using std::sqrt;
        const auto& a = gr.in(self, 0);
        const int C = a.dim(0);
        const std::size_t S = a.size() / static_cast<std::size_t>(C);
        Tensor<T> out(a.shape);
        for (int c = 0; c < C; ++c) {
          const T* p = a.ptr() + static_cast<std::size_t>(c) * S;
          T m(0);
          for (std::size_t i = 0; i < S; ++i) m += p[i];
          m = m / T(static_cast<double>(S));
          T v(0);
          for (std::size_t i = 0; i < S; ++i) v += (p[i] - m) * (p[i] - m);
          v = v / T(static_cast<double>(S));
          const T inv = T(1) / sqrt(v + T(eps));
          for (std::size_t i = 0; i < S; ++i) out[static_cast<std::size_t>(c) * S + i] = (p[i] - m) * inv;
        }
        gr.node(self).value = std::move(out);
      },
      [eps](Graph<T>& gr, int self) {
        using std::sqrt;
        const int xi = gr.input_id(self, 0);
        if (!gr.needs_grad(xi)) return;
        const auto& a = gr.in(self, 0);
        const auto& y = gr.node(self).value;
        const auto& gy = gr.node(self).grad;
        auto& gx = gr.grad_ref(xi);
        const int C = a.dim(0);
        const std::size_t S = a.size() / static_cast<std::size_t>(C);
        const T n(static_cast<double>(S));
        for (int c = 0; c < C; ++c) {
          const std::size_t o = static_cast<std::size_t>(c) * S;
          T m(0);
          for (std::size_t i = 0; i < S; ++i) m += a[o + i];
          m = m / n;
          T v(0);
          for (std::size_t i = 0; i < S; ++i) v += (a[o + i] - m) * (a[o + i] - m);
          v = v / n;
          const T inv = T(1) / sqrt(v + T(eps));
          T sg(0), sgy(0);
          for (std::size_t i = 0; i < S; ++i) {
            sg += gy[o + i];
            sgy += gy[o + i] * y[o + i];
          }
          for (std::size_t i = 0; i < S; ++i) gx[o + i] += inv * (gy[o + i] - sg / n - y[o + i] * sgy / n);
        }
      });
}

/// Weighted gather from a channel-first field: out[n, c] = sum_j w[n, j] * src[c, idx[n, j]].
/// Used for trilinear interpolation with precomputed corner indices/weights.
template <class T>
Var weighted_gather(Graph<T>& g, Var field, std::vector<int> index, std::vector<double> weight, int taps) {
  if (index.size() != weight.size() || taps <= 0 || index.size() % static_cast<std::size_t>(taps) != 0)
    throw std::invalid_argument("weighted_gather: inconsistent taps");
  const auto& fv = g.value(field);
  const std::size_t S = fv.size() / static_cast<std::size_t>(fv.dim(0));
  for (int i : index)
    if (i < 0 || static_cast<std::size_t>(i) >= S) throw std::out_of_range("weighted_gather index out of range");
  auto idx = std::make_shared<const std::vector<int>>(std::move(index));
  auto wts = std::make_shared<const std::vector<double>>(std::move(weight));
  return g.record(
      "trilinear_gather", {field}, true,
      [idx, wts, taps](Graph<T>& gr, int self) {
        const auto& f = gr.in(self, 0);
        const int C = f.dim(0);
        const std::size_t S = f.size() / static_cast<std::size_t>(C);
        const int N = static_cast<int>(idx->size() / static_cast<std::size_t>(taps));
        Tensor<T> out(Shape{N, C});
#pragma omp parallel for schedule(static)
        for (int n = 0; n < N; ++n)
          for (int c = 0; c < C; ++c) {
            T acc(0);
            for (int j = 0; j < taps; ++j) {
              const std::size_t t = static_cast<std::size_t>(n) * taps + j;
              acc += T((*wts)[t]) * f[static_cast<std::size_t>(c) * S + (*idx)[t]];
            }
            out.at(n, c) = acc;
          }
        gr.node(self).value = std::move(out);
      },
      [idx, wts, taps](Graph<T>& gr, int self) {
        const int fi = gr.input_id(self, 0);
        if (!gr.needs_grad(fi)) return;
        auto& gf = gr.grad_ref(fi);
        const auto& gy = gr.node(self).grad;
        const int C = gf.dim(0);
        const std::size_t S = gf.size() / static_cast<std::size_t>(C);
        const int N = gy.dim(0);
        for (int n = 0; n < N; ++n)
          for (int j = 0; j < taps; ++j) {
            const std::size_t t = static_cast<std::size_t>(n) * taps + j;
            const T w((*wts)[t]);
            for (int c = 0; c < C; ++c) gf[static_cast<std::size_t>(c) * S + (*idx)[t]] += w * gy.at(n, c);
          }
      });
}

/// Window [y0, y0+h) x [x0, x0+w) of a [C, H, W] image.
template <class T>
Var crop2d(Graph<T>& g, Var x, int y0, int x0, int h, int w) {
  const Shape s = g.shape(x);
  if (s.size() != 3 || y0 < 0 || x0 < 0 || h <= 0 || w <= 0 || y0 + h > s[1] || x0 + w > s[2])
    throw std::invalid_argument("crop2d: window outside image " + shape_str(s));
  return g.record(
      "crop2d", {x}, true,
      [y0, x0, h, w](Graph<T>& gr, int self) {
        const auto& a = gr.in(self, 0);
        const int C = a.dim(0), H = a.dim(1), W = a.dim(2);
        Tensor<T> out(Shape{C, h, w});
        for (int c = 0; c < C; ++c)
          for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx)
              out[(static_cast<std::size_t>(c) * h + y) * w + xx] =
                  a[(static_cast<std::size_t>(c) * H + y0 + y) * W + x0 + xx];
        gr.node(self).value = std::move(out);
      },
      [y0, x0, h, w](Graph<T>& gr, int self) {
        const int xi = gr.input_id(self, 0);
        if (!gr.needs_grad(xi)) return;
        auto& gx = gr.grad_ref(xi);
        const auto& gy = gr.node(self).grad;
        const int C = gx.dim(0), H = gx.dim(1), W = gx.dim(2);
        for (int c = 0; c < C; ++c)
          for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx)
              gx[(static_cast<std::size_t>(c) * H + y0 + y) * W + x0 + xx] +=
                  gy[(static_cast<std::size_t>(c) * h + y) * w + xx];
      });
}

namespace detail {
/// Source taps of a half-pixel-centred bilinear resize along one axis.
inline void bilinear_taps(int in, int out, std::vector<int>& i0, std::vector<int>& i1, std::vector<double>& f) {
  i0.resize(static_cast<std::size_t>(out));
  i1.resize(static_cast<std::size_t>(out));
  f.resize(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double s = (o + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    const int a = std::min(static_cast<int>(std::floor(s)), in - 1);
    const int b = std::min(a + 1, in - 1);
    i0[static_cast<std::size_t>(o)] = a;
    i1[static_cast<std::size_t>(o)] = b;
    f[static_cast<std::size_t>(o)] = s - a;
  }
}
}  // namespace detail

/// Bilinear resize of a [C, H, W] image to [C, out_h, out_w].
template <class T>
Var resize_bilinear(Graph<T>& g, Var x, int out_h, int out_w) {
  const Shape s = g.shape(x);
  if (s.size() != 3 || out_h <= 0 || out_w <= 0) throw std::invalid_argument("resize_bilinear expects [C,H,W]");
  auto ty0 = std::make_shared<std::vector<int>>(), ty1 = std::make_shared<std::vector<int>>();
  auto tx0 = std::make_shared<std::vector<int>>(), tx1 = std::make_shared<std::vector<int>>();
  auto fy = std::make_shared<std::vector<double>>(), fx = std::make_shared<std::vector<double>>();
  detail::bilinear_taps(s[1], out_h, *ty0, *ty1, *fy);
  detail::bilinear_taps(s[2], out_w, *tx0, *tx1, *fx);
  return g.record(
      "resize_bilinear", {x}, true,
      [=](Graph<T>& gr, int self) {
        const auto& a = gr.in(self, 0);
        const int C = a.dim(0), H = a.dim(1), W = a.dim(2);
        Tensor<T> out(Shape{C, out_h, out_w});
        for (int c = 0; c < C; ++c)
          for (int y = 0; y < out_h; ++y)
            for (int xx = 0; xx < out_w; ++xx) {
              const auto at = [&](int yy, int xq) { return a[(static_cast<std::size_t>(c) * H + yy) * W + xq]; };
              const T wy((*fy)[y]), wx((*fx)[xx]);
              const T top = at((*ty0)[y], (*tx0)[xx]) * (T(1) - wx) + at((*ty0)[y], (*tx1)[xx]) * wx;
              const T bot = at((*ty1)[y], (*tx0)[xx]) * (T(1) - wx) + at((*ty1)[y], (*tx1)[xx]) * wx;
              out[(static_cast<std::size_t>(c) * out_h + y) * out_w + xx] = top * (T(1) - wy) + bot * wy;
            }
        gr.node(self).value = std::move(out);
      },
      [=](Graph<T>& gr, int self) {
        const int xi = gr.input_id(self, 0);
        if (!gr.needs_grad(xi)) return;
        auto& gx = gr.grad_ref(xi);
        const auto& gy = gr.node(self).grad;
        const int C = gx.dim(0), H = gx.dim(1), W = gx.dim(2);
        for (int c = 0; c < C; ++c)
          for (int y = 0; y < out_h; ++y)
            for (int xx = 0; xx < out_w; ++xx) {
              const T gv = gy[(static_cast<std::size_t>(c) * out_h + y) * out_w + xx];
              const T wy((*fy)[y]), wx((*fx)[xx]);
              auto add = [&](int yy, int xq, T v) { gx[(static_cast<std::size_t>(c) * H + yy) * W + xq] += v; };
              add((*ty0)[y], (*tx0)[xx], gv * (T(1) - wy) * (T(1) - wx));
              add((*ty0)[y], (*tx1)[xx], gv * (T(1) - wy) * wx);
              add((*ty1)[y], (*tx0)[xx], gv * wy * (T(1) - wx));
              add((*ty1)[y], (*tx1)[xx], gv * wy * wx);
            }
      });
}

/// Value copy that blocks gradient flow.
template <class T>
Var detach(Graph<T>& g, Var x) {
  return g.constant(g.value(x));
}

}  // namespace nff::ad

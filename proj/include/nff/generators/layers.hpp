// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "nff/autodiff/ops.hpp"
#include "nff/autodiff/params.hpp"

namespace nff {

using ad::Graph;
using ad::ParamBinder;
using ad::ParamStore;
using ad::Shape;
using ad::Tensor;
using ad::Var;

/// He-uniform weights for layers followed by ReLU; gain 3 (unit variance
/// preserving without the ReLU factor) for output layers.
inline constexpr double kReluGain = 6.0;
inline constexpr double kLinearGain = 3.0;

inline void init_dense(ParamStore& s, const std::string& name, int in, int out, double gain, std::mt19937_64& rng) {
  s.init_uniform(name + ".w", {out, in}, in, gain, rng);
  s.init_constant(name + ".b", {out}, 0.0);
}

inline void init_conv(ParamStore& s, const std::string& name, int ci, int co, std::array<int, 3> k, double gain,
                      std::mt19937_64& rng, bool bias = true) {
  s.init_uniform(name + ".w", {co, ci, k[0], k[1], k[2]}, ci * k[0] * k[1] * k[2], gain, rng);
  if (bias) s.init_constant(name + ".b", {co}, 0.0);
}

template <class T>
Var dense(Graph<T>& g, ParamBinder<T>& P, const std::string& name, Var x) {
  return ad::affine(g, x, P(name + ".w"), P(name + ".b"));
}

template <class T>
Var conv_layer(Graph<T>& g, ParamBinder<T>& P, const std::string& name, Var x, int stride = 1) {
  const auto& ws = g.shape(P(name + ".w"));
  const int kd = ws[2], kh = ws[3], kw = ws[4];
  ad::ConvSpec spec{{stride, stride, stride}, {kd / 2, kh / 2, kw / 2}};
  if (kd == 1) spec.stride[0] = 1;
  return ad::conv(g, x, P(name + ".w"), P(name + ".b"), spec);
}

/// Widths of an MLP with `depth` hidden layers; the layer at index `skip`
/// additionally reads the network input.
inline void init_mlp(ParamStore& s, const std::string& name, int in, int hidden, int depth, int out, int skip,
                     std::mt19937_64& rng) {
  int width = in;
  for (int l = 0; l < depth; ++l) {
    const int fan = (l == skip && l > 0) ? width + in : width;
    init_dense(s, name + ".l" + std::to_string(l), fan, hidden, kReluGain, rng);
    width = hidden;
  }
  init_dense(s, name + ".out", width, out, kLinearGain, rng);
}

template <class T>
Var mlp(Graph<T>& g, ParamBinder<T>& P, const std::string& name, Var x, int depth, int skip) {
  Var h = x;
  for (int l = 0; l < depth; ++l) {
    if (l == skip && l > 0) h = ad::concat(g, {h, x}, 1);
    h = ad::relu(g, dense(g, P, name + ".l" + std::to_string(l), h));
  }
  return dense(g, P, name + ".out", h);
}

/// gamma(p): for each band l and each element p_j, (sin(2^l pi p_j), cos(2^l pi p_j)).
/// Output layout is band-major, element-minor.
inline void positional_encoding(const double* p, int dim, int bands, double* out) {
  for (int l = 0; l < bands; ++l) {
    const double f = std::ldexp(M_PI, l);
    for (int j = 0; j < dim; ++j) {
      out[2 * (l * dim + j)] = std::sin(f * p[j]);
      out[2 * (l * dim + j) + 1] = std::cos(f * p[j]);
    }
  }
}

inline std::vector<double> positional_encoding(const std::vector<double>& p, int bands) {
  std::vector<double> out(2 * static_cast<std::size_t>(bands) * p.size());
  positional_encoding(p.data(), static_cast<int>(p.size()), bands, out.data());
  return out;
}

/// Encodes N points of dimension 3 (row-major) into an [N, 6 * bands] tensor.
template <class T>
Tensor<T> encode_points(const std::vector<double>& pts, int bands) {
  const int n = static_cast<int>(pts.size() / 3);
  const int w = 6 * bands;
  Tensor<T> out(Shape{n, w});
  std::vector<double> row(static_cast<std::size_t>(w));
  for (int i = 0; i < n; ++i) {
    positional_encoding(pts.data() + 3 * i, 3, bands, row.data());
    for (int c = 0; c < w; ++c) out.at(i, c) = T(row[static_cast<std::size_t>(c)]);
  }
  return out;
}

/// The [1, D] row `v` repeated n times.
template <class T>
Var repeat_row(Graph<T>& g, Var v, int n) {
  return ad::gather_rows(g, ad::reshape(g, v, Shape{1, static_cast<int>(g.value(v).size())}), std::vector<int>(static_cast<std::size_t>(n), 0));
}

}  // namespace nff

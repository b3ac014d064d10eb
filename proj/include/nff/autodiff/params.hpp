// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "nff/autodiff/dual.hpp"
#include "nff/autodiff/graph.hpp"

namespace nff::ad {

using TensorMap = std::map<std::string, Tensor<double>>;

/// Named parameter tensors. Iteration order is the lexicographic name order,
/// which is what makes checkpoints and optimizer sweeps reproducible.
class ParamStore {
 public:
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  const Tensor<double>& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return it->second;
  }
  Tensor<double>& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return it->second;
  }

  void set(const std::string& name, Tensor<double> value) { params_[name] = std::move(value); }

  /// Weight tensor drawn from U(-bound, bound), bound = sqrt(gain / fan_in).
  void init_uniform(const std::string& name, Shape shape, int fan_in, double gain, std::mt19937_64& rng) {
    const double bound = std::sqrt(gain / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor<double> t(std::move(shape));
    for (auto& v : t.data) v = u(rng);
    params_[name] = std::move(t);
  }

  void init_constant(const std::string& name, Shape shape, double value) {
    params_[name] = Tensor<double>(std::move(shape), value);
  }

  const TensorMap& all() const { return params_; }
  TensorMap& all() { return params_; }
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [k, v] : params_) n += v.size();
    return n;
  }

 private:
  TensorMap params_;
};

/// Lifts store parameters into a graph as leaves, once per name, and reads
/// their gradients back after backward().
template <class T>
class ParamBinder {
 public:
  ParamBinder(Graph<T>& g, const ParamStore& store, bool requires_grad = true)
      : g_(g), store_(store), requires_grad_(requires_grad) {}

  Var operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    const auto& p = store_.get(name);
    Var v = g_.leaf(map_tensor<T>(p, [](double x) { return T(x); }), requires_grad_, name);
    bound_.emplace(name, v);
    return v;
  }

  /// Uses `v` for `name` instead of a fresh leaf.
  void bind(const std::string& name, Var v) { bound_[name] = v; }

  Graph<T>& graph() { return g_; }
  const std::map<std::string, Var>& bound() const { return bound_; }

  /// Primal parts of the parameter gradients.
  TensorMap grads() const {
    TensorMap out;
    for (const auto& [name, v] : bound_) out[name] = map_tensor<double>(g_.grad(v), [](const T& x) { return primal(x); });
    return out;
  }

 private:
  Graph<T>& g_;
  const ParamStore& store_;
  bool requires_grad_;
  std::map<std::string, Var> bound_;
};

inline bool all_finite(const TensorMap& m) {
  for (const auto& [k, t] : m)
    for (double v : t.data)
      if (!std::isfinite(v)) return false;
  return true;
}

/// a += s * b over the names of b.
inline void accumulate(TensorMap& a, const TensorMap& b, double s = 1.0) {
  for (const auto& [name, t] : b) {
    auto it = a.find(name);
    if (it == a.end()) {
      Tensor<double> c = t;
      for (auto& v : c.data) v *= s;
      a.emplace(name, std::move(c));
    } else {
      if (it->second.shape != t.shape) throw std::invalid_argument("gradient shape mismatch for '" + name + "'");
      for (std::size_t i = 0; i < t.size(); ++i) it->second[i] += s * t[i];
    }
  }
}

/// Sums per-batch gradient maps in a fixed pairwise tree order, so the result
/// depends only on the list order and never on how batches were scheduled.
inline TensorMap tree_reduce(std::vector<TensorMap> parts) {
  if (parts.empty()) return {};
  while (parts.size() > 1) {
    std::vector<TensorMap> next;
    next.reserve((parts.size() + 1) / 2);
    for (std::size_t i = 0; i + 1 < parts.size(); i += 2) {
      accumulate(parts[i], parts[i + 1]);
      next.push_back(std::move(parts[i]));
    }
    if (parts.size() % 2) next.push_back(std::move(parts.back()));
    parts = std::move(next);
  }
  return std::move(parts.front());
}

}  // namespace nff::ad

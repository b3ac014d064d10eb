// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "nff/autodiff/params.hpp"

namespace nff::ad {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Parameters without an entry in the gradient map
/// are treated as having a zero gradient.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(ParamStore& store, const TensorMap& grads) {
    for (const auto& [name, g] : grads) {
      if (!store.contains(name)) throw std::invalid_argument("gradient for unknown parameter '" + name + "'");
      if (g.shape != store.get(name).shape) throw std::invalid_argument("gradient shape mismatch for '" + name + "'");
      for (double v : g.data)
        if (!std::isfinite(v)) throw std::domain_error("non-finite gradient for '" + name + "'");
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& [name, p] : store.all()) {
      auto& m = m_[name];
      auto& v = v_[name];
      if (m.shape != p.shape) {
        m = Tensor<double>(p.shape);
        v = Tensor<double>(p.shape);
      }
      auto git = grads.find(name);
      const Tensor<double>* g = git == grads.end() ? nullptr : &git->second;
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = g ? (*g)[i] : 0.0;
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
        const double mh = m[i] / c1;
        const double vh = v[i] / c2;
        p[i] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
      }
    }
  }

  std::uint64_t steps() const { return t_; }
  AdamConfig& config() { return cfg_; }
  const TensorMap& first_moments() const { return m_; }
  const TensorMap& second_moments() const { return v_; }

  /// Restores state previously exported through first/second_moments().
  void restore(std::uint64_t t, TensorMap m, TensorMap v) {
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  TensorMap m_, v_;
};

/// Exponential moving average of parameters.
class Ema {
 public:
  Ema() = default;
  explicit Ema(const ParamStore& store) : shadow_(store.all()) {}

  void update(const ParamStore& store, double decay) {
    for (const auto& [name, p] : store.all()) {
      auto it = shadow_.find(name);
      if (it == shadow_.end()) {
        shadow_.emplace(name, p);
        continue;
      }
      auto& s = it->second;
      for (std::size_t i = 0; i < p.size(); ++i) s[i] = decay * s[i] + (1.0 - decay) * p[i];
    }
  }

  const TensorMap& shadow() const { return shadow_; }
  TensorMap& shadow() { return shadow_; }

  ParamStore as_store() const {
    ParamStore s;
    for (const auto& [k, v] : shadow_) s.set(k, v);
    return s;
  }

 private:
  TensorMap shadow_;
};

}  // namespace nff::ad

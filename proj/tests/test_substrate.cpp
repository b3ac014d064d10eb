// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "nff/autodiff/checkpoint.hpp"
#include "nff/autodiff/gradcheck.hpp"
#include "nff/autodiff/ops.hpp"
#include "nff/autodiff/optim.hpp"
#include "nff/autodiff/second_order.hpp"

using namespace nff::ad;

namespace {

Tensor<double> randn(Shape s, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(std::move(s));
  for (auto& v : t.data) v = u(rng);
  return t;
}

// Values bounded away from zero so kinks are never within eps.
Tensor<double> away_from_zero(Shape s, std::uint64_t seed) {
  auto t = randn(std::move(s), seed, 0.1, 1.0);
  for (std::size_t i = 0; i < t.size(); i += 2) t[i] = -t[i];
  return t;
}

void expect_check(const GradCheckResult& r) { EXPECT_TRUE(r.passed) << r.name << " rel err " << r.max_rel_error; }

}  // namespace

TEST(Forward, AffineZeroWeightsGivesBias) {
  Graph<double> g;
  Var x = g.leaf(randn({3, 4}, 1), false);
  Var w = g.leaf(Tensor<double>({2, 4}, 0.0), false);
  Var b = g.leaf(Tensor<double>({2}, std::vector<double>{0.5, -1.5}), false);
  const auto& y = g.value(affine(g, x, w, b));
  for (int n = 0; n < 3; ++n) {
    EXPECT_EQ(y.at(n, 0), 0.5);
    EXPECT_EQ(y.at(n, 1), -1.5);
  }
}

TEST(Forward, Relu) {
  Graph<double> g;
  Var x = g.leaf(Tensor<double>({3}, std::vector<double>{-1, 0, 2}), true);
  const auto& y = g.value(relu(g, x));
  EXPECT_EQ(y.data, (std::vector<double>{0, 0, 2}));
}

TEST(Forward, CompositionMatchesStagedEvaluation) {
  const auto x0 = randn({2, 3}, 2);
  const auto w = randn({3, 3}, 3);
  Graph<double> g;
  Var x = g.leaf(x0, false);
  Var wv = g.leaf(w, false);
  Var fused = sigmoid(g, affine(g, x, wv));
  Graph<double> g1;
  Var inner = affine(g1, g1.leaf(x0, false), g1.leaf(w, false));
  Graph<double> g2;
  Var outer = sigmoid(g2, g2.leaf(g1.value(inner), false));
  EXPECT_EQ(g.value(fused).data, g2.value(outer).data);
}

TEST(Forward, ReplayIsBitIdentical) {
  Graph<double> g;
  Var x = g.leaf(randn({4, 5}, 4), true);
  Var w = g.leaf(randn({3, 5}, 5), true);
  Var y = softplus(g, affine(g, x, w));
  const auto first = g.value(y).data;
  g.forward();
  EXPECT_EQ(g.value(y).data, first);
}

TEST(Backward, SumGivesOnes) {
  Graph<double> g;
  Var x = g.leaf(randn({2, 3}, 6), true);
  Var s = sum(g, x);
  g.backward(s);
  for (double v : g.grad(x).data) EXPECT_EQ(v, 1.0);
}

TEST(Backward, ConstantOutputGivesZeros) {
  Graph<double> g;
  Var x = g.leaf(randn({3}, 7), true);
  Var c = g.constant(Tensor<double>({3}, 2.0));
  Var y = sum(g, mul(g, c, c));
  (void)x;
  g.backward(y);
  for (double v : g.grad(x).data) EXPECT_EQ(v, 0.0);
}

TEST(Backward, BeforeForwardOnModifiedGraphThrows) {
  Graph<double> g;
  Var x = g.leaf(randn({3}, 8), true);
  Var y = sum(g, sigmoid(g, x));
  g.set_value(x, randn({3}, 9));
  EXPECT_THROW(g.backward(y), std::logic_error);
  g.forward();
  EXPECT_NO_THROW(g.backward(y));
}

TEST(Backward, ShapeMismatchInSetValueThrows) {
  Graph<double> g;
  Var x = g.leaf(randn({3}, 8), true);
  EXPECT_THROW(g.set_value(x, randn({4}, 9)), std::invalid_argument);
}

TEST(Backward, LinearInCotangent) {
  Graph<double> g;
  Var x = g.leaf(randn({3, 4}, 10), true);
  Var w = g.leaf(randn({5, 4}, 11), true);
  Var y = softplus(g, affine(g, x, w));
  const auto u = randn({3, 5}, 12), v = randn({3, 5}, 13);
  const double a = 0.7, b = -1.3;
  Tensor<double> mix(u.shape);
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * u[i] + b * v[i];
  g.backward(y, u);
  const auto gu_x = g.grad(x), gu_w = g.grad(w);
  g.backward(y, v);
  const auto gv_x = g.grad(x), gv_w = g.grad(w);
  g.backward(y, mix);
  const auto gm_x = g.grad(x), gm_w = g.grad(w);
  for (std::size_t i = 0; i < gm_x.size(); ++i) EXPECT_NEAR(gm_x[i], a * gu_x[i] + b * gv_x[i], 1e-10);
  for (std::size_t i = 0; i < gm_w.size(); ++i) EXPECT_NEAR(gm_w[i], a * gu_w[i] + b * gv_w[i], 1e-10);
}

// ---------------------------------------------------------------------------
// Finite-difference checks of every primitive.

TEST(GradCheck, Elementwise) {
  const auto a = randn({2, 3}, 20), b = randn({2, 3}, 21);
  expect_check(check_gradients("add", {a, b}, [](auto& g, auto& v) { return add(g, v[0], v[1]); }));
  expect_check(check_gradients("sub", {a, b}, [](auto& g, auto& v) { return sub(g, v[0], v[1]); }));
  expect_check(check_gradients("mul", {a, b}, [](auto& g, auto& v) { return mul(g, v[0], v[1]); }));
  expect_check(check_gradients("scale", {a}, [](auto& g, auto& v) { return scale(g, v[0], -2.5); }));
  expect_check(check_gradients("add_scalar", {a}, [](auto& g, auto& v) { return add_scalar(g, v[0], 3.0); }));
  expect_check(check_gradients("sin", {a}, [](auto& g, auto& v) { return sin(g, v[0]); }));
}

TEST(GradCheck, Nonlinearities) {
  const auto a = away_from_zero({3, 4}, 22);
  expect_check(check_gradients("relu", {a}, [](auto& g, auto& v) { return relu(g, v[0]); }));
  expect_check(check_gradients("leaky_relu", {a}, [](auto& g, auto& v) { return leaky_relu(g, v[0], 0.2); }));
  expect_check(check_gradients("softplus", {a}, [](auto& g, auto& v) { return softplus(g, v[0]); }));
  expect_check(check_gradients("sigmoid", {a}, [](auto& g, auto& v) { return sigmoid(g, v[0]); }));
  const auto pos = randn({3, 4}, 23, 0.5, 2.0);
  expect_check(check_gradients("pow", {pos}, [](auto& g, auto& v) { return pow_scalar(g, v[0], -0.5); }));
}

TEST(GradCheck, ReductionsAndShapes) {
  const auto a = randn({2, 3, 4}, 24);
  expect_check(check_gradients("sum", {a}, [](auto& g, auto& v) { return sum(g, v[0]); }));
  expect_check(check_gradients("mean", {a}, [](auto& g, auto& v) { return mean(g, v[0]); }));
  expect_check(check_gradients("reshape", {a}, [](auto& g, auto& v) { return reshape(g, v[0], Shape{6, 4}); }));
  expect_check(check_gradients("sum_rows", {a}, [](auto& g, auto& v) { return sum_rows(g, v[0]); }));
  expect_check(check_gradients("slice", {a}, [](auto& g, auto& v) { return slice(g, v[0], 1, 1, 3); }));
  const auto m = randn({3, 5}, 25);
  expect_check(check_gradients("transpose", {m}, [](auto& g, auto& v) { return transpose(g, v[0]); }));
  const auto b = randn({2, 2, 4}, 26);
  expect_check(check_gradients("concat", {a, b}, [](auto& g, auto& v) { return concat(g, {v[0], v[1]}, 1); }));
  expect_check(check_gradients("gather_rows", {m}, [](auto& g, auto& v) {
    return gather_rows(g, v[0], {2, 0, 2, 1});
  }));
  const auto vec = randn({3}, 27);
  expect_check(check_gradients("mul_axis", {a, randn({3}, 28)}, [](auto& g, auto& v) {
    return mul_axis(g, v[0], v[1], 1);
  }));
  expect_check(check_gradients("broadcast_spatial", {vec}, [](auto& g, auto& v) {
    return broadcast_spatial(g, v[0], Shape{2, 3});
  }));
}

TEST(GradCheck, Affine) {
  expect_check(check_gradients("affine", {randn({5, 4}, 30), randn({3, 4}, 31), randn({3}, 32)},
                               [](auto& g, auto& v) { return affine(g, v[0], v[1], v[2]); }));
  expect_check(check_gradients("affine_nobias", {randn({37, 9}, 33), randn({6, 9}, 34)},
                               [](auto& g, auto& v) { return affine(g, v[0], v[1]); }));
}

TEST(GradCheck, Conv) {
  expect_check(check_gradients("conv3d", {randn({2, 4, 5, 3}, 40), randn({3, 2, 3, 3, 3}, 41), randn({3}, 42)},
                               [](auto& g, auto& v) { return conv(g, v[0], v[1], v[2], ConvSpec{{1, 1, 1}, {1, 1, 1}}); }));
  expect_check(check_gradients("conv3d_stride2", {randn({2, 4, 4, 4}, 43), randn({3, 2, 3, 3, 3}, 44)},
                               [](auto& g, auto& v) {
                                 return conv(g, v[0], v[1], Var{}, ConvSpec{{2, 2, 2}, {1, 1, 1}});
                               }));
  expect_check(check_gradients("conv2d", {randn({3, 1, 5, 6}, 45), randn({2, 3, 1, 3, 3}, 46), randn({2}, 47)},
                               [](auto& g, auto& v) { return conv(g, v[0], v[1], v[2], ConvSpec{{1, 1, 1}, {0, 1, 1}}); }));
  expect_check(check_gradients("conv_pointwise", {randn({3, 2, 3, 3}, 48), randn({4, 3, 1, 1, 1}, 49)},
                               [](auto& g, auto& v) { return conv(g, v[0], v[1], Var{}, ConvSpec{}); }));
}

TEST(GradCheck, SpatialOps) {
  expect_check(check_gradients("upsample_nearest", {randn({2, 2, 3, 2}, 50)}, [](auto& g, auto& v) {
    return upsample_nearest(g, v[0], {2, 2, 2});
  }));
  expect_check(check_gradients("instance_norm", {randn({3, 2, 3, 2}, 51)}, [](auto& g, auto& v) {
    return instance_norm(g, v[0]);
  }));
  expect_check(check_gradients("trilinear_gather", {randn({3, 10}, 52)}, [](auto& g, auto& v) {
    return weighted_gather(g, v[0], {0, 3, 9, 1, 1, 2, 5, 7}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.25, 0.125, 0.125}, 4);
  }));
  expect_check(check_gradients("crop2d", {randn({2, 5, 6}, 53)}, [](auto& g, auto& v) {
    return crop2d(g, v[0], 1, 2, 3, 3);
  }));
  expect_check(check_gradients("resize_bilinear_up", {randn({2, 3, 4}, 54)}, [](auto& g, auto& v) {
    return resize_bilinear(g, v[0], 7, 9);
  }));
  expect_check(check_gradients("resize_bilinear_down", {randn({1, 9, 8}, 55)}, [](auto& g, auto& v) {
    return resize_bilinear(g, v[0], 4, 3);
  }));
}

TEST(GradCheck, CorruptedRuleIsDetected) {
  auto r = check_gradients(
      "mul", {randn({2, 2}, 60), randn({2, 2}, 61)}, [](auto& g, auto& v) { return mul(g, v[0], v[1]); }, 1e-4, 1e-4,
      7, corrupt_op("mul"));
  EXPECT_FALSE(r.passed);
}

// ---------------------------------------------------------------------------
// Second order

namespace {

struct TwoLayer {
  template <class T>
  Var operator()(Graph<T>& g, ParamBinder<T>& P, Var x) const {
    Var h = softplus(g, affine(g, reshape(g, x, Shape{1, 4}), P("w1"), P("b1")));
    return reshape(g, affine(g, h, P("w2"), P("b2")), Shape{});
  }
};

ParamStore two_layer_store(std::uint64_t seed) {
  ParamStore s;
  std::mt19937_64 rng(seed);
  s.init_uniform("w1", {5, 4}, 4, 6.0, rng);
  s.init_uniform("b1", {5}, 4, 1.0, rng);
  s.init_uniform("w2", {1, 5}, 5, 3.0, rng);
  s.init_uniform("b2", {1}, 5, 1.0, rng);
  return s;
}

}  // namespace

TEST(SecondOrder, ConstantDiscriminator) {
  ParamStore s;
  s.init_constant("c", {1}, 0.3);
  auto r = input_grad_penalty(s, randn({4}, 70), [](auto& g, auto& P, Var x) {
    return add(g, scale(g, sum(g, x), 0.0), reshape(g, P("c"), Shape{}));
  });
  EXPECT_EQ(r.penalty, 0.0);
  EXPECT_EQ(r.param_grad.at("c")[0], 0.0);
}

TEST(SecondOrder, LinearClosedForm) {
  ParamStore s;
  s.set("w", randn({1, 4}, 71));
  auto lin = [](auto& g, auto& P, Var x) { return reshape(g, affine(g, reshape(g, x, Shape{1, 4}), P("w")), Shape{}); };
  auto r1 = input_grad_penalty(s, randn({4}, 72), lin);
  auto r2 = input_grad_penalty(s, randn({4}, 73), lin);
  double nrm = 0;
  for (double v : s.get("w").data) nrm += v * v;
  EXPECT_NEAR(r1.penalty, nrm, 1e-14);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(r1.param_grad.at("w")[i], 2 * s.get("w")[i], 1e-14);
    EXPECT_EQ(r1.param_grad.at("w")[i], r2.param_grad.at("w")[i]);
  }
}

TEST(SecondOrder, TwoLayerMatchesFiniteDifferences) {
  auto s = two_layer_store(80);
  const auto x = randn({4}, 81);
  auto r = input_grad_penalty(s, x, TwoLayer{});
  const double eps = 1e-5;
  for (auto& [name, p] : s.all()) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double p0 = p[i];
      p[i] = p0 + eps;
      const double fp = input_grad_penalty(s, x, TwoLayer{}).penalty;
      p[i] = p0 - eps;
      const double fm = input_grad_penalty(s, x, TwoLayer{}).penalty;
      p[i] = p0;
      const double num = (fp - fm) / (2 * eps);
      const double ana = r.param_grad.at(name)[i];
      EXPECT_NEAR(ana, num, 1e-3 * std::max(1.0, std::abs(num))) << name << "[" << i << "]";
    }
  }
}

TEST(SecondOrder, RejectsOpsWithoutRule) {
  auto s = two_layer_store(82);
  auto with_relu = [](auto& g, auto& P, Var x) {
    Var h = relu(g, affine(g, reshape(g, x, Shape{1, 4}), P("w1"), P("b1")));
    return reshape(g, affine(g, h, P("w2"), P("b2")), Shape{});
  };
  EXPECT_THROW(input_grad_penalty(s, randn({4}, 83), with_relu), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Optimizer

TEST(Adam, ZeroGradientLeavesParameters) {
  ParamStore s;
  s.set("p", randn({3}, 90));
  const auto before = s.get("p").data;
  Adam opt({1e-3});
  opt.step(s, {{"p", Tensor<double>({3}, 0.0)}});
  EXPECT_EQ(s.get("p").data, before);
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(Adam, FirstStepIsMinusLr) {
  ParamStore s;
  s.set("p", Tensor<double>({1}, 2.0));
  Adam opt({0.01, 0.9, 0.999, 1e-8});
  opt.step(s, {{"p", Tensor<double>({1}, 1.0)}});
  EXPECT_NEAR(s.get("p")[0], 2.0 - 0.01, 1e-9);
}

TEST(Adam, QuadraticMatchesScalarOracle) {
  ParamStore s;
  s.set("p", Tensor<double>({1}, 1.0));
  Adam opt({0.1});
  // Independent scalar transcription of the bias-corrected update.
  double th = 1.0, m = 0, v = 0;
  double prev = 1.0;
  for (int t = 1; t <= 10; ++t) {
    const double g = 2 * th;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    th -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    opt.step(s, {{"p", Tensor<double>({1}, 2 * s.get("p")[0])}});
    EXPECT_LT(std::abs(s.get("p")[0]), prev);
    prev = std::abs(s.get("p")[0]);
  }
  EXPECT_NEAR(s.get("p")[0], th, 1e-12);
}

TEST(Adam, RejectsNonFinite) {
  ParamStore s;
  s.set("p", Tensor<double>({2}, 1.0));
  Adam opt;
  Tensor<double> g({2}, 0.0);
  g[1] = std::nan("");
  EXPECT_THROW(opt.step(s, {{"p", g}}), std::domain_error);
  EXPECT_EQ(s.get("p")[0], 1.0);
  EXPECT_EQ(opt.steps(), 0u);
}

TEST(Ema, Extremes) {
  ParamStore s;
  s.set("p", Tensor<double>({2}, 1.0));
  Ema e(s);
  s.get("p").fill(5.0);
  e.update(s, 1.0);
  EXPECT_EQ(e.shadow().at("p")[0], 1.0);
  e.update(s, 0.0);
  EXPECT_EQ(e.shadow().at("p")[0], 5.0);
}

TEST(Ema, GeometricClosedForm) {
  ParamStore s;
  s.set("p", Tensor<double>({1}, 0.0));
  Ema e(s);
  s.get("p")[0] = 3.0;
  for (int i = 0; i < 10; ++i) e.update(s, 0.9);
  EXPECT_NEAR(e.shadow().at("p")[0], 3.0 + (0.0 - 3.0) * std::pow(0.9, 10), 1e-12);
}

TEST(Reduce, TreeOrderIsFixed) {
  std::vector<TensorMap> parts;
  for (int i = 0; i < 7; ++i) parts.push_back({{"g", randn({3}, 100 + static_cast<std::uint64_t>(i))}});
  auto a = tree_reduce(parts);
  auto b = tree_reduce(parts);
  EXPECT_EQ(a.at("g").data, b.at("g").data);
  double want = 0;
  for (auto& p : parts) want += p.at("g")[0];
  EXPECT_NEAR(a.at("g")[0], want, 1e-12);
}

TEST(Checkpoint, RoundTripWithOptimizerState) {
  ParamStore s;
  s.set("layer.w", randn({2, 3}, 110));
  s.set("layer.b", randn({3}, 111));
  Adam opt;
  opt.step(s, {{"layer.w", randn({2, 3}, 112)}});
  Ema e(s);
  std::stringstream ss;
  write_tensors(ss, pack_checkpoint(s, &opt, &e));
  auto packed = read_tensors(ss, "mem");
  Adam opt2;
  Ema e2;
  auto s2 = unpack_checkpoint(packed, &opt2, &e2);
  EXPECT_EQ(opt2.steps(), 1u);
  ASSERT_EQ(s2.all().size(), 2u);
  for (const auto& [k, v] : s.all())
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(s2.get(k)[i], static_cast<double>(static_cast<float>(v[i])));
  EXPECT_EQ(e2.shadow().size(), 2u);
  EXPECT_EQ(opt2.first_moments().size(), 2u);
}

TEST(Checkpoint, TruncatedFileIsDataError) {
  std::stringstream ss;
  write_tensors(ss, {{"a", randn({4}, 120)}});
  std::string bytes = ss.str();
  std::stringstream cut(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_tensors(cut, "cut"), nff::DataError);
}

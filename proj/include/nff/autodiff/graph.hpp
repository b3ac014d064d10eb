// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nff/autodiff/tensor.hpp"

namespace nff::ad {

/// Handle to a node in a Graph.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Tape of primitive operations recorded in execution order.
///
/// Each node keeps its forward value, an optional gradient buffer, and two
/// closures: `forward` recomputes the value from the inputs (used by replay),
/// `backward` pushes the node's gradient onto its inputs. Recording order is a
/// topological order, so replay and backward are single linear sweeps.
template <class T>
class Graph {
 public:
  using Fn = std::function<void(Graph&, int)>;

  struct Node {
    std::string op;
    std::vector<int> inputs;
    Tensor<T> value;
    Tensor<T> grad;
    bool needs_grad = false;
    bool is_leaf = false;
    bool second_order = true;  // has a forward-over-reverse rule
    Fn forward;
    Fn backward;
  };

  Var leaf(Tensor<T> value, bool requires_grad, std::string name = "leaf") {
    Node n;
    n.op = std::move(name);
    n.value = std::move(value);
    n.needs_grad = requires_grad;
    n.is_leaf = true;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var constant(Tensor<T> value) { return leaf(std::move(value), false, "constant"); }

  /// Appends an operation node and evaluates it once.
  Var record(std::string op, std::vector<Var> inputs, bool second_order, Fn forward, Fn backward) {
    Node n;
    n.op = std::move(op);
    n.second_order = second_order;
    for (Var v : inputs) {
      check(v);
      n.inputs.push_back(v.id);
      n.needs_grad = n.needs_grad || nodes_[static_cast<std::size_t>(v.id)].needs_grad;
    }
    n.forward = std::move(forward);
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    const int id = static_cast<int>(nodes_.size()) - 1;
    nodes_.back().forward(*this, id);
    return Var{id};
  }

  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  const Tensor<T>& in(int self, int i) const { return node(node(self).inputs[static_cast<std::size_t>(i)]).value; }
  int input_id(int self, int i) const { return node(self).inputs[static_cast<std::size_t>(i)]; }

  const Tensor<T>& value(Var v) const {
    check(v);
    return node(v.id).value;
  }
  const Shape& shape(Var v) const { return value(v).shape; }
  bool needs_grad(int id) const { return node(id).needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Replaces a leaf's value; the graph must be replayed with forward() before
  /// the next backward().
  void set_value(Var v, Tensor<T> value) {
    check(v);
    Node& n = node(v.id);
    if (!n.is_leaf) throw std::invalid_argument("set_value on non-leaf node '" + n.op + "'");
    if (n.value.shape != value.shape)
      throw std::invalid_argument("shape mismatch in set_value: expected " + shape_str(n.value.shape) + ", got " +
                                  shape_str(value.shape));
    n.value = std::move(value);
    stale_ = true;
  }

  /// Re-evaluates every operation node in recording order.
  void forward() {
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (!nodes_[i].is_leaf) nodes_[i].forward(*this, static_cast<int>(i));
    stale_ = false;
  }

  /// Reverse sweep from `out` with the given cotangent; gradients are reset first.
  void backward(Var out, Tensor<T> cotangent) {
    check(out);
    if (stale_) throw std::logic_error("backward called before forward on a modified graph");
    if (cotangent.shape != node(out.id).value.shape)
      throw std::invalid_argument("cotangent shape " + shape_str(cotangent.shape) + " does not match output " +
                                  shape_str(node(out.id).value.shape));
    clear_grads();
    node(out.id).grad = std::move(cotangent);
    for (int id = out.id; id >= 0; --id) {
      Node& n = node(id);
      if (n.is_leaf || !n.needs_grad || n.grad.data.empty() || !n.backward) continue;
      n.backward(*this, id);
    }
  }

  /// Backward from a scalar output with unit cotangent.
  void backward(Var out) {
    if (!value(out).shape.empty() && value(out).size() != 1)
      throw std::invalid_argument("backward(out) requires a scalar output");
    backward(out, Tensor<T>(value(out).shape, T(1)));
  }

  /// Gradient buffer of `v`; zeros if nothing flowed into it.
  Tensor<T> grad(Var v) const {
    check(v);
    const Node& n = node(v.id);
    if (n.grad.data.empty()) return Tensor<T>(n.value.shape, T(0));
    return n.grad;
  }

  /// Gradient buffer for accumulation (allocated as zeros on first use).
  Tensor<T>& grad_ref(int id) {
    Node& n = node(id);
    if (n.grad.data.empty()) n.grad = Tensor<T>(n.value.shape, T(0));
    return n.grad;
  }

  void clear_grads() {
    for (auto& n : nodes_) n.grad = Tensor<T>();
  }

  /// Name of the first differentiable operation lacking a second-order rule, or
  /// an empty string when the whole differentiable path supports one.
  std::string first_without_second_order() const {
    for (const auto& n : nodes_)
      if (!n.is_leaf && n.needs_grad && !n.second_order) return n.op;
    return {};
  }

 private:
  void check(Var v) const {
    if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
      throw std::out_of_range("variable does not belong to this graph");
  }

  std::vector<Node> nodes_;
  bool stale_ = false;
};

}  // namespace nff::ad

// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation over a recorded graph.
//
// A Graph owns every intermediate value produced by the ops in ops.hpp, in
// creation order. backward() walks that list in reverse, so a topological
// sort is never needed. The same recorded forward pass can be differentiated
// several times with different output seeds (zero_grad() in between), which
// the training step relies on to get input gradients and loss gradients from
// one discriminator forward.

#pragma once

#include <algorithm>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "vidgan/tensor.hpp"

namespace vidgan {

struct Var {
  int id = -1;
  bool valid() const noexcept { return id >= 0; }
};

template <class S>
class Graph {
 public:
  // Receives the graph and the gradient flowing into the node's output.
  using BackwardFn = std::function<void(Graph&, const Tensor<S>&)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) noexcept = default;
  Graph& operator=(Graph&&) noexcept = default;

  bool grad_enabled() const noexcept { return grad_enabled_; }

  Var leaf(Tensor<S> value, bool requires_grad = false) {
    nodes_.push_back(Node{std::move(value), {}, grad_enabled_ && requires_grad, {}});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  // Records an op output. The node requires a gradient when any input does.
  Var record(Tensor<S> value, std::initializer_list<Var> inputs, BackwardFn backward) {
    return record(std::move(value), std::vector<Var>(inputs), std::move(backward));
  }

  Var record(Tensor<S> value, const std::vector<Var>& inputs, BackwardFn backward) {
    bool needs = false;
    if (grad_enabled_) {
      for (const Var& v : inputs) needs = needs || (v.valid() && node(v).requires_grad);
    }
    nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : BackwardFn{}});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  const Tensor<S>& value(Var v) const { return node(v).value; }
  const Shape& shape(Var v) const { return node(v).value.shape(); }
  bool requires_grad(Var v) const { return v.valid() && node(v).requires_grad; }

  // Gradient buffer of a node, allocated as zeros on first use.
  Tensor<S>& grad_buffer(Var v) {
    Node& n = node(v);
    if (n.grad.shape() != n.value.shape()) n.grad = Tensor<S>(n.value.shape());
    return n.grad;
  }

  // Accumulated gradient of a node (zeros if nothing flowed into it).
  Tensor<S> grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.shape() != n.value.shape()) return Tensor<S>(n.value.shape());
    return n.grad;
  }

  void accumulate(Var v, const Tensor<S>& g) {
    if (!requires_grad(v)) return;
    Tensor<S>& buf = grad_buffer(v);
    require_same_shape(buf.shape(), g.shape(), "Graph::accumulate");
    for (Index i = 0; i < g.size(); ++i) buf[i] += g[i];
  }

  void zero_grad() {
    for (Node& n : nodes_) n.grad = Tensor<S>();
  }

  // Back-propagates from a single-element output with unit seed.
  void backward(Var root) {
    if (value(root).size() != 1) {
      throw ShapeError("backward(root) needs a single-element output, got " +
                       to_string(shape(root)));
    }
    backward({{root, Tensor<S>(shape(root), S(1))}});
  }

  void backward(const std::vector<std::pair<Var, Tensor<S>>>& seeds) {
    int last = -1;
    for (const auto& [v, g] : seeds) {
      if (!requires_grad(v)) continue;
      accumulate(v, g);
      last = std::max(last, v.id);
    }
    for (int id = last; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.backward || n.grad.empty()) continue;
      // Closures only touch the buffers of their inputs, which have smaller ids.
      Tensor<S> gy = std::move(n.grad);
      n.backward(*this, gy);
      nodes_[static_cast<std::size_t>(id)].grad = std::move(gy);
    }
  }

  std::size_t node_count() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<S> value;
    Tensor<S> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Node& node(Var v) {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size())) {
      throw std::out_of_range("Graph: invalid variable id " + std::to_string(v.id));
    }
    return nodes_[static_cast<std::size_t>(v.id)];
  }
  const Node& node(Var v) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size())) {
      throw std::out_of_range("Graph: invalid variable id " + std::to_string(v.id));
    }
    return nodes_[static_cast<std::size_t>(v.id)];
  }

  bool grad_enabled_ = true;
  std::vector<Node> nodes_;
};

}  // namespace vidgan

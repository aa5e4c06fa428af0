// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "limbchan/errors.hpp"

namespace limbchan {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape &s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape &s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

namespace detail {
inline std::uint64_t &node_counter() {
  thread_local std::uint64_t counter = 0;
  return counter;
}
inline bool &grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
} // namespace detail

/// One value in the define-by-run graph. Nodes are created in topological
/// order by construction (a node's parents always exist before it), so the
/// creation id doubles as a topological key.
struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad; // allocated on first use
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode &)> backward_fn;

  TensorNode() { id = ++detail::node_counter(); }

  std::vector<double> &grad_buffer() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
    return grad;
  }
};

inline bool grad_enabled() { return detail::grad_mode(); }

/// Disables graph recording for its scope (inference, frozen submodels).
class NoGradGuard {
public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard &) = delete;
  NoGradGuard &operator=(const NoGradGuard &) = delete;

private:
  bool prev_;
};

/// Dense n-dimensional tensor of doubles, optionally participating in a
/// reverse-mode differentiation graph. Value semantics on the handle; the
/// node itself is shared.
class Tensor {
public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), 0.0, requires_grad);
  }

  static Tensor filled(Shape shape, double value, bool requires_grad = false) {
    Tensor t;
    t.node_ = std::make_shared<TensorNode>();
    t.node_->shape = std::move(shape);
    t.node_->values.assign(shape_numel(t.node_->shape), value);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (shape_numel(shape) != values.size())
      throw ShapeMismatch("from_values: " + shape_str(shape) + " cannot hold " +
                          std::to_string(values.size()) + " values");
    Tensor t;
    t.node_ = std::make_shared<TensorNode>();
    t.node_->shape = std::move(shape);
    t.node_->values = std::move(values);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(double v) { return from_values({}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape &shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->values.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }

  const std::vector<double> &values() const { return node_->values; }
  std::vector<double> &values() { return node_->values; }
  const double *data() const { return node_->values.data(); }
  double *data() { return node_->values.data(); }

  double value() const {
    if (numel() != 1) throw ShapeMismatch("value() on non-scalar tensor " + shape_str(shape()));
    return node_->values[0];
  }
  double at(std::size_t flat) const { return node_->values.at(flat); }
  double &at(std::size_t flat) { return node_->values.at(flat); }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor &set_requires_grad(bool rg) {
    node_->requires_grad = rg;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<double> &grad() const { return node_->grad; }
  std::vector<double> &grad_buffer() { return node_->grad_buffer(); }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }
  /// Drops graph edges accumulated on this leaf (backward closures hold
  /// parent references; leaves never have any, so this is a no-op for them).
  void detach_() {
    node_->parents.clear();
    node_->backward_fn = nullptr;
  }

  std::shared_ptr<TensorNode> node() const { return node_; }

  /// Builds a result node of `shape`; records parents/backward only when grad
  /// mode is on and some parent requires grad.
  static Tensor make_op(Shape shape, std::vector<Tensor> parents,
                        std::function<void(TensorNode &)> backward_fn) {
    Tensor t;
    t.node_ = std::make_shared<TensorNode>();
    t.node_->shape = std::move(shape);
    t.node_->values.assign(shape_numel(t.node_->shape), 0.0);
    bool track = grad_enabled();
    if (track) {
      bool any = false;
      for (const auto &p : parents) any = any || p.node()->requires_grad;
      track = any;
    }
    if (track) {
      t.node_->requires_grad = true;
      t.node_->parents.reserve(parents.size());
      for (auto &p : parents) t.node_->parents.push_back(p.node());
      t.node_->backward_fn = std::move(backward_fn);
    }
    return t;
  }

private:
  std::shared_ptr<TensorNode> node_;
};

/// Topologically ordered node list for one backward pass over a forward
/// graph. Creation ids are monotone along parent edges, so ordering by id
/// yields a valid schedule and each node is visited exactly once.
struct Graph {
  std::vector<std::shared_ptr<TensorNode>> order; // ascending id

  static Graph build(const Tensor &root) {
    Graph g;
    std::unordered_set<const TensorNode *> seen;
    std::vector<std::shared_ptr<TensorNode>> stack{root.node()};
    while (!stack.empty()) {
      auto n = stack.back();
      stack.pop_back();
      if (!n || !n->requires_grad) continue;
      if (!seen.insert(n.get()).second) continue;
      g.order.push_back(n);
      for (const auto &p : n->parents) stack.push_back(p);
    }
    std::sort(g.order.begin(), g.order.end(),
              [](const auto &a, const auto &b) { return a->id < b->id; });
    return g;
  }

  void run_backward() {
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      auto &n = **it;
      if (n.backward_fn && !n.grad.empty()) n.backward_fn(n);
    }
  }
};

/// Reverse-mode sweep: fills `grad` on every reachable node that requires
/// grad. Gradients accumulate additively across multiple uses of a leaf.
inline void backward(const Tensor &loss) {
  if (loss.numel() != 1)
    throw NonScalarLoss("backward requires a scalar, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return; // nothing reachable
  Graph g = Graph::build(loss);
  loss.node()->grad_buffer()[0] += 1.0;
  g.run_backward();
}

} // namespace limbchan

#pragma once

// Dense row-major tensors with reverse-mode differentiation.
//
// Every differentiable op produces a node holding its parents and a gradient
// rule. backward() linearises the reachable subgraph into a tape in
// topological order, replays the rules in reverse, then consumes the tape:
// a second backward() through the same graph is a ContractError rather than
// silent double accumulation. Leaf gradients accumulate until zero_grad().

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "egmae/errors.hpp"

namespace egmae {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until populated
  bool requires_grad = false;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

template <typename T = float>
class Tensor {
 public:
  using value_type = T;
  using NodeT = detail::Node<T>;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<NodeT>()) {
    for (std::size_t d : shape) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  // Mutation is for parameters and freshly built inputs; writing through a
  // tensor that already fed a recorded op invalidates that op's gradient.
  std::span<T> mutable_data() { return node_->data; }
  const std::vector<T>& vec() const { return node_->data; }

  T item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }
  T operator[](std::size_t i) const { return node_->data[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) {
    if (!node_->is_leaf()) throw ContractError("requires_grad can only be toggled on leaf tensors");
    node_->requires_grad = on;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  /// Gradient, or zeros when no backward pass reached this tensor.
  std::vector<T> grad_or_zero() const {
    return has_grad() ? node_->grad : std::vector<T>(numel(), T(0));
  }
  void zero_grad() { node_->grad.clear(); }

  /// A new leaf sharing no graph history.
  Tensor detach() const { return Tensor(shape(), node_->data, false); }

  void backward() const;

  const std::shared_ptr<NodeT>& node() const { return node_; }

  /// Records an op result. The gradient rule reads out.grad and accumulates
  /// into the parents that require gradients.
  static Tensor make_result(Shape shape, std::vector<T> data,
                            std::vector<Tensor> inputs,
                            std::function<void(const NodeT&)> rule) {
    Tensor out(std::move(shape), std::move(data), false);
    if (!grad_enabled()) return out;
    const bool track = std::any_of(inputs.begin(), inputs.end(),
                                   [](const Tensor& t) { return t.defined() && t.requires_grad(); });
    if (!track) return out;
    out.node_->requires_grad = true;
    for (auto& in : inputs) {
      if (in.defined()) out.node_->parents.push_back(in.node_);
    }
    out.node_->backward_fn = std::move(rule);
    return out;
  }

 private:
  std::shared_ptr<NodeT> node_;
};

template <typename T>
void Tensor<T>::backward() const {
  if (numel() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " + shape_str(shape()));
  }
  if (node_->consumed) {
    throw ContractError("backward() through an already-consumed tape; rebuild the graph with a new forward pass");
  }
  if (!node_->requires_grad) {
    node_->consumed = true;
    return;
  }

  // Iterative post-order DFS gives the tape in topological order.
  std::vector<NodeT*> tape;
  std::unordered_set<const NodeT*> seen;
  std::vector<std::pair<NodeT*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (n->consumed) {
      throw ContractError("backward() through an already-consumed tape; rebuild the graph with a new forward pass");
    }
    if (next < n->parents.size()) {
      NodeT* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      tape.push_back(n);
      stack.pop_back();
    }
  }

  node_->ensure_grad();
  node_->grad[0] += T(1);
  for (auto it = tape.rbegin(); it != tape.rend(); ++it) {
    NodeT* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  for (NodeT* n : tape) {
    if (!n->is_leaf()) {
      n->backward_fn = nullptr;
      n->parents.clear();
      n->consumed = true;
    }
  }
}

}  // namespace egmae

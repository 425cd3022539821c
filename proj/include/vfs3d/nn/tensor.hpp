#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "vfs3d/core/error.hpp"

namespace vfs3d::nn {

#ifdef VFS3D_FLOAT32
using real = float;
#else
using real = double;
#endif

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

/// One value in the recorded graph. Leaves (parameters, constants) have no
/// parents; interior nodes carry a closure that pushes `grad` into parents.
struct Node {
  Shape shape;
  std::vector<real> value;
  std::vector<real> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<real>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), real(0));
    return grad;
  }
};

namespace detail {
inline thread_local bool grad_enabled = true;
}

inline bool grad_enabled() { return detail::grad_enabled; }

/// Disables graph recording in scope (frozen-backbone inference, evaluation).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Handle to a dense row-major array that may participate in the graph.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  static Var constant(Shape shape, std::vector<real> values) {
    if (numel(shape) != values.size())
      throw ShapeError("constant: shape " + shape_str(shape) + " does not match " +
                       std::to_string(values.size()) + " values");
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    return Var(std::move(n));
  }

  static Var zeros(Shape shape) {
    const auto count = numel(shape);
    return constant(std::move(shape), std::vector<real>(count, real(0)));
  }

  static Var full(Shape shape, real v) {
    const auto count = numel(shape);
    return constant(std::move(shape), std::vector<real>(count, v));
  }

  static Var scalar(real v) { return constant({}, {v}); }

  /// Leaf that accumulates gradients across backward calls until zero_grad().
  static Var parameter(Shape shape, std::vector<real> values) {
    Var v = constant(std::move(shape), std::move(values));
    v.n_->requires_grad = true;
    return v;
  }

  bool defined() const { return static_cast<bool>(n_); }
  const Shape& shape() const { return n_->shape; }
  std::size_t rank() const { return n_->shape.size(); }
  std::size_t dim(std::size_t i) const { return n_->shape.at(i); }
  std::size_t size() const { return n_->value.size(); }

  std::span<const real> value() const { return n_->value; }
  std::span<real> mutable_value() { return n_->value; }
  std::vector<real>& storage() { return n_->value; }

  /// Gradient; all zeros when nothing has been accumulated yet.
  std::vector<real> grad() const {
    if (n_->grad.size() == n_->value.size()) return n_->grad;
    return std::vector<real>(n_->value.size(), real(0));
  }
  std::vector<real>& mutable_grad() { return n_->ensure_grad(); }
  bool has_grad() const { return n_->grad.size() == n_->value.size(); }

  real item() const {
    if (size() != 1) throw ShapeError("item() on array of shape " + shape_str(shape()));
    return n_->value[0];
  }
  real operator[](std::size_t i) const { return n_->value[i]; }
  real at(std::size_t r, std::size_t c) const { return n_->value[r * n_->shape.at(1) + c]; }

  bool requires_grad() const { return n_->requires_grad; }
  void zero_grad() { n_->grad.clear(); }

  /// Copy of the value with no graph history.
  Var detach() const { return constant(shape(), n_->value); }

  const std::shared_ptr<Node>& node() const { return n_; }

  /// Reverse sweep from a scalar. Interior gradients are reset first so the
  /// sweep may be repeated; leaf gradients accumulate.
  void backward() const {
    if (size() != 1) throw ShapeError("backward() requires a scalar, got " + shape_str(shape()));
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{n_.get(), 0}};
    seen.insert(n_.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Node* p = node->parents[next++].get();
        if (p && p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    for (Node* node : order)
      if (node->backward_fn) {
        auto& g = node->ensure_grad();
        std::fill(g.begin(), g.end(), real(0));
      }
    n_->ensure_grad()[0] += real(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
      if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }

 private:
  std::shared_ptr<Node> n_;
};

/// Builds an op result. Records parents and the adjoint only if recording is
/// enabled and some parent needs a gradient.
inline Var make_result(Shape shape, std::vector<real> value, std::vector<Var> parents,
                       std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (grad_enabled()) {
    const bool any = std::any_of(parents.begin(), parents.end(),
                                 [](const Var& p) { return p.defined() && p.requires_grad(); });
    if (any) {
      n->requires_grad = true;
      for (auto& p : parents) n->parents.push_back(p.node());
      n->backward_fn = std::move(backward_fn);
    }
  }
  return Var(std::move(n));
}

/// Gradient buffer of parent `i` if it wants one, else nullptr.
inline std::vector<real>* parent_grad(Node& self, std::size_t i) {
  auto& p = self.parents[i];
  if (!p || !p->requires_grad) return nullptr;
  return &p->ensure_grad();
}

inline const std::vector<real>& parent_value(const Node& self, std::size_t i) { return self.parents[i]->value; }

}  // namespace vfs3d::nn

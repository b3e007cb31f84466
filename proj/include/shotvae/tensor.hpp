#pragma once

// Dense float64 tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle to an immutable node. Operations that involve a
// tensor requiring gradients record their inputs and a backward rule on the
// result node; backward() orders the reachable nodes into a Tape and replays
// the rules in reverse. Leaf gradients accumulate across backward calls until
// zero_grad().

#include <cmath>
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

#include "shotvae/errors.hpp"

namespace shotvae {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until touched
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;  // empty for leaves

  bool is_leaf() const noexcept { return !backward; }
  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

inline thread_local int no_grad_depth = 0;

}  // namespace detail

inline bool grad_enabled() noexcept { return detail::no_grad_depth == 0; }

/// Disables graph recording in its scope (evaluation, optimizer updates).
class NoGradGuard {
 public:
  NoGradGuard() noexcept { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

class Tensor {
 public:
  using BackwardFn = std::function<void(detail::Node&)>;

  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    for (auto d : shape) {
      if (d == 0) throw ShapeError("tensor dimension must be positive, got " + shape_str(shape));
    }
    if (shape_size(shape) != values.size()) {
      throw ShapeError("tensor of shape " + shape_str(shape) + " needs " +
                       std::to_string(shape_size(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return Tensor({}, {v}, requires_grad);
  }
  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    const auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v), requires_grad);
  }
  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), 0.0, requires_grad);
  }
  static Tensor ones(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), 1.0, requires_grad);
  }
  static Tensor vector(std::vector<double> v, bool requires_grad = false) {
    const auto n = v.size();
    return Tensor({n}, std::move(v), requires_grad);
  }
  static Tensor matrix(const std::vector<std::vector<double>>& rows, bool requires_grad = false) {
    if (rows.empty()) throw ShapeError("matrix needs at least one row");
    const auto cols = rows.front().size();
    std::vector<double> flat;
    flat.reserve(rows.size() * cols);
    for (const auto& r : rows) {
      if (r.size() != cols) throw ShapeError("ragged matrix rows");
      flat.insert(flat.end(), r.begin(), r.end());
    }
    return Tensor({rows.size(), cols}, std::move(flat), requires_grad);
  }

  /// Result of an operation. Parents are kept only when gradients flow.
  static Tensor make_result(Shape shape, std::vector<double> values,
                            std::initializer_list<const Tensor*> parents, BackwardFn fn) {
    Tensor out(std::move(shape), std::move(values));
    if (!grad_enabled()) return out;
    bool any = false;
    for (const Tensor* p : parents) any = any || p->requires_grad();
    if (!any) return out;
    out.node_->requires_grad = true;
    for (const Tensor* p : parents) out.node_->parents.push_back(p->node_);
    out.node_->backward = std::move(fn);
    return out;
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t dim(std::size_t i) const {
    if (i >= rank()) throw ShapeError("axis " + std::to_string(i) + " out of range for " + shape_str(shape()));
    return node_->shape[i];
  }
  std::size_t rows() const { return rank() == 2 ? node_->shape[0] : 1; }
  std::size_t cols() const { return rank() == 0 ? 1 : node_->shape.back(); }

  std::span<const double> values() const { return node_->value; }
  /// Direct write access, for parameter updates on leaves only.
  std::span<double> mutable_values() {
    if (!node_->is_leaf()) throw ContractError("mutable_values() on a non-leaf tensor");
    return node_->value;
  }
  std::vector<double> to_vector() const { return node_->value; }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  double item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  bool has_grad() const noexcept { return node_ && !node_->grad.empty(); }
  /// Gradient of the last backward pass(es); empty span if none reached.
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  /// Same values, cut from the graph.
  Tensor detach() const { return Tensor(shape(), node_->value, false); }

  /// Independent copy that keeps requires_grad.
  Tensor clone() const { return Tensor(shape(), node_->value, node_->requires_grad); }

  const std::shared_ptr<detail::Node>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Reverse topological order of the graph under a scalar loss.
class Tape {
 public:
  static Tape record(const Tensor& loss) {
    Tape tape;
    if (!loss.requires_grad()) return tape;
    std::unordered_set<const detail::Node*> seen;
    // Iterative post-order DFS: parents land before children.
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        detail::Node* p = node->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        tape.order_.push_back(node);
        stack.pop_back();
      }
    }
    return tape;
  }

  /// Nodes in execution (topological) order.
  std::span<detail::Node* const> operations() const { return order_; }

  void run() {
    if (order_.empty()) return;
    for (auto* n : order_) {
      if (!n->is_leaf()) n->grad.assign(n->value.size(), 0.0);
    }
    order_.back()->ensure_grad()[0] += 1.0;
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      detail::Node* n = *it;
      if (!n->is_leaf()) n->backward(*n);
    }
    // Interior gradients are scratch space; keep memory bounded.
    for (auto* n : order_) {
      if (!n->is_leaf()) std::vector<double>().swap(n->grad);
    }
  }

 private:
  std::vector<detail::Node*> order_;
};

/// Populates .grad on every requires_grad leaf reachable from `loss`.
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  Tape::record(loss).run();
}

}  // namespace shotvae

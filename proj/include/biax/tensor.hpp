#pragma once

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

#include "biax/error.hpp"

namespace biax {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
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
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

using NodePtr = std::shared_ptr<Node>;

inline bool& grad_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph construction on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled()) { detail::grad_enabled() = false; }
  ~NoGradGuard() { detail::grad_enabled() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Dense row-major float64 tensor with optional reverse-mode gradient tracking.
///
/// Tensor is a handle: copies share the same storage and graph node. Leaves
/// created with requires_grad=true own a gradient buffer of identical shape;
/// gradients accumulate across backward() calls until zero_grad().
class Tensor {
 public:
  Tensor() : node_(std::make_shared<detail::Node>()) {}

  Tensor(std::vector<double> data, Shape shape, bool requires_grad = false) : node_(std::make_shared<detail::Node>()) {
    if (shape_numel(shape) != data.size())
      throw DimensionError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                           shape_str(shape));
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
    if (requires_grad) node_->ensure_grad();
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<double> d(shape_numel(shape), 0.0);
    return Tensor(std::move(d), std::move(shape), requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    std::vector<double> d(shape_numel(shape), value);
    return Tensor(std::move(d), std::move(shape), requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) { return Tensor({v}, {}, requires_grad); }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  // Direct write access; intended for parameter initialisation and optimizer updates.
  std::span<double> mutable_data() { return node_->data; }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    if (node_->requires_grad) node_->grad.assign(node_->data.size(), 0.0);
  }

  double item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }

  double operator[](std::size_t i) const { return node_->data[i]; }

  // Copy of the values with no graph attached.
  Tensor detach() const { return Tensor(node_->data, node_->shape, false); }

  bool same_node(const Tensor& o) const { return node_ == o.node_; }

  /// Reverse-mode sweep from a scalar loss. Leaf gradients are accumulated (+=).
  void backward() const {
    if (numel() != 1) throw ContractError("backward() requires a scalar loss, got shape " + shape_str(shape()));
    if (!node_->requires_grad) throw ContractError("backward() on a tensor not connected to any requires_grad leaf");

    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        detail::Node* p = n->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    // Interior grads start fresh each sweep; leaves keep accumulating.
    for (detail::Node* n : order)
      if (n->backward) n->grad.assign(n->data.size(), 0.0);
    node_->ensure_grad();
    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
      if ((*it)->backward) (*it)->backward(**it);
  }

  detail::Node& node() const { return *node_; }
  const detail::NodePtr& node_ptr() const { return node_; }

  /// Builds an op result. If no parent requires grad the result is a plain
  /// constant and `backward` is dropped.
  static Tensor from_op(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                        std::function<void(detail::Node&)> backward) {
    Tensor out(std::move(data), std::move(shape), false);
    bool any = false;
    if (detail::grad_enabled())
      for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
      out.node_->requires_grad = true;
      for (auto& p : parents) out.node_->parents.push_back(p.node_);
      out.node_->backward = std::move(backward);
    }
    return out;
  }

 private:
  detail::NodePtr node_;
};

}  // namespace biax

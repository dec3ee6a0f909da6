#pragma once

// Dense row-major float tensors with a tape-free reverse-mode graph.
//
// Every op output keeps shared handles to its inputs plus a closure that
// pushes its gradient back into them. backward() walks the graph in reverse
// topological order. Leaf tensors created with requires_grad accumulate
// gradients until zero_grad() is called.

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace carrylab {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Grad recording is on by default; GradModeGuard turns it off for a scope
// (evaluation). The flag is per thread so parallel evaluation is safe.
class GradMode {
 public:
  static bool enabled() { return flag(); }
  static void set(bool on) { flag() = on; }

 private:
  static bool& flag() {
    thread_local bool on = true;
    return on;
  }
};

class NoGradGuard {
 public:
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set(false); }
  ~NoGradGuard() { GradMode::set(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<float> value;
  std::vector<float> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad, accumulates into parents' grads.
  std::function<void()> backward;
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = numel_of(shape);
    return from(std::move(shape), std::vector<float>(n, 0.0f), requires_grad);
  }

  static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false) {
    if (numel_of(shape) != values.size()) {
      throw std::invalid_argument("tensor shape " + shape_str(shape) + " does not match " +
                                  std::to_string(values.size()) + " values");
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    if (requires_grad) node->grad.assign(node->value.size(), 0.0f);
    return Tensor(std::move(node));
  }

  static Tensor scalar(float v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<float> data() { return node_->value; }
  std::span<const float> data() const { return node_->value; }
  float* ptr() { return node_->value.data(); }
  const float* ptr() const { return node_->value.data(); }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  // Handle semantics: gradients stay writable through a const handle.
  std::span<float> grad() const { return node_->grad; }

  void zero_grad() const {
    if (node_->requires_grad) node_->grad.assign(node_->value.size(), 0.0f);
  }

  float item() const {
    if (numel() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }

  // Copy of the values with no graph attached.
  Tensor detach() const { return from(shape(), node_->value, false); }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& handle() const { return node_; }

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

// Builds an op output. When grad mode is on and any input tracks gradients,
// the output records its parents and `make_backward(out)` supplies the closure.
template <typename MakeBackward>
Tensor make_result(Shape shape, std::vector<float> values, std::initializer_list<Tensor> inputs,
                   MakeBackward&& make_backward) {
  bool track = false;
  if (GradMode::enabled()) {
    for (const auto& t : inputs) track = track || t.requires_grad();
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  if (track) {
    node->requires_grad = true;
    for (const auto& t : inputs) {
      if (t.requires_grad()) node->parents.push_back(t.handle());
    }
    node->backward = make_backward(node.get());
  }
  return Tensor(std::move(node));
}

}  // namespace detail

// Reverse-mode sweep from a scalar loss. Interior gradients are freed after
// use; leaf gradients accumulate.
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto* parent = node->parents[next++].get();
      if (seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* node : order) {
    if (node->backward && node->grad.size() != node->value.size()) node->grad.assign(node->value.size(), 0.0f);
  }
  loss.node()->grad.assign(1, 1.0f);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* node = *it;
    if (node->backward) {
      node->backward();
      if (node != loss.node()) {
        std::vector<float>().swap(node->grad);
      }
    }
  }
}

}  // namespace carrylab

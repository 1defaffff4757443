// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode automatic differentiation over Tensor<T>.
//
// A Var wraps a shared graph node. Operations in ops.hpp create result nodes
// that remember their inputs and a backward closure whenever gradient
// recording is enabled and at least one input requires a gradient. With
// recording disabled (NoGradGuard) no graph is retained, so intermediate
// activations are released as soon as they go out of scope.
#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "ocg/tensor.hpp"

namespace ocg::ad {

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  bool has_grad() const { return !grad.empty() || value.empty(); }

  /// Gradient buffer, allocated as zeros on first use.
  Tensor<T>& grad_buffer() {
    if (grad.numel() != value.numel()) grad = Tensor<T>::zeros(value.shape());
    return grad;
  }
};

template <typename T>
class Var {
 public:
  Var() : node_(std::make_shared<Node<T>>()) {}
  explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int64_t size(int64_t axis) const { return node_->value.size(axis); }
  int64_t numel() const { return node_->value.numel(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool r) { node_->requires_grad = r; }

  /// Accumulated gradient; zeros if none has flowed here yet.
  const Tensor<T>& grad() const { return node_->grad_buffer(); }
  Tensor<T>& mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.fill(T(0));
  }

  /// Backpropagates from a scalar (seed 1) or from an explicit seed.
  void backward() const;
  void backward(const Tensor<T>& seed) const;

  /// Same value, no graph history.
  Var detach() const { return Var(node_->value, false); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Builds an op result. The backward closure receives the result node; it
/// reads `self.grad` and accumulates into `self.inputs[i]->grad_buffer()`
/// for every input with requires_grad set.
template <typename T>
Var<T> make_result(Tensor<T> value, const std::vector<Var<T>>& inputs,
                   std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (const auto& in : inputs) node->inputs.push_back(in.node());
      node->backward_fn = std::move(backward_fn);
    }
  }
  return Var<T>(std::move(node));
}

extern template class Var<float>;
extern template class Var<double>;

}  // namespace ocg::ad

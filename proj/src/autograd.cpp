// SPDX-License-Identifier: Apache-2.0
#include "ocg/autograd.hpp"

#include <sstream>
#include <unordered_set>

namespace ocg {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

}  // namespace ocg

namespace ocg::ad {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
void Var<T>::backward() const {
  if (node_->value.numel() != 1) {
    throw ShapeError("backward() without a seed needs a scalar, got " +
                     shape_str(node_->value.shape()));
  }
  backward(Tensor<T>::ones(node_->value.shape()));
}

template <typename T>
void Var<T>::backward(const Tensor<T>& seed) const {
  if (seed.shape() != node_->value.shape()) {
    throw ShapeError("backward seed shape " + shape_str(seed.shape()) + " != value shape " +
                     shape_str(node_->value.shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->inputs.size()) {
      Node<T>* child = n->inputs[idx++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  Tensor<T>& g = node_->grad_buffer();
  for (int64_t i = 0; i < g.numel(); ++i) g[i] += seed[i];

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  // Interior gradients are only needed during the sweep.
  for (Node<T>* n : order) {
    if (n->backward_fn) n->grad = Tensor<T>();
  }
}

template class Var<float>;
template class Var<double>;

}  // namespace ocg::ad

// SPDX-License-Identifier: Apache-2.0
#include "satswin/autograd.hpp"

#include <unordered_set>

#include "satswin/errors.hpp"

SATSWIN_NAMESPACE_BEGIN

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor& Node::grad_buffer() {
  if (grad.empty() && value.size() > 0) grad = Tensor(value.shape());
  if (grad.shape() != value.shape()) grad = Tensor(value.shape());
  return grad;
}

void Node::accumulate(const Tensor& g) {
  if (g.size() != value.size()) {
    throw ShapeError("gradient of size " + std::to_string(g.size()) + " for value " +
                     to_string(value.shape()));
  }
  if (grad.empty()) {
    grad = Tensor(value.shape(), std::vector<Real>(g.storage()));
    return;
  }
  Real* dst = grad.data();
  const Real* src = g.data();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += src[i];
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Var::grad() const {
  if (!node_->grad.empty()) return node_->grad;
  return Tensor(node_->value.shape());
}

Var Var::record(Tensor value, std::vector<Var> inputs,
                std::function<void(const Tensor&)> backward) {
  bool any = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) any = any || in.requires_grad();
  }
  Var out(std::move(value), any);
  if (any) {
    for (auto& in : inputs) {
      if (in.requires_grad()) out.node_->parents.push_back(in.node_);
    }
    out.node_->backward = std::move(backward);
  }
  return out;
}

void backward(const Var& root) {
  if (!root.requires_grad()) return;
  if (root.value().size() != 1) throw ShapeError("backward() needs a scalar root");

  // Iterative post-order DFS for a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->accumulate(Tensor(root.shape(), Real(1)));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(n->grad);
  }
  // Release interior nodes; leaves (no backward) keep their gradients.
  for (Node* n : order) {
    if (n->backward) {
      n->backward = nullptr;
      n->parents.clear();
      n->grad = Tensor();
    }
  }
}

SATSWIN_NAMESPACE_END

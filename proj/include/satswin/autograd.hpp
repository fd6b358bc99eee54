// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "satswin/tensor.hpp"

SATSWIN_NAMESPACE_BEGIN

// Reverse-mode automatic differentiation on a dynamically recorded tape.
//
// Every differentiable operation returns a Var whose node remembers its inputs
// and a closure that maps the output gradient onto the inputs. Constant inputs
// (requires_grad == false) never record anything, so inference is allocation
// light. backward() walks the graph once in reverse topological order and then
// releases the interior nodes.

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(const Tensor&)> backward;

  void accumulate(const Tensor& g);
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  Var(Tensor value, bool requires_grad = false);  // NOLINT(google-explicit-constructor)

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  bool has_grad() const { return node_ && !node_->grad.empty(); }
  /// Gradient accumulated by backward(); zeros if nothing flowed here.
  Tensor grad() const;
  void zero_grad() const { node_->grad = Tensor(); }
  void accumulate_grad(const Tensor& g) const { node_->accumulate(g); }

  const NodePtr& node() const { return node_; }

  /// Record an operation result. `backward` receives d(loss)/d(value) and must
  /// push gradients into whichever inputs require them.
  static Var record(Tensor value, std::vector<Var> inputs,
                    std::function<void(const Tensor&)> backward);

 private:
  NodePtr node_;
};

/// Seeds d(root)/d(root) = 1 (root must be a scalar) and propagates.
void backward(const Var& root);

/// While alive on a thread, operations record no graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

SATSWIN_NAMESPACE_END

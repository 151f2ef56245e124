#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "umbra/core/tensor.hpp"

namespace umbra::ag {

class Node;
using Var = std::shared_ptr<Node>;

/// One vertex of the reverse-mode tape. Holds the forward value, the
/// accumulated gradient, and a closure that pushes this node's gradient
/// into its parents.
class Node {
 public:
  Tensor value;
  Tensor grad;  // allocated on first use, same shape as value
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backprop;

  explicit Node(Tensor v, bool rg = false) : value(std::move(v)), requires_grad(rg) {}

  Tensor& ensure_grad() {
    if (grad.empty()) grad = Tensor(value.shape());
    return grad;
  }
  void clear_grad() { grad = Tensor(); }
};

/// Thread-local recording switch. When off, ops produce detached values.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline Var constant(Tensor v) { return std::make_shared<Node>(std::move(v)); }

inline Var parameter(Tensor v) { return std::make_shared<Node>(std::move(v), true); }

/// Builds an op node. The backprop closure is only retained while recording
/// and while at least one parent wants gradients.
inline Var make_op(Tensor out, std::vector<Var> parents,
                   std::function<void(Node&)> backprop) {
  bool rg = false;
  if (grad_mode()) {
    for (const Var& p : parents)
      if (p && p->requires_grad) {
        rg = true;
        break;
      }
  }
  auto node = std::make_shared<Node>(std::move(out), rg);
  if (rg) {
    node->parents = std::move(parents);
    node->backprop = std::move(backprop);
  }
  return node;
}

/// Reverse-mode sweep from `root`, seeding its gradient with ones.
/// Gradients accumulate into every reachable node with requires_grad.
inline void backward(const Var& root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  // Iterative post-order DFS; recursion depth on deep graphs is unbounded.
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent && parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  Tensor& g = root->ensure_grad();
  std::fill(g.vec().begin(), g.vec().end(), 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backprop && !node->grad.empty()) node->backprop(*node);
  }
}

/// Drops gradient buffers on the given nodes (typically the parameters).
inline void zero_grad(const std::vector<Var>& vars) {
  for (const Var& v : vars)
    if (v) v->clear_grad();
}

}  // namespace umbra::ag

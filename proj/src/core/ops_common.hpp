#pragma once

#include <cmath>

#include "twins/core/ops.hpp"

namespace twins {

template <typename T>
TensorT<T> make_op_node(Shape shape, std::vector<T> value,
                        std::vector<TensorT<T>> parents,
                        std::function<void(NodeT<T>&)> backward_fn) {
  auto n = std::make_shared<NodeT<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool needs = false;
  if (grad_mode()) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  n->requires_grad = needs;
  if (needs) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(backward_fn);
  }
  return TensorT<T>(std::move(n));
}

template <typename T>
void accumulate_grad(NodeT<T>& parent, const T* g, int64_t n) {
  if (!parent.requires_grad) return;
  parent.ensure_grad();
  T* dst = parent.grad.data();
  for (int64_t i = 0; i < n; ++i) dst[i] += g[i];
}

}  // namespace twins

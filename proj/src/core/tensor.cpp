#include "twins/core/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace twins {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

bool& grad_mode() {
  thread_local bool mode = true;
  return mode;
}

template <typename T>
TensorT<T> TensorT<T>::zeros(Shape shape, bool requires_grad) {
  auto n = std::make_shared<NodeT<T>>();
  n->shape = std::move(shape);
  n->value.assign(size_t(shape_numel(n->shape)), T(0));
  n->requires_grad = requires_grad;
  return TensorT(std::move(n));
}

template <typename T>
TensorT<T> TensorT<T>::full(Shape shape, T v, bool requires_grad) {
  auto t = zeros(std::move(shape), requires_grad);
  for (auto& x : t.vec()) x = v;
  return t;
}

template <typename T>
TensorT<T> TensorT<T>::from_data(Shape shape, std::vector<T> data,
                                 bool requires_grad) {
  if (int64_t(data.size()) != shape_numel(shape))
    throw ContractError("from_data: payload size " +
                        std::to_string(data.size()) + " does not match shape " +
                        shape_str(shape));
  auto n = std::make_shared<NodeT<T>>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  return TensorT(std::move(n));
}

template <typename T>
TensorT<T> TensorT<T>::scalar(T v) {
  return from_data({1}, {v});
}

template <typename T>
T TensorT<T>::item() const {
  if (numel() != 1)
    throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

template <typename T>
void TensorT<T>::backward() const {
  if (numel() != 1)
    throw ContractError("backward() requires a scalar loss, got " +
                        shape_str(shape()));
  // Iterative post-order DFS; graphs unroll K GRU iterations and can be deep.
  std::vector<NodeT<T>*> order;
  std::unordered_set<NodeT<T>*> visited;
  struct Frame {
    NodeT<T>* n;
    size_t next_child;
  };
  std::vector<Frame> stack;
  if (node_->requires_grad) {
    stack.push_back({node_.get(), 0});
    visited.insert(node_.get());
  }
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_child < f.n->parents.size()) {
      NodeT<T>* child = f.n->parents[f.next_child++].get();
      if (child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.push_back({child, 0});
      }
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }
  node_->ensure_grad();
  node_->grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT<T>* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

template <typename T>
TensorT<T> TensorT<T>::detach() const {
  auto n = std::make_shared<NodeT<T>>();
  n->shape = node_->shape;
  n->value = node_->value;
  n->requires_grad = false;
  return TensorT(std::move(n));
}

template <typename T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b,
                      const char* what) {
  if (a.shape() != b.shape())
    throw ContractError(std::string(what) + ": shape mismatch " +
                        shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename T>
bool all_finite(const TensorT<T>& t) {
  for (T v : t.vec())
    if (!std::isfinite(double(v))) return false;
  return true;
}

template class TensorT<float>;
template class TensorT<double>;
template void check_same_shape<float>(const TensorT<float>&,
                                      const TensorT<float>&, const char*);
template void check_same_shape<double>(const TensorT<double>&,
                                       const TensorT<double>&, const char*);
template bool all_finite<float>(const TensorT<float>&);
template bool all_finite<double>(const TensorT<double>&);

}  // namespace twins

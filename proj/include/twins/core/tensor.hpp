#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "twins/core/errors.hpp"

namespace twins {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Thread-local autodiff switch; evaluation paths run with it off and build no
// graph.
bool& grad_mode();

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
};

template <typename T>
struct NodeT {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<NodeT>> parents;
  std::function<void(NodeT&)> backward_fn;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
  }
};

// Reverse-mode autodiff handle. Value semantics on the handle, shared storage
// underneath; ops are pure (no in-place mutation of graph tensors).
template <typename T>
class TensorT {
 public:
  using Scalar = T;

  TensorT() = default;
  explicit TensorT(std::shared_ptr<NodeT<T>> n) : node_(std::move(n)) {}

  static TensorT zeros(Shape shape, bool requires_grad = false);
  static TensorT full(Shape shape, T v, bool requires_grad = false);
  static TensorT from_data(Shape shape, std::vector<T> data,
                           bool requires_grad = false);
  static TensorT scalar(T v);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[size_t(i)]; }
  int rank() const { return int(node_->shape.size()); }
  int64_t numel() const { return int64_t(node_->value.size()); }

  T* data() { return node_->value.data(); }
  const T* data() const { return node_->value.data(); }
  std::vector<T>& vec() { return node_->value; }
  const std::vector<T>& vec() const { return node_->value; }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }

  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<T>& grad() const { return node_->grad; }
  std::vector<T>& grad_mut() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.assign(node_->value.size(), T(0));
  }

  // Runs reverse-mode accumulation from this scalar tensor.
  void backward() const;

  // Same values, no history.
  TensorT detach() const;

  std::shared_ptr<NodeT<T>> node() const { return node_; }

 private:
  std::shared_ptr<NodeT<T>> node_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

// Checks shapes match; throws ContractError naming `what` otherwise.
template <typename T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b,
                      const char* what);

template <typename T>
bool all_finite(const TensorT<T>& t);

}  // namespace twins

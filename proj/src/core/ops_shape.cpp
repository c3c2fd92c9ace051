#include "ops_common.hpp"

namespace twins {

template <typename T>
TensorT<T> reshape(const TensorT<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ContractError("reshape: element count mismatch " +
                        shape_str(x.shape()) + " -> " + shape_str(shape));
  std::vector<T> out(x.vec());
  return make_op_node<T>(std::move(shape), std::move(out), {x},
                         [](NodeT<T>& self) {
                           accumulate_grad(*self.parents[0], self.grad.data(),
                                           int64_t(self.value.size()));
                         });
}

template <typename T>
TensorT<T> concat(const std::vector<TensorT<T>>& xs, int axis) {
  if (xs.empty()) throw ContractError("concat: empty input list");
  const int rank = xs[0].rank();
  if (axis < 0 || axis >= rank) throw ContractError("concat: bad axis");
  Shape out_shape = xs[0].shape();
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= out_shape[size_t(i)];
  for (int i = axis + 1; i < rank; ++i) inner *= out_shape[size_t(i)];
  int total_axis = 0;
  for (const auto& x : xs) {
    if (x.rank() != rank) throw ContractError("concat: rank mismatch");
    for (int i = 0; i < rank; ++i)
      if (i != axis && x.dim(i) != out_shape[size_t(i)])
        throw ContractError("concat: non-axis dim mismatch");
    total_axis += x.dim(axis);
  }
  out_shape[size_t(axis)] = total_axis;
  std::vector<T> out(size_t(outer * total_axis * inner));
  std::vector<int> axis_sizes;
  int64_t off = 0;
  for (const auto& x : xs) {
    const int na = x.dim(axis);
    axis_sizes.push_back(na);
    for (int64_t o = 0; o < outer; ++o) {
      const T* src = x.data() + o * na * inner;
      T* dst = out.data() + o * total_axis * inner + off * inner;
      std::copy(src, src + na * inner, dst);
    }
    off += na;
  }
  std::vector<TensorT<T>> parents(xs.begin(), xs.end());
  auto bwd = [outer, inner, total_axis, axis_sizes](NodeT<T>& self) {
    int64_t off = 0;
    for (size_t pi = 0; pi < self.parents.size(); ++pi) {
      auto& p = *self.parents[pi];
      const int na = axis_sizes[pi];
      if (p.requires_grad) {
        p.ensure_grad();
        for (int64_t o = 0; o < outer; ++o) {
          const T* src = self.grad.data() + o * total_axis * inner + off * inner;
          T* dst = p.grad.data() + o * na * inner;
          for (int64_t i = 0; i < na * inner; ++i) dst[i] += src[i];
        }
      }
      off += na;
    }
  };
  return make_op_node<T>(std::move(out_shape), std::move(out),
                         std::move(parents), std::move(bwd));
}

template <typename T>
TensorT<T> slice(const TensorT<T>& x, int axis, int start, int len) {
  const int rank = x.rank();
  if (axis < 0 || axis >= rank) throw ContractError("slice: bad axis");
  if (start < 0 || len <= 0 || start + len > x.dim(axis))
    throw ContractError("slice: out of range");
  Shape out_shape = x.shape();
  out_shape[size_t(axis)] = len;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < rank; ++i) inner *= x.dim(i);
  const int na = x.dim(axis);
  std::vector<T> out(size_t(outer * len * inner));
  for (int64_t o = 0; o < outer; ++o) {
    const T* src = x.data() + (o * na + start) * inner;
    std::copy(src, src + int64_t(len) * inner, out.data() + o * len * inner);
  }
  return make_op_node<T>(
      std::move(out_shape), std::move(out), {x},
      [outer, inner, na, start, len](NodeT<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (int64_t o = 0; o < outer; ++o) {
          const T* src = self.grad.data() + o * len * inner;
          T* dst = p.grad.data() + (o * na + start) * inner;
          for (int64_t i = 0; i < int64_t(len) * inner; ++i) dst[i] += src[i];
        }
      });
}

#define TWINS_INSTANTIATE_SHAPE(T)                                     \
  template TensorT<T> reshape(const TensorT<T>&, Shape);               \
  template TensorT<T> concat(const std::vector<TensorT<T>>&, int);     \
  template TensorT<T> slice(const TensorT<T>&, int, int, int);

TWINS_INSTANTIATE_SHAPE(float)
TWINS_INSTANTIATE_SHAPE(double)

}  // namespace twins

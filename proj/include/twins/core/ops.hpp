#pragma once

#include <vector>

#include "twins/core/tensor.hpp"

namespace twins {

// Building block for custom ops: wraps a computed value into a graph node.
// `backward_fn` sees the result node; parents' values are reachable through
// node.parents. Graph edges are only recorded when grad_mode() is on and some
// parent requires grad.
template <typename T>
TensorT<T> make_op_node(Shape shape, std::vector<T> value,
                        std::vector<TensorT<T>> parents,
                        std::function<void(NodeT<T>&)> backward_fn);

template <typename T>
void accumulate_grad(NodeT<T>& parent, const T* g, int64_t n);

// ---- elementwise (ops_elementwise.cpp) ----
template <typename T> TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> div(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> add_scalar(const TensorT<T>& a, T s);
template <typename T> TensorT<T> mul_scalar(const TensorT<T>& a, T s);
template <typename T> TensorT<T> neg(const TensorT<T>& a);
template <typename T> TensorT<T> relu(const TensorT<T>& a);
template <typename T> TensorT<T> elu(const TensorT<T>& a);  // alpha = 1
template <typename T> TensorT<T> gelu(const TensorT<T>& a);
template <typename T> TensorT<T> tanh_op(const TensorT<T>& a);
template <typename T> TensorT<T> sigmoid(const TensorT<T>& a);
template <typename T> TensorT<T> exp_op(const TensorT<T>& a);
template <typename T> TensorT<T> log_op(const TensorT<T>& a);
template <typename T> TensorT<T> abs_op(const TensorT<T>& a);
template <typename T> TensorT<T> square(const TensorT<T>& a);
template <typename T> TensorT<T> sqrt_op(const TensorT<T>& a);
template <typename T> TensorT<T> clamp(const TensorT<T>& a, T lo, T hi);

// ---- reductions / broadcasts (ops_elementwise.cpp) ----
template <typename T> TensorT<T> sum_all(const TensorT<T>& a);
template <typename T> TensorT<T> mean_all(const TensorT<T>& a);
// x viewed as (rows, cols); sums over rows -> (cols)
template <typename T> TensorT<T> sum_axis0(const TensorT<T>& x);
// x (rows, cols); axis 0: divisor/multiplier indexed by row, 1: by column
template <typename T>
TensorT<T> div_bcast(const TensorT<T>& x, const TensorT<T>& v, int axis);
template <typename T>
TensorT<T> mul_bcast(const TensorT<T>& x, const TensorT<T>& v, int axis);

// ---- linear algebra (ops_linalg.cpp) ----
template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> transpose2d(const TensorT<T>& a);
// x (Cin,H,W), w (Cout, Cin/groups, kh, kw), optional bias (Cout)
template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                  int stride, int pad, int groups = 1);
template <typename T>
TensorT<T> softmax(const TensorT<T>& x, int axis);
// x (C,H,W): per-group normalization over (C/groups)*H*W, affine gamma/beta (C)
template <typename T>
TensorT<T> group_norm(const TensorT<T>& x, int groups, const TensorT<T>& gamma,
                      const TensorT<T>& beta, T eps);
// x (N,C): per-row RMS over channels, scale gamma (C)
template <typename T>
TensorT<T> rms_norm(const TensorT<T>& x, const TensorT<T>& gamma, T eps);
template <typename T>
TensorT<T> add_bias_rows(const TensorT<T>& x, const TensorT<T>& b);

// ---- shape (ops_shape.cpp) ----
template <typename T>
TensorT<T> reshape(const TensorT<T>& x, Shape shape);
template <typename T>
TensorT<T> concat(const std::vector<TensorT<T>>& xs, int axis);
template <typename T>
TensorT<T> slice(const TensorT<T>& x, int axis, int start, int len);

// ---- image-domain (ops_image.cpp) ----
// Pool over the last 1 or 2 dims by factor 2 (average).
template <typename T>
TensorT<T> avg_pool_last(const TensorT<T>& x, int ndims);
// x (C,H,W) -> (C,Hn,Wn), half-pixel-center sampling, clamped borders.
template <typename T>
TensorT<T> bilinear_resize(const TensorT<T>& x, int hn, int wn);
// field (C,Hc,Wc), weights (9, s*s, Hc, Wc) convex per output pixel;
// output (C, Hc*s, Wc*s), values multiplied by value_scale.
template <typename T>
TensorT<T> upsample_weighted(const TensorT<T>& field, const TensorT<T>& weights,
                             int s, T value_scale);

// Operator sugar for same-shape arithmetic.
template <typename T>
inline TensorT<T> operator+(const TensorT<T>& a, const TensorT<T>& b) {
  return add(a, b);
}
template <typename T>
inline TensorT<T> operator-(const TensorT<T>& a, const TensorT<T>& b) {
  return sub(a, b);
}
template <typename T>
inline TensorT<T> operator*(const TensorT<T>& a, const TensorT<T>& b) {
  return mul(a, b);
}

}  // namespace twins

#include "ops_common.hpp"
#include "twins/core/kernels.hpp"

namespace twins {
namespace {

// Unary op scaffold: fwd(x) fills out; dfdx(x, y) gives local derivative.
template <typename T, typename Fwd, typename Bwd>
TensorT<T> unary_op(const TensorT<T>& a, Fwd fwd, Bwd dfdx) {
  const int64_t n = a.numel();
  std::vector<T> out(static_cast<size_t>(n));
  const T* x = a.data();
  for (int64_t i = 0; i < n; ++i) out[i] = fwd(x[i]);
  return make_op_node<T>(a.shape(), std::move(out), {a},
                         [dfdx](NodeT<T>& self) {
                           auto& p = *self.parents[0];
                           if (!p.requires_grad) return;
                           p.ensure_grad();
                           const int64_t m = int64_t(self.value.size());
                           for (int64_t i = 0; i < m; ++i)
                             p.grad[i] += self.grad[i] *
                                          dfdx(p.value[i], self.value[i]);
                         });
}

}  // namespace

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  check_same_shape(a, b, "add");
  const int64_t n = a.numel();
  std::vector<T> out(static_cast<size_t>(n));
  if constexpr (std::is_same_v<T, float>) {
    kernels::ops().vadd(n, a.data(), b.data(), out.data());
  } else {
    for (int64_t i = 0; i < n; ++i) out[i] = a.data()[i] + b.data()[i];
  }
  return make_op_node<T>(a.shape(), std::move(out), {a, b}, [](NodeT<T>& self) {
    const int64_t m = int64_t(self.value.size());
    accumulate_grad(*self.parents[0], self.grad.data(), m);
    accumulate_grad(*self.parents[1], self.grad.data(), m);
  });
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  check_same_shape(a, b, "sub");
  const int64_t n = a.numel();
  std::vector<T> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) out[i] = a.data()[i] - b.data()[i];
  return make_op_node<T>(a.shape(), std::move(out), {a, b}, [](NodeT<T>& self) {
    const int64_t m = int64_t(self.value.size());
    accumulate_grad(*self.parents[0], self.grad.data(), m);
    auto& pb = *self.parents[1];
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (int64_t i = 0; i < m; ++i) pb.grad[i] -= self.grad[i];
    }
  });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  check_same_shape(a, b, "mul");
  const int64_t n = a.numel();
  std::vector<T> out(static_cast<size_t>(n));
  if constexpr (std::is_same_v<T, float>) {
    kernels::ops().vmul(n, a.data(), b.data(), out.data());
  } else {
    for (int64_t i = 0; i < n; ++i) out[i] = a.data()[i] * b.data()[i];
  }
  return make_op_node<T>(a.shape(), std::move(out), {a, b}, [](NodeT<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const int64_t m = int64_t(self.value.size());
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (int64_t i = 0; i < m; ++i) pa.grad[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (int64_t i = 0; i < m; ++i) pb.grad[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <typename T>
TensorT<T> div(const TensorT<T>& a, const TensorT<T>& b) {
  check_same_shape(a, b, "div");
  const int64_t n = a.numel();
  std::vector<T> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) out[i] = a.data()[i] / b.data()[i];
  return make_op_node<T>(a.shape(), std::move(out), {a, b}, [](NodeT<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const int64_t m = int64_t(self.value.size());
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (int64_t i = 0; i < m; ++i) pa.grad[i] += self.grad[i] / pb.value[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (int64_t i = 0; i < m; ++i)
        pb.grad[i] -= self.grad[i] * self.value[i] / pb.value[i];
    }
  });
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& a, T s) {
  return unary_op(
      a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
TensorT<T> mul_scalar(const TensorT<T>& a, T s) {
  return unary_op(
      a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
TensorT<T> neg(const TensorT<T>& a) {
  return mul_scalar(a, T(-1));
}

template <typename T>
TensorT<T> relu(const TensorT<T>& a) {
  const int64_t n = a.numel();
  std::vector<T> out(static_cast<size_t>(n));
  if constexpr (std::is_same_v<T, float>) {
    kernels::ops().vrelu(n, a.data(), out.data());
  } else {
    for (int64_t i = 0; i < n; ++i)
      out[i] = a.data()[i] > T(0) ? a.data()[i] : T(0);
  }
  return make_op_node<T>(a.shape(), std::move(out), {a}, [](NodeT<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    const int64_t m = int64_t(self.value.size());
    if constexpr (std::is_same_v<T, float>) {
      kernels::ops().vrelu_bwd(m, p.value.data(), self.grad.data(),
                               p.grad.data());
    } else {
      for (int64_t i = 0; i < m; ++i)
        if (p.value[i] > T(0)) p.grad[i] += self.grad[i];
    }
  });
}

template <typename T>
TensorT<T> elu(const TensorT<T>& a) {
  return unary_op(
      a, [](T x) { return x > T(0) ? x : T(std::expm1(double(x))); },
      [](T x, T y) { return x > T(0) ? T(1) : y + T(1); });
}

template <typename T>
TensorT<T> gelu(const TensorT<T>& a) {
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014327;
  return unary_op(
      a,
      [](T x) {
        return T(0.5 * double(x) * (1.0 + std::erf(double(x) * kInvSqrt2)));
      },
      [](T x, T) {
        const double xd = double(x);
        const double cdf = 0.5 * (1.0 + std::erf(xd * kInvSqrt2));
        return T(cdf + xd * kInvSqrt2Pi * std::exp(-0.5 * xd * xd));
      });
}

template <typename T>
TensorT<T> tanh_op(const TensorT<T>& a) {
  return unary_op(
      a, [](T x) { return T(std::tanh(double(x))); },
      [](T, T y) { return T(1) - y * y; });
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& a) {
  return unary_op(
      a, [](T x) { return T(1) / (T(1) + T(std::exp(-double(x)))); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
TensorT<T> exp_op(const TensorT<T>& a) {
  return unary_op(
      a, [](T x) { return T(std::exp(double(x))); },
      [](T, T y) { return y; });
}

template <typename T>
TensorT<T> log_op(const TensorT<T>& a) {
  return unary_op(
      a, [](T x) { return T(std::log(double(x))); },
      [](T x, T) { return T(1) / x; });
}

template <typename T>
TensorT<T> abs_op(const TensorT<T>& a) {
  return unary_op(
      a, [](T x) { return x < T(0) ? -x : x; },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
TensorT<T> square(const TensorT<T>& a) {
  return unary_op(
      a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
TensorT<T> sqrt_op(const TensorT<T>& a) {
  return unary_op(
      a, [](T x) { return T(std::sqrt(double(x))); },
      [](T, T y) { return T(0.5) / y; });
}

template <typename T>
TensorT<T> clamp(const TensorT<T>& a, T lo, T hi) {
  return unary_op(
      a, [lo, hi](T x) { return x < lo ? lo : (x > hi ? hi : x); },
      [lo, hi](T x, T) { return (x > lo && x < hi) ? T(1) : T(0); });
}

template <typename T>
TensorT<T> sum_all(const TensorT<T>& a) {
  const int64_t n = a.numel();
  T acc;
  if constexpr (std::is_same_v<T, float>) {
    acc = kernels::ops().sum(n, a.data());
  } else {
    acc = T(0);
    for (int64_t i = 0; i < n; ++i) acc += a.data()[i];
  }
  return make_op_node<T>({1}, {acc}, {a}, [](NodeT<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    const T g = self.grad[0];
    for (auto& gi : p.grad) gi += g;
  });
}

template <typename T>
TensorT<T> mean_all(const TensorT<T>& a) {
  return mul_scalar(sum_all(a), T(1) / T(a.numel()));
}

template <typename T>
TensorT<T> sum_axis0(const TensorT<T>& x) {
  if (x.rank() != 2) throw ContractError("sum_axis0 expects rank-2 input");
  const int rows = x.dim(0), cols = x.dim(1);
  std::vector<T> out(size_t(cols), T(0));
  for (int r = 0; r < rows; ++r) {
    const T* src = x.data() + int64_t(r) * cols;
    for (int c = 0; c < cols; ++c) out[c] += src[c];
  }
  return make_op_node<T>({cols}, std::move(out), {x}, [rows, cols](NodeT<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (int r = 0; r < rows; ++r) {
      T* dst = p.grad.data() + int64_t(r) * cols;
      for (int c = 0; c < cols; ++c) dst[c] += self.grad[c];
    }
  });
}

namespace {

template <typename T, bool IsDiv>
TensorT<T> bcast_impl(const TensorT<T>& x, const TensorT<T>& v, int axis) {
  if (x.rank() != 2) throw ContractError("bcast op expects rank-2 input");
  const int rows = x.dim(0), cols = x.dim(1);
  const int want = axis == 0 ? rows : cols;
  if (v.numel() != want)
    throw ContractError("bcast op: vector length mismatch");
  std::vector<T> out(size_t(x.numel()));
  const T* xd = x.data();
  const T* vd = v.data();
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const T vv = vd[axis == 0 ? r : c];
      out[size_t(r) * cols + c] =
          IsDiv ? xd[size_t(r) * cols + c] / vv : xd[size_t(r) * cols + c] * vv;
    }
  return make_op_node<T>(
      x.shape(), std::move(out), {x, v}, [rows, cols, axis](NodeT<T>& self) {
        auto& px = *self.parents[0];
        auto& pv = *self.parents[1];
        const T* vd = pv.value.data();
        if (px.requires_grad) {
          px.ensure_grad();
          for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) {
              const T vv = vd[axis == 0 ? r : c];
              const int64_t i = int64_t(r) * cols + c;
              px.grad[i] += IsDiv ? self.grad[i] / vv : self.grad[i] * vv;
            }
        }
        if (pv.requires_grad) {
          pv.ensure_grad();
          const T* xd = px.value.data();
          for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) {
              const int vi = axis == 0 ? r : c;
              const int64_t i = int64_t(r) * cols + c;
              if (IsDiv)
                pv.grad[vi] -= self.grad[i] * xd[i] / (vd[vi] * vd[vi]);
              else
                pv.grad[vi] += self.grad[i] * xd[i];
            }
        }
      });
}

}  // namespace

template <typename T>
TensorT<T> div_bcast(const TensorT<T>& x, const TensorT<T>& v, int axis) {
  return bcast_impl<T, true>(x, v, axis);
}

template <typename T>
TensorT<T> mul_bcast(const TensorT<T>& x, const TensorT<T>& v, int axis) {
  return bcast_impl<T, false>(x, v, axis);
}

#define TWINS_INSTANTIATE_ELEMENTWISE(T)                              \
  template TensorT<T> add(const TensorT<T>&, const TensorT<T>&);      \
  template TensorT<T> sub(const TensorT<T>&, const TensorT<T>&);      \
  template TensorT<T> mul(const TensorT<T>&, const TensorT<T>&);      \
  template TensorT<T> div(const TensorT<T>&, const TensorT<T>&);      \
  template TensorT<T> add_scalar(const TensorT<T>&, T);               \
  template TensorT<T> mul_scalar(const TensorT<T>&, T);               \
  template TensorT<T> neg(const TensorT<T>&);                         \
  template TensorT<T> relu(const TensorT<T>&);                        \
  template TensorT<T> elu(const TensorT<T>&);                         \
  template TensorT<T> gelu(const TensorT<T>&);                        \
  template TensorT<T> tanh_op(const TensorT<T>&);                     \
  template TensorT<T> sigmoid(const TensorT<T>&);                     \
  template TensorT<T> exp_op(const TensorT<T>&);                      \
  template TensorT<T> log_op(const TensorT<T>&);                      \
  template TensorT<T> abs_op(const TensorT<T>&);                      \
  template TensorT<T> square(const TensorT<T>&);                      \
  template TensorT<T> sqrt_op(const TensorT<T>&);                     \
  template TensorT<T> clamp(const TensorT<T>&, T, T);                 \
  template TensorT<T> sum_all(const TensorT<T>&);                     \
  template TensorT<T> mean_all(const TensorT<T>&);                    \
  template TensorT<T> sum_axis0(const TensorT<T>&);                   \
  template TensorT<T> div_bcast(const TensorT<T>&, const TensorT<T>&, \
                                int);                                 \
  template TensorT<T> mul_bcast(const TensorT<T>&, const TensorT<T>&, int);

TWINS_INSTANTIATE_ELEMENTWISE(float)
TWINS_INSTANTIATE_ELEMENTWISE(double)

}  // namespace twins

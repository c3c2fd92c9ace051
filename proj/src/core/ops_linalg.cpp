#include <algorithm>
#include <cmath>

#include "ops_common.hpp"
#include "twins/core/kernels.hpp"

namespace twins {
namespace {

template <typename T>
void gemm(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c,
          int ldc, bool accumulate) {
  if constexpr (std::is_same_v<T, float>) {
    kernels::ops().sgemm(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
  } else {
    kernels::dgemm(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
  }
}

template <typename T>
std::vector<T> transpose_buf(const T* x, int rows, int cols) {
  std::vector<T> out(size_t(rows) * cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out[size_t(c) * rows + r] = x[size_t(r) * cols + c];
  return out;
}

struct ConvGeom {
  int cin, h, w, cout, kh, kw, stride, pad, groups;
  int ho, wo, cing, coutg, patch;
  int64_t no;
};

ConvGeom conv_geom(const Shape& xs, const Shape& ws, int stride, int pad,
                   int groups) {
  ConvGeom g;
  g.cin = xs[0];
  g.h = xs[1];
  g.w = xs[2];
  g.cout = ws[0];
  g.kh = ws[2];
  g.kw = ws[3];
  g.stride = stride;
  g.pad = pad;
  g.groups = groups;
  if (g.cin % groups != 0 || g.cout % groups != 0)
    throw ConfigError("conv2d: channels not divisible by groups");
  if (ws[1] != g.cin / groups)
    throw ContractError("conv2d: weight in-channels mismatch");
  g.ho = (g.h + 2 * pad - g.kh) / stride + 1;
  g.wo = (g.w + 2 * pad - g.kw) / stride + 1;
  if (g.ho <= 0 || g.wo <= 0) throw ContractError("conv2d: empty output");
  g.cing = g.cin / groups;
  g.coutg = g.cout / groups;
  g.patch = g.cing * g.kh * g.kw;
  g.no = int64_t(g.ho) * g.wo;
  return g;
}

// col is (patch x no) for the channel block starting at c0.
template <typename T>
void im2col(const T* x, const ConvGeom& g, int c0, T* col) {
  for (int ci = 0; ci < g.cing; ++ci) {
    const T* xc = x + int64_t(c0 + ci) * g.h * g.w;
    for (int ky = 0; ky < g.kh; ++ky)
      for (int kx = 0; kx < g.kw; ++kx) {
        T* row = col + (int64_t(ci) * g.kh * g.kw + ky * g.kw + kx) * g.no;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride + ky - g.pad;
          T* dst = row + int64_t(oy) * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, T(0));
            continue;
          }
          const T* src = xc + int64_t(iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride + kx - g.pad;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
          }
        }
      }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeom& g, int c0, T* gx) {
  for (int ci = 0; ci < g.cing; ++ci) {
    T* xc = gx + int64_t(c0 + ci) * g.h * g.w;
    for (int ky = 0; ky < g.kh; ++ky)
      for (int kx = 0; kx < g.kw; ++kx) {
        const T* row = col + (int64_t(ci) * g.kh * g.kw + ky * g.kw + kx) * g.no;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride + ky - g.pad;
          if (iy < 0 || iy >= g.h) continue;
          const T* src = row + int64_t(oy) * g.wo;
          T* dst = xc + int64_t(iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride + kx - g.pad;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
  }
}

}  // namespace

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ContractError("matmul expects rank-2 tensors");
  if (a.dim(1) != b.dim(0))
    throw ContractError("matmul: inner dims differ: " + shape_str(a.shape()) +
                        " vs " + shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(size_t(m) * n);
  gemm(m, n, k, a.data(), k, b.data(), n, out.data(), n, false);
  return make_op_node<T>({m, n}, std::move(out), {a, b},
                         [m, k, n](NodeT<T>& self) {
                           auto& pa = *self.parents[0];
                           auto& pb = *self.parents[1];
                           if (pa.requires_grad) {
                             pa.ensure_grad();
                             auto bt = transpose_buf(pb.value.data(), k, n);
                             gemm<T>(m, k, n, self.grad.data(), n, bt.data(), k,
                                     pa.grad.data(), k, true);
                           }
                           if (pb.requires_grad) {
                             pb.ensure_grad();
                             auto at = transpose_buf(pa.value.data(), m, k);
                             gemm<T>(k, n, m, at.data(), m, self.grad.data(), n,
                                     pb.grad.data(), n, true);
                           }
                         });
}

template <typename T>
TensorT<T> transpose2d(const TensorT<T>& a) {
  if (a.rank() != 2) throw ContractError("transpose2d expects rank-2 tensor");
  const int m = a.dim(0), n = a.dim(1);
  auto out = transpose_buf(a.data(), m, n);
  return make_op_node<T>({n, m}, std::move(out), {a}, [m, n](NodeT<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < m; ++c)
        p.grad[size_t(c) * n + r] += self.grad[size_t(r) * m + c];
  });
}

template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                  int stride, int pad, int groups) {
  if (x.rank() != 3 || w.rank() != 4)
    throw ContractError("conv2d expects x (C,H,W), w (Co,Ci/g,kh,kw)");
  const ConvGeom g = conv_geom(x.shape(), w.shape(), stride, pad, groups);
  const bool has_bias = b.defined();
  if (has_bias && b.numel() != g.cout)
    throw ContractError("conv2d: bias length mismatch");

  std::vector<T> out(size_t(g.cout) * g.no);
  const bool pointwise =
      g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0;
  std::vector<T> col;
  if (!pointwise) col.resize(size_t(g.patch) * g.no);
  for (int gi = 0; gi < g.groups; ++gi) {
    const T* colp;
    if (pointwise) {
      colp = x.data() + int64_t(gi) * g.cing * g.no;
    } else {
      im2col(x.data(), g, gi * g.cing, col.data());
      colp = col.data();
    }
    gemm<T>(g.coutg, int(g.no), g.patch,
            w.data() + int64_t(gi) * g.coutg * g.patch, g.patch, colp,
            int(g.no), out.data() + int64_t(gi) * g.coutg * g.no, int(g.no),
            false);
  }
  if (has_bias) {
    for (int co = 0; co < g.cout; ++co) {
      const T bv = b.data()[co];
      T* dst = out.data() + int64_t(co) * g.no;
      for (int64_t i = 0; i < g.no; ++i) dst[i] += bv;
    }
  }

  std::vector<TensorT<T>> parents = {x, w};
  if (has_bias) parents.push_back(b);
  auto bwd = [g, has_bias, pointwise](NodeT<T>& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    std::vector<T> col, dcol;
    if (!pointwise && (pw.requires_grad || px.requires_grad))
      col.resize(size_t(g.patch) * g.no);
    if (px.requires_grad) {
      px.ensure_grad();
      if (!pointwise) dcol.resize(size_t(g.patch) * g.no);
    }
    if (pw.requires_grad) pw.ensure_grad();
    for (int gi = 0; gi < g.groups; ++gi) {
      const T* gout = self.grad.data() + int64_t(gi) * g.coutg * g.no;
      if (pw.requires_grad) {
        // dW = dOut * col^T, done as per-row dots via gemm on transposed col
        const T* colp;
        if (pointwise) {
          colp = px.value.data() + int64_t(gi) * g.cing * g.no;
        } else {
          im2col(px.value.data(), g, gi * g.cing, col.data());
          colp = col.data();
        }
        auto colt = transpose_buf(colp, g.patch, int(g.no));
        gemm<T>(g.coutg, g.patch, int(g.no), gout, int(g.no), colt.data(),
                g.patch, pw.grad.data() + int64_t(gi) * g.coutg * g.patch,
                g.patch, true);
      }
      if (px.requires_grad) {
        auto wt = transpose_buf(pw.value.data() + int64_t(gi) * g.coutg * g.patch,
                                g.coutg, g.patch);
        if (pointwise) {
          gemm<T>(g.patch, int(g.no), g.coutg, wt.data(), g.coutg, gout,
                  int(g.no), px.grad.data() + int64_t(gi) * g.cing * g.no,
                  int(g.no), true);
        } else {
          gemm<T>(g.patch, int(g.no), g.coutg, wt.data(), g.coutg, gout,
                  int(g.no), dcol.data(), int(g.no), false);
          col2im_add(dcol.data(), g, gi * g.cing, px.grad.data());
        }
      }
    }
    if (has_bias) {
      auto& pb = *self.parents[2];
      if (pb.requires_grad) {
        pb.ensure_grad();
        for (int co = 0; co < g.cout; ++co) {
          T acc = T(0);
          const T* src = self.grad.data() + int64_t(co) * g.no;
          for (int64_t i = 0; i < g.no; ++i) acc += src[i];
          pb.grad[co] += acc;
        }
      }
    }
  };
  return make_op_node<T>({g.cout, g.ho, g.wo}, std::move(out),
                         std::move(parents), std::move(bwd));
}

template <typename T>
TensorT<T> softmax(const TensorT<T>& x, int axis) {
  if (axis < 0 || axis >= x.rank()) throw ContractError("softmax: bad axis");
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  const int n = x.dim(axis);
  for (int i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  std::vector<T> out(size_t(x.numel()));
  const T* xd = x.data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * n * inner + in;
      T mx = xd[base];
      for (int i = 1; i < n; ++i) mx = std::max(mx, xd[base + i * inner]);
      T sum = T(0);
      for (int i = 0; i < n; ++i) {
        const T e = T(std::exp(double(xd[base + i * inner] - mx)));
        out[size_t(base + i * inner)] = e;
        sum += e;
      }
      const T inv = T(1) / sum;
      for (int i = 0; i < n; ++i) out[size_t(base + i * inner)] *= inv;
    }
  return make_op_node<T>(
      x.shape(), std::move(out), {x}, [outer, n, inner](NodeT<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const T* y = self.value.data();
        const T* gy = self.grad.data();
        for (int64_t o = 0; o < outer; ++o)
          for (int64_t in = 0; in < inner; ++in) {
            const int64_t base = o * n * inner + in;
            T dot = T(0);
            for (int i = 0; i < n; ++i)
              dot += gy[base + i * inner] * y[base + i * inner];
            for (int i = 0; i < n; ++i) {
              const int64_t idx = base + i * inner;
              p.grad[idx] += y[idx] * (gy[idx] - dot);
            }
          }
      });
}

template <typename T>
TensorT<T> group_norm(const TensorT<T>& x, int groups, const TensorT<T>& gamma,
                      const TensorT<T>& beta, T eps) {
  if (x.rank() != 3) throw ContractError("group_norm expects (C,H,W)");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (c % groups != 0)
    throw ConfigError("group_norm: groups must divide channels");
  if (gamma.numel() != c || beta.numel() != c)
    throw ContractError("group_norm: affine parameter length mismatch");
  const int cg = c / groups;
  const int64_t hw = int64_t(h) * w;
  const int64_t m = cg * hw;
  std::vector<T> out(size_t(x.numel()));
  std::vector<T> mean(groups), inv_std(groups);
  const T* xd = x.data();
  for (int g = 0; g < groups; ++g) {
    const T* xg = xd + int64_t(g) * m;
    T mu = T(0);
    for (int64_t i = 0; i < m; ++i) mu += xg[i];
    mu /= T(m);
    T var = T(0);
    for (int64_t i = 0; i < m; ++i) {
      const T d = xg[i] - mu;
      var += d * d;
    }
    var /= T(m);
    mean[g] = mu;
    inv_std[g] = T(1) / T(std::sqrt(double(var + eps)));
  }
  const T* gm = gamma.data();
  const T* bt = beta.data();
  for (int ci = 0; ci < c; ++ci) {
    const int g = ci / cg;
    const T a = gm[ci] * inv_std[g];
    const T b0 = bt[ci] - mean[g] * a;
    const T* src = xd + int64_t(ci) * hw;
    T* dst = out.data() + int64_t(ci) * hw;
    for (int64_t i = 0; i < hw; ++i) dst[i] = a * src[i] + b0;
  }
  auto bwd = [groups, cg, hw, m, mean, inv_std](NodeT<T>& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    auto& pb = *self.parents[2];
    const T* xd = px.value.data();
    const T* gy = self.grad.data();
    const T* gm = pg.value.data();
    const int c = groups * cg;
    if (pg.requires_grad || pb.requires_grad) {
      if (pg.requires_grad) pg.ensure_grad();
      if (pb.requires_grad) pb.ensure_grad();
      for (int ci = 0; ci < c; ++ci) {
        const int g = ci / cg;
        T dg = T(0), db = T(0);
        const T* src = xd + int64_t(ci) * hw;
        const T* gyy = gy + int64_t(ci) * hw;
        for (int64_t i = 0; i < hw; ++i) {
          const T xhat = (src[i] - mean[g]) * inv_std[g];
          dg += gyy[i] * xhat;
          db += gyy[i];
        }
        if (pg.requires_grad) pg.grad[ci] += dg;
        if (pb.requires_grad) pb.grad[ci] += db;
      }
    }
    if (px.requires_grad) {
      px.ensure_grad();
      for (int g = 0; g < groups; ++g) {
        const T* xg = xd + int64_t(g) * m;
        const T* gyg = gy + int64_t(g) * m;
        // dxhat = gy * gamma_c; two reductions then the layer-norm formula
        T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
        for (int64_t i = 0; i < m; ++i) {
          const int ci = g * cg + int(i / hw);
          const T xhat = (xg[i] - mean[g]) * inv_std[g];
          const T dxhat = gyg[i] * gm[ci];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
        }
        const T inv_m = T(1) / T(m);
        T* gxg = px.grad.data() + int64_t(g) * m;
        for (int64_t i = 0; i < m; ++i) {
          const int ci = g * cg + int(i / hw);
          const T xhat = (xg[i] - mean[g]) * inv_std[g];
          const T dxhat = gyg[i] * gm[ci];
          gxg[i] += inv_std[g] *
                    (dxhat - inv_m * sum_dxhat - xhat * inv_m * sum_dxhat_xhat);
        }
      }
    }
  };
  return make_op_node<T>(x.shape(), std::move(out), {x, gamma, beta},
                         std::move(bwd));
}

template <typename T>
TensorT<T> rms_norm(const TensorT<T>& x, const TensorT<T>& gamma, T eps) {
  if (x.rank() != 2) throw ContractError("rms_norm expects (N,C)");
  const int n = x.dim(0), c = x.dim(1);
  if (gamma.numel() != c) throw ContractError("rms_norm: gamma length mismatch");
  std::vector<T> out(size_t(x.numel()));
  std::vector<T> inv_r(static_cast<size_t>(n));
  const T* xd = x.data();
  const T* gm = gamma.data();
  for (int r = 0; r < n; ++r) {
    const T* row = xd + int64_t(r) * c;
    T ms = T(0);
    for (int i = 0; i < c; ++i) ms += row[i] * row[i];
    ms = ms / T(c) + eps;
    const T inv = T(1) / T(std::sqrt(double(ms)));
    inv_r[size_t(r)] = inv;
    T* dst = out.data() + int64_t(r) * c;
    for (int i = 0; i < c; ++i) dst[i] = gm[i] * row[i] * inv;
  }
  auto bwd = [n, c, inv_r](NodeT<T>& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    const T* xd = px.value.data();
    const T* gy = self.grad.data();
    const T* gm = pg.value.data();
    if (pg.requires_grad) {
      pg.ensure_grad();
      for (int r = 0; r < n; ++r) {
        const T inv = inv_r[size_t(r)];
        const T* row = xd + int64_t(r) * c;
        const T* gyy = gy + int64_t(r) * c;
        for (int i = 0; i < c; ++i) pg.grad[i] += gyy[i] * row[i] * inv;
      }
    }
    if (px.requires_grad) {
      px.ensure_grad();
      for (int r = 0; r < n; ++r) {
        const T inv = inv_r[size_t(r)];
        const T* row = xd + int64_t(r) * c;
        const T* gyy = gy + int64_t(r) * c;
        T dot = T(0);
        for (int i = 0; i < c; ++i) dot += gyy[i] * gm[i] * row[i];
        const T k = dot * inv * inv * inv / T(c);
        T* gx = px.grad.data() + int64_t(r) * c;
        for (int i = 0; i < c; ++i) gx[i] += gyy[i] * gm[i] * inv - row[i] * k;
      }
    }
  };
  return make_op_node<T>(x.shape(), std::move(out), {x, gamma}, std::move(bwd));
}

template <typename T>
TensorT<T> add_bias_rows(const TensorT<T>& x, const TensorT<T>& b) {
  if (x.rank() != 2) throw ContractError("add_bias_rows expects (N,C)");
  const int n = x.dim(0), c = x.dim(1);
  if (b.numel() != c) throw ContractError("add_bias_rows: bias length mismatch");
  std::vector<T> out(size_t(x.numel()));
  for (int r = 0; r < n; ++r)
    for (int i = 0; i < c; ++i)
      out[size_t(r) * c + i] = x.data()[size_t(r) * c + i] + b.data()[i];
  return make_op_node<T>(x.shape(), std::move(out), {x, b},
                         [n, c](NodeT<T>& self) {
                           auto& px = *self.parents[0];
                           auto& pb = *self.parents[1];
                           accumulate_grad(px, self.grad.data(),
                                           int64_t(n) * c);
                           if (pb.requires_grad) {
                             pb.ensure_grad();
                             for (int r = 0; r < n; ++r)
                               for (int i = 0; i < c; ++i)
                                 pb.grad[i] += self.grad[size_t(r) * c + i];
                           }
                         });
}

#define TWINS_INSTANTIATE_LINALG(T)                                          \
  template TensorT<T> matmul(const TensorT<T>&, const TensorT<T>&);          \
  template TensorT<T> transpose2d(const TensorT<T>&);                        \
  template TensorT<T> conv2d(const TensorT<T>&, const TensorT<T>&,           \
                             const TensorT<T>&, int, int, int);              \
  template TensorT<T> softmax(const TensorT<T>&, int);                       \
  template TensorT<T> group_norm(const TensorT<T>&, int, const TensorT<T>&,  \
                                 const TensorT<T>&, T);                      \
  template TensorT<T> rms_norm(const TensorT<T>&, const TensorT<T>&, T);     \
  template TensorT<T> add_bias_rows(const TensorT<T>&, const TensorT<T>&);

TWINS_INSTANTIATE_LINALG(float)
TWINS_INSTANTIATE_LINALG(double)

}  // namespace twins

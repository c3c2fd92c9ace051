#include <algorithm>
#include <cmath>

#include "ops_common.hpp"

namespace twins {

template <typename T>
TensorT<T> avg_pool_last(const TensorT<T>& x, int ndims) {
  const int rank = x.rank();
  if (ndims != 1 && ndims != 2) throw ContractError("avg_pool_last: ndims");
  if (rank < ndims) throw ContractError("avg_pool_last: rank too small");
  Shape out_shape = x.shape();
  if (ndims == 1) {
    const int w = x.dim(rank - 1);
    if (w % 2 != 0) throw ContractError("avg_pool_last: odd width");
    out_shape[size_t(rank - 1)] = w / 2;
    const int64_t outer = x.numel() / w;
    std::vector<T> out(size_t(outer) * (w / 2));
    for (int64_t o = 0; o < outer; ++o) {
      const T* src = x.data() + o * w;
      T* dst = out.data() + o * (w / 2);
      for (int j = 0; j < w / 2; ++j)
        dst[j] = (src[2 * j] + src[2 * j + 1]) * T(0.5);
    }
    return make_op_node<T>(std::move(out_shape), std::move(out), {x},
                           [outer, w](NodeT<T>& self) {
                             auto& p = *self.parents[0];
                             if (!p.requires_grad) return;
                             p.ensure_grad();
                             for (int64_t o = 0; o < outer; ++o) {
                               const T* g = self.grad.data() + o * (w / 2);
                               T* dst = p.grad.data() + o * w;
                               for (int j = 0; j < w / 2; ++j) {
                                 const T hv = g[j] * T(0.5);
                                 dst[2 * j] += hv;
                                 dst[2 * j + 1] += hv;
                               }
                             }
                           });
  }
  const int h = x.dim(rank - 2), w = x.dim(rank - 1);
  if (h % 2 != 0 || w % 2 != 0) throw ContractError("avg_pool_last: odd dims");
  out_shape[size_t(rank - 2)] = h / 2;
  out_shape[size_t(rank - 1)] = w / 2;
  const int64_t outer = x.numel() / (int64_t(h) * w);
  std::vector<T> out(size_t(outer) * (h / 2) * (w / 2));
  for (int64_t o = 0; o < outer; ++o) {
    const T* src = x.data() + o * h * w;
    T* dst = out.data() + o * (h / 2) * (w / 2);
    for (int i = 0; i < h / 2; ++i)
      for (int j = 0; j < w / 2; ++j)
        dst[i * (w / 2) + j] =
            (src[(2 * i) * w + 2 * j] + src[(2 * i) * w + 2 * j + 1] +
             src[(2 * i + 1) * w + 2 * j] + src[(2 * i + 1) * w + 2 * j + 1]) *
            T(0.25);
  }
  return make_op_node<T>(std::move(out_shape), std::move(out), {x},
                         [outer, h, w](NodeT<T>& self) {
                           auto& p = *self.parents[0];
                           if (!p.requires_grad) return;
                           p.ensure_grad();
                           for (int64_t o = 0; o < outer; ++o) {
                             const T* g =
                                 self.grad.data() + o * (h / 2) * (w / 2);
                             T* dst = p.grad.data() + o * h * w;
                             for (int i = 0; i < h / 2; ++i)
                               for (int j = 0; j < w / 2; ++j) {
                                 const T qv = g[i * (w / 2) + j] * T(0.25);
                                 dst[(2 * i) * w + 2 * j] += qv;
                                 dst[(2 * i) * w + 2 * j + 1] += qv;
                                 dst[(2 * i + 1) * w + 2 * j] += qv;
                                 dst[(2 * i + 1) * w + 2 * j + 1] += qv;
                               }
                           }
                         });
}

namespace {

struct LerpAxis {
  int i0, i1;
  double f;  // weight of i1
};

inline LerpAxis lerp_axis(int dst, int src_size, double scale) {
  // Half-pixel-center mapping, clamped; identity when scale == 1.
  double s = (double(dst) + 0.5) * scale - 0.5;
  if (s < 0.0) s = 0.0;
  const double hi = double(src_size - 1);
  if (s > hi) s = hi;
  const int i0 = int(s);
  const int i1 = std::min(i0 + 1, src_size - 1);
  return {i0, i1, s - double(i0)};
}

}  // namespace

template <typename T>
TensorT<T> bilinear_resize(const TensorT<T>& x, int hn, int wn) {
  if (x.rank() != 3) throw ContractError("bilinear_resize expects (C,H,W)");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (hn <= 0 || wn <= 0) throw ContractError("bilinear_resize: bad size");
  if (hn == h && wn == w) {
    // Exact passthrough keeps "resize is identity" bit-exact.
    std::vector<T> out(x.vec());
    return make_op_node<T>(x.shape(), std::move(out), {x}, [](NodeT<T>& self) {
      accumulate_grad(*self.parents[0], self.grad.data(),
                      int64_t(self.value.size()));
    });
  }
  const double sy = double(h) / double(hn);
  const double sx = double(w) / double(wn);
  std::vector<LerpAxis> ys(static_cast<size_t>(hn)), xs(static_cast<size_t>(wn));
  for (int i = 0; i < hn; ++i) ys[size_t(i)] = lerp_axis(i, h, sy);
  for (int j = 0; j < wn; ++j) xs[size_t(j)] = lerp_axis(j, w, sx);
  std::vector<T> out(size_t(c) * hn * wn);
  for (int ci = 0; ci < c; ++ci) {
    const T* src = x.data() + int64_t(ci) * h * w;
    T* dst = out.data() + int64_t(ci) * hn * wn;
    for (int i = 0; i < hn; ++i) {
      const auto& ay = ys[size_t(i)];
      for (int j = 0; j < wn; ++j) {
        const auto& ax = xs[size_t(j)];
        const double v00 = double(src[ay.i0 * w + ax.i0]);
        const double v01 = double(src[ay.i0 * w + ax.i1]);
        const double v10 = double(src[ay.i1 * w + ax.i0]);
        const double v11 = double(src[ay.i1 * w + ax.i1]);
        const double top = v00 + (v01 - v00) * ax.f;
        const double bot = v10 + (v11 - v10) * ax.f;
        dst[i * wn + j] = T(top + (bot - top) * ay.f);
      }
    }
  }
  auto bwd = [c, h, w, hn, wn, ys, xs](NodeT<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (int ci = 0; ci < c; ++ci) {
      T* gx = p.grad.data() + int64_t(ci) * h * w;
      const T* gy = self.grad.data() + int64_t(ci) * hn * wn;
      for (int i = 0; i < hn; ++i) {
        const auto& ay = ys[size_t(i)];
        for (int j = 0; j < wn; ++j) {
          const auto& ax = xs[size_t(j)];
          const T g = gy[i * wn + j];
          const T fy = T(ay.f), fx = T(ax.f);
          gx[ay.i0 * w + ax.i0] += g * (T(1) - fy) * (T(1) - fx);
          gx[ay.i0 * w + ax.i1] += g * (T(1) - fy) * fx;
          gx[ay.i1 * w + ax.i0] += g * fy * (T(1) - fx);
          gx[ay.i1 * w + ax.i1] += g * fy * fx;
        }
      }
    }
  };
  return make_op_node<T>({c, hn, wn}, std::move(out), {x}, std::move(bwd));
}

template <typename T>
TensorT<T> upsample_weighted(const TensorT<T>& field, const TensorT<T>& weights,
                             int s, T value_scale) {
  if (field.rank() != 3) throw ContractError("upsample_weighted: field rank");
  if (weights.rank() != 4 || weights.dim(0) != 9 ||
      weights.dim(1) != s * s || weights.dim(2) != field.dim(1) ||
      weights.dim(3) != field.dim(2))
    throw ContractError("upsample_weighted: weights shape");
  const int c = field.dim(0), hc = field.dim(1), wc = field.dim(2);
  const int ho = hc * s, wo = wc * s;
  std::vector<T> out(size_t(c) * ho * wo, T(0));
  const T* fd = field.data();
  const T* wd = weights.data();
  const int64_t whw = int64_t(hc) * wc;
  for (int ci = 0; ci < c; ++ci) {
    const T* fc = fd + int64_t(ci) * whw;
    T* oc = out.data() + int64_t(ci) * ho * wo;
    for (int y = 0; y < hc; ++y)
      for (int x = 0; x < wc; ++x)
        for (int dy = 0; dy < s; ++dy)
          for (int dx = 0; dx < s; ++dx) {
            T acc = T(0);
            for (int n = 0; n < 9; ++n) {
              const int ny = y + n / 3 - 1, nx = x + n % 3 - 1;
              if (ny < 0 || ny >= hc || nx < 0 || nx >= wc) continue;
              acc += wd[((int64_t(n) * s * s + dy * s + dx) * hc + y) * wc + x] *
                     fc[ny * wc + nx];
            }
            oc[(y * s + dy) * wo + (x * s + dx)] = acc * value_scale;
          }
  }
  auto bwd = [c, hc, wc, s, value_scale](NodeT<T>& self) {
    auto& pf = *self.parents[0];
    auto& pw = *self.parents[1];
    const int ho = hc * s, wo = wc * s;
    const int64_t whw = int64_t(hc) * wc;
    if (pf.requires_grad) pf.ensure_grad();
    if (pw.requires_grad) pw.ensure_grad();
    const T* fd = pf.value.data();
    const T* wd = pw.value.data();
    for (int ci = 0; ci < c; ++ci) {
      const T* fc = fd + int64_t(ci) * whw;
      const T* gc = self.grad.data() + int64_t(ci) * ho * wo;
      T* gfc = pf.requires_grad ? pf.grad.data() + int64_t(ci) * whw : nullptr;
      for (int y = 0; y < hc; ++y)
        for (int x = 0; x < wc; ++x)
          for (int dy = 0; dy < s; ++dy)
            for (int dx = 0; dx < s; ++dx) {
              const T g = gc[(y * s + dy) * wo + (x * s + dx)] * value_scale;
              if (g == T(0)) continue;
              for (int n = 0; n < 9; ++n) {
                const int ny = y + n / 3 - 1, nx = x + n % 3 - 1;
                if (ny < 0 || ny >= hc || nx < 0 || nx >= wc) continue;
                const int64_t wi =
                    ((int64_t(n) * s * s + dy * s + dx) * hc + y) * wc + x;
                if (gfc) gfc[ny * wc + nx] += g * wd[wi];
                if (pw.requires_grad) pw.grad[wi] += g * fc[ny * wc + nx];
              }
            }
    }
  };
  return make_op_node<T>({c, ho, wo}, std::move(out), {field, weights},
                         std::move(bwd));
}

#define TWINS_INSTANTIATE_IMAGE(T)                                       \
  template TensorT<T> avg_pool_last(const TensorT<T>&, int);             \
  template TensorT<T> bilinear_resize(const TensorT<T>&, int, int);      \
  template TensorT<T> upsample_weighted(const TensorT<T>&,               \
                                        const TensorT<T>&, int, T);

TWINS_INSTANTIATE_IMAGE(float)
TWINS_INSTANTIATE_IMAGE(double)

}  // namespace twins

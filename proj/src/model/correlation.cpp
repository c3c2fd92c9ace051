#include "twins/model/correlation.hpp"

#include <cmath>
#include <cstring>

#include "../core/ops_common.hpp"
#include "twins/core/kernels.hpp"

namespace twins {
namespace {

template <typename T>
void gemm(int m, int n, int k, const T* a, const T* b, T* c, bool acc) {
  if constexpr (std::is_same_v<T, float>)
    kernels::ops().sgemm(m, n, k, a, k, b, n, c, n, acc);
  else
    kernels::dgemm(m, n, k, a, k, b, n, c, n, acc);
}

struct Sample1D {
  int i0, i1;
  double f;
};

inline Sample1D clamp_sample(double p, int size) {
  if (p < 0.0) p = 0.0;
  if (p > double(size - 1)) p = double(size - 1);
  const int i0 = int(p);
  return {i0, i0 + 1 < size ? i0 + 1 : size - 1, p - double(i0)};
}

}  // namespace

template <typename T>
TensorT<T> build_volume(const TensorT<T>& f_t, const TensorT<T>& f_s,
                        CorrMode mode) {
  if (f_t.rank() != 3 || f_s.rank() != 3)
    throw ContractError("build_volume expects (C,H,W) features");
  if (f_t.shape() != f_s.shape())
    throw ContractError("build_volume: feature shapes differ: " +
                        shape_str(f_t.shape()) + " vs " +
                        shape_str(f_s.shape()));
  const int c = f_t.dim(0), h = f_t.dim(1), w = f_t.dim(2);
  const int64_t hw = int64_t(h) * w;

  if (mode == CorrMode::kStereo) {
    // Row-restricted: V[y, wt, ws] = <Ft[:,y,wt], Fs[:,y,ws]>.
    std::vector<T> out(size_t(h) * w * w);
    std::vector<T> tt(size_t(w) * c), bs(size_t(c) * w);
    for (int y = 0; y < h; ++y) {
      for (int ci = 0; ci < c; ++ci) {
        const T* trow = f_t.data() + ci * hw + int64_t(y) * w;
        const T* srow = f_s.data() + ci * hw + int64_t(y) * w;
        std::memcpy(&bs[size_t(ci) * w], srow, sizeof(T) * size_t(w));
        for (int x = 0; x < w; ++x) tt[size_t(x) * c + ci] = trow[x];
      }
      gemm<T>(w, w, c, tt.data(), bs.data(), out.data() + int64_t(y) * w * w,
              false);
    }
    auto bwd = [c, h, w, hw](NodeT<T>& self) {
      auto& pt = *self.parents[0];
      auto& ps = *self.parents[1];
      if (pt.requires_grad) pt.ensure_grad();
      if (ps.requires_grad) ps.ensure_grad();
      std::vector<T> tt(size_t(w) * c), bs(size_t(c) * w), ts(size_t(w) * c),
          bt(size_t(c) * w), buf(size_t(w) * c), bufc(size_t(c) * w);
      for (int y = 0; y < h; ++y) {
        const T* g = self.grad.data() + int64_t(y) * w * w;
        for (int ci = 0; ci < c; ++ci) {
          const T* trow = pt.value.data() + ci * hw + int64_t(y) * w;
          const T* srow = ps.value.data() + ci * hw + int64_t(y) * w;
          std::memcpy(&bt[size_t(ci) * w], trow, sizeof(T) * size_t(w));
          std::memcpy(&bs[size_t(ci) * w], srow, sizeof(T) * size_t(w));
          for (int x = 0; x < w; ++x) {
            tt[size_t(x) * c + ci] = trow[x];
            ts[size_t(x) * c + ci] = srow[x];
          }
        }
        if (pt.requires_grad) {
          // dTt (w,c) = G (w,w) * Ts (w,c)
          gemm<T>(w, c, w, g, ts.data(), buf.data(), false);
          for (int x = 0; x < w; ++x)
            for (int ci = 0; ci < c; ++ci)
              pt.grad[size_t(ci) * hw + size_t(y) * w + x] +=
                  buf[size_t(x) * c + ci];
        }
        if (ps.requires_grad) {
          // dBs (c,w) = Bt (c,w) * G ... dFs[ci,ws] = sum_wt G[wt,ws]*Ft[ci,wt]
          gemm<T>(c, w, w, bt.data(), g, bufc.data(), false);
          for (int ci = 0; ci < c; ++ci)
            for (int x = 0; x < w; ++x)
              ps.grad[size_t(ci) * hw + size_t(y) * w + x] +=
                  bufc[size_t(ci) * w + x];
        }
      }
    };
    return make_op_node<T>({h, w, w}, std::move(out), {f_t, f_s},
                           std::move(bwd));
  }

  // Flow: dense all-pairs over flattened tokens.
  const int n = int(hw);
  std::vector<T> tt(size_t(n) * c);
  for (int ci = 0; ci < c; ++ci)
    for (int p = 0; p < n; ++p) tt[size_t(p) * c + ci] = f_t.data()[ci * hw + p];
  std::vector<T> out(size_t(n) * n);
  gemm<T>(n, n, c, tt.data(), f_s.data(), out.data(), false);
  auto bwd = [c, h, w, hw, n](NodeT<T>& self) {
    auto& pt = *self.parents[0];
    auto& ps = *self.parents[1];
    if (pt.requires_grad) {
      pt.ensure_grad();
      // dFt[ci,p] = sum_q G[p,q] * Fs[ci,q] -> (c,n) = Fs (c,n) * G^T; do
      // per-token dot instead: dTt (n,c) = G (n,n) * Ts (n,c)
      std::vector<T> ts(size_t(n) * c), buf(size_t(n) * c);
      for (int ci = 0; ci < c; ++ci)
        for (int p = 0; p < n; ++p)
          ts[size_t(p) * c + ci] = ps.value.data()[ci * hw + p];
      gemm<T>(n, c, n, self.grad.data(), ts.data(), buf.data(), false);
      for (int p = 0; p < n; ++p)
        for (int ci = 0; ci < c; ++ci)
          pt.grad[size_t(ci) * hw + p] += buf[size_t(p) * c + ci];
    }
    if (ps.requires_grad) {
      ps.ensure_grad();
      // dFs (c,n) = Ft (c,n) * G (n,n)
      std::vector<T> buf(size_t(c) * n);
      gemm<T>(c, n, n, pt.value.data(), self.grad.data(), buf.data(), false);
      for (int64_t i = 0; i < int64_t(c) * n; ++i) ps.grad[size_t(i)] += buf[size_t(i)];
    }
  };
  return make_op_node<T>({h, w, h, w}, std::move(out), {f_t, f_s},
                         std::move(bwd));
}

template <typename T>
CorrelationPyramidT<T> build_pyramid(const TensorT<T>& volume, CorrMode mode,
                                     int num_levels) {
  CorrelationPyramidT<T> pyr;
  pyr.mode = mode;
  if (mode == CorrMode::kStereo) {
    if (volume.rank() != 3) throw ContractError("stereo volume must be rank 3");
    pyr.base_h = volume.dim(0);
    pyr.base_w = volume.dim(1);
  } else {
    if (volume.rank() != 4) throw ContractError("flow volume must be rank 4");
    pyr.base_h = volume.dim(0);
    pyr.base_w = volume.dim(1);
  }
  pyr.levels.push_back(volume);
  for (int l = 1; l < num_levels; ++l)
    pyr.levels.push_back(
        avg_pool_last(pyr.levels.back(), mode == CorrMode::kStereo ? 1 : 2));
  return pyr;
}

template <typename T>
TensorT<T> corr_lookup(const CorrelationPyramidT<T>& pyr,
                       const TensorT<T>& field, int radius) {
  const int h = pyr.base_h, w = pyr.base_w;
  if (field.rank() != 3 || field.dim(0) != 2 || field.dim(1) != h ||
      field.dim(2) != w)
    throw ContractError("corr_lookup: field must be (2," + std::to_string(h) +
                        "," + std::to_string(w) + ")");
  const int levels = int(pyr.levels.size());
  const int win = 2 * radius + 1;
  const bool stereo = pyr.mode == CorrMode::kStereo;
  const int per_level = stereo ? win : win * win;
  const int cout = levels * per_level;
  const int64_t hw = int64_t(h) * w;
  std::vector<T> out(size_t(cout) * hw);
  const T* u = field.data();
  const T* v = field.data() + hw;

  for (int l = 0; l < levels; ++l) {
    const auto& vol = pyr.levels[size_t(l)];
    const T* vd = vol.data();
    const double scale = double(1 << l);
    if (stereo) {
      const int ws = vol.dim(2);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double cx = (double(x) - double(u[y * w + x])) / scale;
          const T* row = vd + (int64_t(y) * w + x) * ws;
          for (int k = -radius; k <= radius; ++k) {
            const auto s = clamp_sample(cx + double(k), ws);
            const T val = T((1.0 - s.f) * double(row[s.i0]) +
                            s.f * double(row[s.i1]));
            out[size_t(l * win + k + radius) * hw + size_t(y) * w + x] = val;
          }
        }
    } else {
      const int hs = vol.dim(2), ws = vol.dim(3);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double cx = (double(x) + double(u[y * w + x])) / scale;
          const double cy = (double(y) + double(v[y * w + x])) / scale;
          const T* cell = vd + (int64_t(y) * w + x) * hs * ws;
          for (int ky = -radius; ky <= radius; ++ky)
            for (int kx = -radius; kx <= radius; ++kx) {
              const auto sy = clamp_sample(cy + double(ky), hs);
              const auto sx = clamp_sample(cx + double(kx), ws);
              const double v00 = double(cell[sy.i0 * ws + sx.i0]);
              const double v01 = double(cell[sy.i0 * ws + sx.i1]);
              const double v10 = double(cell[sy.i1 * ws + sx.i0]);
              const double v11 = double(cell[sy.i1 * ws + sx.i1]);
              const double top = v00 + (v01 - v00) * sx.f;
              const double bot = v10 + (v11 - v10) * sx.f;
              const int ch = l * per_level + (ky + radius) * win + kx + radius;
              out[size_t(ch) * hw + size_t(y) * w + x] =
                  T(top + (bot - top) * sy.f);
            }
        }
    }
  }

  // Keep a value-only copy of the field for the backward scatter.
  std::vector<T> fu(u, u + hw), fv(v, v + hw);
  std::vector<TensorT<T>> parents(pyr.levels.begin(), pyr.levels.end());
  auto bwd = [h, w, hw, levels, win, stereo, per_level, radius, fu,
              fv](NodeT<T>& self) {
    for (int l = 0; l < levels; ++l) {
      auto& pl = *self.parents[size_t(l)];
      if (!pl.requires_grad) continue;
      pl.ensure_grad();
      const double scale = double(1 << l);
      if (stereo) {
        const int ws = pl.shape[2];
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            const double cx = (double(x) - double(fu[size_t(y) * w + x])) / scale;
            T* row = pl.grad.data() + (int64_t(y) * w + x) * ws;
            for (int k = -radius; k <= radius; ++k) {
              const auto s = clamp_sample(cx + double(k), ws);
              const T g =
                  self.grad[size_t(l * win + k + radius) * hw + size_t(y) * w + x];
              row[s.i0] += g * T(1.0 - s.f);
              row[s.i1] += g * T(s.f);
            }
          }
      } else {
        const int hs = pl.shape[2], ws = pl.shape[3];
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            const double cx = (double(x) + double(fu[size_t(y) * w + x])) / scale;
            const double cy = (double(y) + double(fv[size_t(y) * w + x])) / scale;
            T* cell = pl.grad.data() + (int64_t(y) * w + x) * hs * ws;
            for (int ky = -radius; ky <= radius; ++ky)
              for (int kx = -radius; kx <= radius; ++kx) {
                const auto sy = clamp_sample(cy + double(ky), hs);
                const auto sx = clamp_sample(cx + double(kx), ws);
                const int ch =
                    l * per_level + (ky + radius) * win + kx + radius;
                const T g = self.grad[size_t(ch) * hw + size_t(y) * w + x];
                cell[sy.i0 * ws + sx.i0] += g * T((1.0 - sy.f) * (1.0 - sx.f));
                cell[sy.i0 * ws + sx.i1] += g * T((1.0 - sy.f) * sx.f);
                cell[sy.i1 * ws + sx.i0] += g * T(sy.f * (1.0 - sx.f));
                cell[sy.i1 * ws + sx.i1] += g * T(sy.f * sx.f);
              }
          }
      }
    }
  };
  return make_op_node<T>({cout, h, w}, std::move(out), std::move(parents),
                         std::move(bwd));
}

#define TWINS_INSTANTIATE_CORR(T)                                           \
  template TensorT<T> build_volume(const TensorT<T>&, const TensorT<T>&,    \
                                   CorrMode);                               \
  template CorrelationPyramidT<T> build_pyramid(const TensorT<T>&, CorrMode, \
                                                int);                       \
  template TensorT<T> corr_lookup(const CorrelationPyramidT<T>&,            \
                                  const TensorT<T>&, int);

TWINS_INSTANTIATE_CORR(float)
TWINS_INSTANTIATE_CORR(double)

}  // namespace twins

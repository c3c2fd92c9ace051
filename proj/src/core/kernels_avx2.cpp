#include <immintrin.h>

#include "twins/core/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace twins::kernels {
namespace {

// 6x16 register-blocked FMA microkernel, broadcast-A / load-B. Row-major
// operands, no packing; desk-scale matrices (K up to a few thousand) keep B
// rows hot enough that packing is not worth the complexity.
template <bool Accumulate>
void kernel_6x16(int kc, const float* a, int lda, const float* b, int ldb,
                 float* c, int ldc, int mr) {
  __m256 acc[6][2];
  for (int i = 0; i < mr; ++i) {
    if (Accumulate) {
      acc[i][0] = _mm256_loadu_ps(c + int64_t(i) * ldc);
      acc[i][1] = _mm256_loadu_ps(c + int64_t(i) * ldc + 8);
    } else {
      acc[i][0] = _mm256_setzero_ps();
      acc[i][1] = _mm256_setzero_ps();
    }
  }
  for (int p = 0; p < kc; ++p) {
    const float* brow = b + int64_t(p) * ldb;
    const __m256 b0 = _mm256_loadu_ps(brow);
    const __m256 b1 = _mm256_loadu_ps(brow + 8);
    for (int i = 0; i < mr; ++i) {
      const __m256 av = _mm256_set1_ps(a[int64_t(i) * lda + p]);
      acc[i][0] = _mm256_fmadd_ps(av, b0, acc[i][0]);
      acc[i][1] = _mm256_fmadd_ps(av, b1, acc[i][1]);
    }
  }
  for (int i = 0; i < mr; ++i) {
    _mm256_storeu_ps(c + int64_t(i) * ldc, acc[i][0]);
    _mm256_storeu_ps(c + int64_t(i) * ldc + 8, acc[i][1]);
  }
}

template <bool Accumulate>
void kernel_rows_tail(int kc, int nr, const float* a, int lda, const float* b,
                      int ldb, float* c, int ldc, int mr) {
  for (int i = 0; i < mr; ++i) {
    float* crow = c + int64_t(i) * ldc;
    const float* arow = a + int64_t(i) * lda;
    for (int j = 0; j < nr; ++j) {
      float accv = Accumulate ? crow[j] : 0.0f;
      for (int p = 0; p < kc; ++p) accv += arow[p] * b[int64_t(p) * ldb + j];
      crow[j] = accv;
    }
  }
}

void sgemm_rows(int i0, int i1, int n, int k, const float* a, int lda,
                const float* b, int ldb, float* c, int ldc, bool accumulate) {
  const int n16 = n - (n % 16);
  for (int i = i0; i < i1; i += 6) {
    const int mr = (i1 - i) < 6 ? (i1 - i) : 6;
    const float* ablk = a + int64_t(i) * lda;
    float* cblk = c + int64_t(i) * ldc;
    for (int j = 0; j < n16; j += 16) {
      if (accumulate)
        kernel_6x16<true>(k, ablk, lda, b + j, ldb, cblk + j, ldc, mr);
      else
        kernel_6x16<false>(k, ablk, lda, b + j, ldb, cblk + j, ldc, mr);
    }
    if (n16 < n) {
      if (accumulate)
        kernel_rows_tail<true>(k, n - n16, ablk, lda, b + n16, ldb, cblk + n16,
                               ldc, mr);
      else
        kernel_rows_tail<false>(k, n - n16, ablk, lda, b + n16, ldb,
                                cblk + n16, ldc, mr);
    }
  }
}

void sgemm_avx2(int m, int n, int k, const float* a, int lda, const float* b,
                int ldb, float* c, int ldc, bool accumulate) {
#ifdef _OPENMP
  if (double(m) * double(n) * double(k) > 262144.0 && m >= 12) {
#pragma omp parallel
    {
      const int nth = omp_get_num_threads();
      const int tid = omp_get_thread_num();
      // Split on row blocks of 6 so each thread owns whole microkernel rows.
      const int blocks = (m + 5) / 6;
      const int per = (blocks + nth - 1) / nth;
      const int bi0 = tid * per, bi1 = (tid + 1) * per;
      const int i0 = bi0 * 6 < m ? bi0 * 6 : m;
      const int i1 = bi1 * 6 < m ? bi1 * 6 : m;
      if (i0 < i1) sgemm_rows(i0, i1, n, k, a, lda, b, ldb, c, ldc, accumulate);
    }
    return;
  }
#endif
  sgemm_rows(0, m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  lo = _mm_hadd_ps(lo, lo);
  lo = _mm_hadd_ps(lo, lo);
  return _mm_cvtss_f32(lo);
}

void saxpy_avx2(int64_t n, float alpha, const float* x, float* y) {
  const __m256 av = _mm256_set1_ps(alpha);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 yv = _mm256_loadu_ps(y + i);
    yv = _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), yv);
    _mm256_storeu_ps(y + i, yv);
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void sscale_avx2(int64_t n, float alpha, float* x) {
  const __m256 av = _mm256_set1_ps(alpha);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(x + i, _mm256_mul_ps(av, _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) x[i] *= alpha;
}

void vadd_avx2(int64_t n, const float* a, const float* b, float* out) {
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(
        out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void vmul_avx2(int64_t n, const float* a, const float* b, float* out) {
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(
        out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

float dot_avx2(int64_t n, const float* a, const float* b) {
  __m256 acc = _mm256_setzero_ps();
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    acc = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc);
  float r = hsum(acc);
  for (; i < n; ++i) r += a[i] * b[i];
  return r;
}

float sum_avx2(int64_t n, const float* x) {
  __m256 acc = _mm256_setzero_ps();
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
  float r = hsum(acc);
  for (; i < n; ++i) r += x[i];
  return r;
}

void vrelu_avx2(int64_t n, const float* x, float* out) {
  const __m256 zero = _mm256_setzero_ps();
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_max_ps(zero, _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void vrelu_bwd_avx2(int64_t n, const float* x, const float* gy, float* gx) {
  const __m256 zero = _mm256_setzero_ps();
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(x + i), zero, _CMP_GT_OQ);
    const __m256 add = _mm256_and_ps(mask, _mm256_loadu_ps(gy + i));
    _mm256_storeu_ps(gx + i, _mm256_add_ps(_mm256_loadu_ps(gx + i), add));
  }
  for (; i < n; ++i) {
    if (x[i] > 0.0f) gx[i] += gy[i];
  }
}

}  // namespace

const Ops& avx2_ops() {
  static const Ops table = {sgemm_avx2, saxpy_avx2, sscale_avx2,
                            vadd_avx2,  vmul_avx2,  dot_avx2,
                            sum_avx2,   vrelu_avx2, vrelu_bwd_avx2,
                            "avx2"};
  return table;
}

}  // namespace twins::kernels

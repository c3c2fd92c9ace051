#include "twins/core/kernels.hpp"

namespace twins::kernels {
namespace {

void sgemm_scalar(int m, int n, int k, const float* a, int lda, const float* b,
                  int ldb, float* c, int ldc, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    float* crow = c + int64_t(i) * ldc;
    if (!accumulate) {
      for (int j = 0; j < n; ++j) crow[j] = 0.0f;
    }
    const float* arow = a + int64_t(i) * lda;
    for (int p = 0; p < k; ++p) {
      const float av = arow[p];
      if (av == 0.0f) continue;
      const float* brow = b + int64_t(p) * ldb;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void saxpy_scalar(int64_t n, float alpha, const float* x, float* y) {
  for (int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void sscale_scalar(int64_t n, float alpha, float* x) {
  for (int64_t i = 0; i < n; ++i) x[i] *= alpha;
}

void vadd_scalar(int64_t n, const float* a, const float* b, float* out) {
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void vmul_scalar(int64_t n, const float* a, const float* b, float* out) {
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

float dot_scalar(int64_t n, const float* a, const float* b) {
  float acc = 0.0f;
  for (int64_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

float sum_scalar(int64_t n, const float* x) {
  float acc = 0.0f;
  for (int64_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

void vrelu_scalar(int64_t n, const float* x, float* out) {
  for (int64_t i = 0; i < n; ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void vrelu_bwd_scalar(int64_t n, const float* x, const float* gy, float* gx) {
  for (int64_t i = 0; i < n; ++i) {
    if (x[i] > 0.0f) gx[i] += gy[i];
  }
}

}  // namespace

const Ops& scalar_ops() {
  static const Ops table = {
      sgemm_scalar, saxpy_scalar, sscale_scalar, vadd_scalar, vmul_scalar,
      dot_scalar,   sum_scalar,   vrelu_scalar,  vrelu_bwd_scalar, "scalar"};
  return table;
}

void dgemm(int m, int n, int k, const double* a, int lda, const double* b,
           int ldb, double* c, int ldc, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    double* crow = c + int64_t(i) * ldc;
    if (!accumulate) {
      for (int j = 0; j < n; ++j) crow[j] = 0.0;
    }
    const double* arow = a + int64_t(i) * lda;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + int64_t(p) * ldb;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace twins::kernels

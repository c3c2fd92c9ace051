#pragma once

#include <cstdint>

namespace twins::kernels {

// Hot inner loops exist as a scalar reference implementation and, on x86,
// an AVX2+FMA variant. The active table is chosen once at startup from CPU
// features; TWINS_SIMD=scalar|avx2 overrides it (tests use this to compare
// backends on identical inputs).
struct Ops {
  // C (MxN) = A (MxK) * B (KxN), all row-major. accumulate: C += A*B.
  void (*sgemm)(int m, int n, int k, const float* a, int lda, const float* b,
                int ldb, float* c, int ldc, bool accumulate);
  void (*saxpy)(int64_t n, float alpha, const float* x, float* y);
  void (*sscale)(int64_t n, float alpha, float* x);
  void (*vadd)(int64_t n, const float* a, const float* b, float* out);
  void (*vmul)(int64_t n, const float* a, const float* b, float* out);
  float (*dot)(int64_t n, const float* a, const float* b);
  float (*sum)(int64_t n, const float* x);
  void (*vrelu)(int64_t n, const float* x, float* out);
  // gx += gy where x > 0
  void (*vrelu_bwd)(int64_t n, const float* x, const float* gy, float* gx);
  const char* name;
};

const Ops& scalar_ops();
#ifdef TWINS_HAVE_AVX2_TU
const Ops& avx2_ops();
#endif

// Dispatched table (CPU detection + TWINS_SIMD override, resolved once).
const Ops& ops();
const char* active_backend();

// Double-precision GEMM used by the float64 gradient-check path. Scalar only;
// the inputs there are tiny.
void dgemm(int m, int n, int k, const double* a, int lda, const double* b,
           int ldb, double* c, int ldc, bool accumulate);

}  // namespace twins::kernels

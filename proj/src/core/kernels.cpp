#include "twins/core/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace twins::kernels {
namespace {

const Ops* resolve() {
  const char* env = std::getenv("TWINS_SIMD");
  if (env && std::strcmp(env, "scalar") == 0) return &scalar_ops();
#ifdef TWINS_HAVE_AVX2_TU
  if (env && std::strcmp(env, "avx2") == 0) return &avx2_ops();
  if (!env && __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma"))
    return &avx2_ops();
#endif
  return &scalar_ops();
}

}  // namespace

const Ops& ops() {
  static const Ops* active = resolve();
  return *active;
}

const char* active_backend() { return ops().name; }

}  // namespace twins::kernels

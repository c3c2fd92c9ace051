#include <doctest.h>

#include <cmath>
#include <string>
#include <tuple>
#include <vector>

#include "twins/core/kernels.hpp"
#include "twins/core/rng.hpp"

using namespace twins;

namespace {

std::vector<float> random_vec(size_t n, Rng& rng) {
  std::vector<float> v(n);
  for (auto& x : v) x = float(rng.normal());
  return v;
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::fabs(double(a[i]) - double(b[i])));
  return m;
}

}  // namespace

#ifdef TWINS_HAVE_AVX2_TU
TEST_CASE("kernels: avx2 matches scalar reference") {
  if (!__builtin_cpu_supports("avx2") || !__builtin_cpu_supports("fma")) {
    MESSAGE("AVX2 unavailable on this host, skipping equivalence checks");
    return;
  }
  const auto& s = kernels::scalar_ops();
  const auto& v = kernels::avx2_ops();
  Rng rng(99);

  // Sizes straddle the 6x16 microkernel tiles and exercise the tails.
  for (auto [m, n, k] : {std::tuple{1, 1, 1}, std::tuple{6, 16, 8},
                         std::tuple{7, 17, 5}, std::tuple{13, 40, 33},
                         std::tuple{48, 96, 120}}) {
    auto a = random_vec(size_t(m) * k, rng);
    auto b = random_vec(size_t(k) * n, rng);
    auto c0 = random_vec(size_t(m) * n, rng);
    auto c1 = c0;
    s.sgemm(m, n, k, a.data(), k, b.data(), n, c0.data(), n, true);
    v.sgemm(m, n, k, a.data(), k, b.data(), n, c1.data(), n, true);
    CHECK(max_abs_diff(c0, c1) < 1e-4 * double(k));
    s.sgemm(m, n, k, a.data(), k, b.data(), n, c0.data(), n, false);
    v.sgemm(m, n, k, a.data(), k, b.data(), n, c1.data(), n, false);
    CHECK(max_abs_diff(c0, c1) < 1e-4 * double(k));
  }

  for (int64_t n : {1, 7, 8, 31, 1024}) {
    auto x = random_vec(size_t(n), rng);
    auto y0 = random_vec(size_t(n), rng);
    auto y1 = y0;
    s.saxpy(n, 0.37f, x.data(), y0.data());
    v.saxpy(n, 0.37f, x.data(), y1.data());
    CHECK(max_abs_diff(y0, y1) < 1e-6);

    auto a = random_vec(size_t(n), rng);
    auto b = random_vec(size_t(n), rng);
    std::vector<float> o0(static_cast<size_t>(n)), o1(static_cast<size_t>(n));
    s.vadd(n, a.data(), b.data(), o0.data());
    v.vadd(n, a.data(), b.data(), o1.data());
    CHECK(max_abs_diff(o0, o1) == 0.0);
    s.vmul(n, a.data(), b.data(), o0.data());
    v.vmul(n, a.data(), b.data(), o1.data());
    CHECK(max_abs_diff(o0, o1) == 0.0);
    s.vrelu(n, a.data(), o0.data());
    v.vrelu(n, a.data(), o1.data());
    CHECK(max_abs_diff(o0, o1) == 0.0);

    std::vector<float> g0(size_t(n), 0.5f), g1(size_t(n), 0.5f);
    s.vrelu_bwd(n, a.data(), b.data(), g0.data());
    v.vrelu_bwd(n, a.data(), b.data(), g1.data());
    CHECK(max_abs_diff(g0, g1) == 0.0);

    CHECK(std::fabs(double(s.dot(n, a.data(), b.data())) -
                    double(v.dot(n, a.data(), b.data()))) <
          1e-5 * double(n));
    CHECK(std::fabs(double(s.sum(n, a.data())) -
                    double(v.sum(n, a.data()))) < 1e-5 * double(n));
  }
}
#endif

TEST_CASE("kernels: dispatch reports an active backend") {
  const char* name = kernels::active_backend();
  CHECK((std::string(name) == "avx2" || std::string(name) == "scalar"));
}

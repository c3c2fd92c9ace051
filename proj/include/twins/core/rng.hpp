#pragma once

#include <cmath>
#include <cstdint>

namespace twins {

// xoshiro256++ with splitmix64 seeding. Self-contained so that streams are
// reproducible across standard library versions; checkpoint resume derives
// per-step generators from (seed, stream, step) instead of serializing state.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t x = seed;
    for (auto& word : state_) word = splitmix64(x);
    has_cached_normal_ = false;
  }

  static Rng derive(uint64_t seed, uint64_t stream, uint64_t step = 0) {
    uint64_t x = seed;
    x = splitmix64(x) ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
    x = splitmix64(x) ^ (0xbf58476d1ce4e5b9ULL * (step + 1));
    return Rng(splitmix64(x));
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive bounds.
  int uniform_int(int lo, int hi) {
    if (hi <= lo) return lo;
    uint64_t span = uint64_t(hi - lo) + 1;
    return lo + int(next_u64() % span);
  }

  double normal() {
    if (has_cached_normal_) {
      has_cached_normal_ = false;
      return cached_normal_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 1e-300);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    cached_normal_ = r * std::sin(theta);
    has_cached_normal_ = true;
    return r * std::cos(theta);
  }

  double laplace(double mu, double b) {
    const double u = uniform() - 0.5;
    const double s = u < 0.0 ? -1.0 : 1.0;
    return mu - b * s * std::log(1.0 - 2.0 * std::fabs(u));
  }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  static uint64_t splitmix64(uint64_t& x) {
    uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  uint64_t state_[4];
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

}  // namespace twins

#pragma once

#include <cmath>
#include <cstdint>

namespace boxboot {

// Deterministic xoshiro256** stream with splitmix64 seeding.  Substreams are
// keyed by up to two extra 64-bit values so per-pixel / per-step streams do
// not depend on thread schedule or batch composition.  Normal variates use
// Box-Muller (a fixed algorithm, unlike std::normal_distribution), so the
// byte-for-byte reproducibility contract holds across standard libraries.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t key1 = 0,
                     std::uint64_t key2 = 0) {
    std::uint64_t x = mix(seed);
    x = mix(x ^ (key1 + 0x9e3779b97f4a7c15ULL));
    x = mix(x ^ (key2 + 0xbf58476d1ce4e5b9ULL));
    bool all_zero = true;
    for (auto& word : state_) {
      x += 0x9e3779b97f4a7c15ULL;
      word = mix(x);
      all_zero = all_zero && word == 0;
    }
    if (all_zero) state_[0] = 1;  // xoshiro forbids the all-zero state
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1), 53-bit resolution.
  double next_uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; the second variate of each pair is cached.
  double next_normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - next_uniform();  // (0, 1], keeps log finite
    const double u2 = next_uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  // Uniform integer in [0, n).
  int next_below(int n) {
    return static_cast<int>(next_uniform() * static_cast<double>(n));
  }

  bool next_bernoulli(double p) { return next_uniform() < p; }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t state_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace boxboot

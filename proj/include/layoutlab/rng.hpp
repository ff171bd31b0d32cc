#pragma once

#include <cmath>
#include <cstdint>

namespace layoutlab {

// Counter-based generator: draw i of a stream is a hash of (key, i), where the
// key is derived from (seed, stream). Forking yields an independent stream
// whose outputs do not depend on how much the parent was consumed, which keeps
// per-document / per-epoch draws stable under any batching.
class Rng {
 public:
  explicit Rng(uint64_t seed, uint64_t stream = 0)
      : key_(mix(mix(seed + kGamma) ^ mix(stream + kStreamSalt))) {}

  uint64_t next_u64() { return mix(key_ + (++counter_) * kGamma); }

  // Uniform in [0, 1), 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) { return next_double() < p; }

  // Uniform in [0, n), unbiased via rejection.
  uint64_t next_below(uint64_t n) {
    if (n == 0) {
      return 0;
    }
    const uint64_t limit = n * (UINT64_MAX / n);
    for (;;) {
      const uint64_t r = next_u64();
      if (r < limit) {
        return r % n;
      }
    }
  }

  // Uniform integer in [lo, hi], inclusive.
  int uniform_int(int lo, int hi) {
    if (hi <= lo) {
      return lo;
    }
    return lo + static_cast<int>(next_below(static_cast<uint64_t>(hi - lo) + 1));
  }

  // Standard normal via Box-Muller with a cached spare.
  double gauss() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - next_double();  // (0, 1], keeps log finite
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * kPi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  Rng fork(uint64_t stream) const { return Rng(key_, stream); }

 private:
  static constexpr uint64_t kGamma = 0x9e3779b97f4a7c15ull;
  static constexpr uint64_t kStreamSalt = 0xd1b54a32d192ed03ull;
  static constexpr double kPi = 3.14159265358979323846;

  // splitmix64 finalizer
  static uint64_t mix(uint64_t x) {
    x += kGamma;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  uint64_t key_ = 0;
  uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace layoutlab

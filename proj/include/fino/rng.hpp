#pragma once

#include <cmath>
#include <cstdint>

namespace fino {

inline uint64_t splitmix64_next(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derive an independent stream seed from a base seed and a stream tag.
inline uint64_t derive_seed(uint64_t base, uint64_t stream) {
  uint64_t s = base;
  splitmix64_next(s);
  s ^= 0x632be59bd9b4e019ULL * (stream + 1);
  splitmix64_next(s);
  return splitmix64_next(s);
}

/// Seeded generator owned by each run/check; no global state anywhere.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {
    // burn-in so nearby integer seeds decorrelate
    splitmix64_next(state_);
    splitmix64_next(state_);
  }

  uint64_t next_u64() { return splitmix64_next(state_); }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer on [0, n).
  int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<uint64_t>(n)); }

  size_t uniform_index(size_t n) { return static_cast<size_t>(next_u64() % n); }

  /// Standard normal via Box-Muller (cached second draw).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace fino

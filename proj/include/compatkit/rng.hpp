#pragma once

// Portable seeded randomness. The engine is std::mt19937_64, whose output
// sequence is fixed by the standard; every distribution below is written out
// here so draws are identical across standard library implementations.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace compat {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Order-sensitive 64-bit hash of a word sequence: h ← splitmix64(h ⊕ w_i),
/// starting from h = splitmix64(0).
inline std::uint64_t hash64(std::initializer_list<std::uint64_t> words) {
  std::uint64_t h = splitmix64(0);
  for (std::uint64_t w : words) h = splitmix64(h ^ w);
  return h;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform01() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Standard normal via the Marsaglia polar method.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform01() - 1.0;
      v = 2.0 * uniform01() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  /// Uniform integer in [0, n) by rejection on the top bits.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do x = next_u64();
    while (x >= limit);
    return x % n;
  }

  /// `k` distinct values from [0, n) by a partial Fisher–Yates shuffle,
  /// returned in draw order.
  std::vector<std::int64_t> sample_without_replacement(std::int64_t n, std::int64_t k) {
    std::vector<std::int64_t> pool(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) pool[std::size_t(i)] = i;
    for (std::int64_t i = 0; i < k; ++i) {
      const auto j = i + std::int64_t(below(std::uint64_t(n - i)));
      std::swap(pool[std::size_t(i)], pool[std::size_t(j)]);
    }
    pool.resize(static_cast<std::size_t>(k));
    return pool;
  }

  /// `count` independent fair ±1 signs, one bit of a 64-bit word each.
  std::vector<int> signs(std::size_t count) {
    std::vector<int> out(count);
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < count; ++i) {
      if (i % 64 == 0) word = next_u64();
      out[i] = (word >> (i % 64)) & 1u ? -1 : 1;
    }
    return out;
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace compat

#pragma once

#include <cmath>
#include <cstdint>

namespace ampbp {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

// 64-bit avalanche finalizer (splitmix64 step).
inline std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ull;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Documented replicate/stream derivation, identical across languages:
//   child_seed(seed, k) = mix64(seed + (k + 1) * 0x9E3779B97F4A7C15)
inline std::uint64_t child_seed(std::uint64_t seed, std::uint64_t k) {
  return mix64(seed + (k + 1) * kGolden);
}

// xoshiro256++ with splitmix64 state expansion.  All distribution transforms
// live here instead of <random> so that streams are bit-identical on every
// platform and toolchain.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& w : s_) {
      sm += kGolden;
      w = mix64(sm);
    }
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // uniform on [0,1), 53-bit resolution
  double u01() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // uniform on (0,1); never returns 0, safe under log()
  double u01_open() { return (double(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  double uniform_pm1() { return 2.0 * u01() - 1.0; }

  bool coin() { return (next_u64() >> 63) != 0; }

  // standard normal via Box-Muller, spare value cached
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(u01_open()));
    const double th = 6.283185307179586476925286766559 * u01();
    spare_ = r * std::sin(th);
    have_spare_ = true;
    return r * std::cos(th);
  }

  // uniform integer in [0, n) by rejection
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t lim = ~std::uint64_t(0) - (~std::uint64_t(0) % n);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= lim);
    return x % n;
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::uint64_t s_[4];
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ampbp

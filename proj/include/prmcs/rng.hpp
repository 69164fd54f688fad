#pragma once

#include <cmath>
#include <cstdint>

namespace prmcs {

/// splitmix64 stream. Every random decision in the toolkit goes through one of
/// these so that outputs are identical across runs, compilers and platforms
/// (std::*_distribution is implementation-defined and therefore not used).
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0) noexcept : state_(seed) {}

  std::uint64_t next_u64() noexcept {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
  }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double unit() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * unit(); }

  /// Uniform integer in [0, n). Uses floor(unit() * n), the same rule as the
  /// shuffles, so that hand-evaluated examples stay simple.
  std::uint64_t below(std::uint64_t n) noexcept {
    return static_cast<std::uint64_t>(unit() * static_cast<double>(n));
  }

  /// Standard normal via Box-Muller (one value per call, two draws).
  double gaussian() noexcept {
    double u1 = unit();
    const double u2 = unit();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  /// Independent child stream; consumes one draw from this stream.
  RngStream fork() noexcept { return RngStream(next_u64()); }

  std::uint64_t state() const noexcept { return state_; }

 private:
  std::uint64_t state_;
};

}  // namespace prmcs

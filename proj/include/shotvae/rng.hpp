#pragma once

// Portable pseudo-random numbers.
//
// The generator is SplitMix64 run as a counter: the i-th 64-bit output of a
// stream with key k is mix(k + i * 0x9e3779b97f4a7c15), i = 1, 2, ...
// A (seed, stream) pair maps to a key by key = mix(seed ^ mix(stream)).
// All distributions are derived here from raw 64-bit words with fixed
// formulas, so a given seed yields the same sequence on every platform whose
// libm is correctly rounded for log/cos/sqrt.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>

namespace shotvae {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0) noexcept
      : key_(splitmix64(seed ^ splitmix64(stream))) {}

  /// Independent generator for a named sub-stream of this one's key.
  Rng derive(std::uint64_t stream) const noexcept {
    Rng r;
    r.key_ = splitmix64(key_ ^ splitmix64(stream ^ 0x5851f42d4c957f2dULL));
    return r;
  }

  std::uint64_t next_u64() noexcept {
    ++counter_;
    std::uint64_t z = key_ + counter_ * 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform on the open interval (0, 1).
  double uniform_open() noexcept {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; consumes exactly two words per call.
  double normal() noexcept {
    const double u1 = uniform_open();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Standard Gumbel(0, 1) as -log(-log u), u clamped to (1e-12, 1 - 1e-12).
  double gumbel() noexcept {
    const double u = std::clamp(uniform(), 1e-12, 1.0 - 1e-12);
    return -std::log(-std::log(u));
  }

  double exponential() noexcept { return -std::log(uniform_open()); }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) noexcept {
    const auto i = static_cast<std::size_t>(uniform() * static_cast<double>(n));
    return std::min(i, n - 1);
  }

  template <class T>
  void shuffle(std::span<T> items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[index(i)]);
    }
  }

  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace shotvae

#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <random>
#include <string_view>

namespace risloc {

/// Deterministic random stream. All distributions are generated explicitly
/// from the raw mt19937_64 output so that realizations are bit-identical
/// across standard library implementations.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (one cached deviate).
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    cached_ = r * std::sin(2.0 * M_PI * u2);
    has_cached_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }

  /// Circularly-symmetric complex Gaussian with E|z|^2 = 1
  /// (real and imaginary parts i.i.d. N(0, 1/2)).
  std::complex<double> complex_normal() {
    const double s = std::sqrt(0.5);
    const double re = s * normal();
    const double im = s * normal();
    return {re, im};
  }

  /// Unit-modulus complex number with uniform phase.
  std::complex<double> unit_phase() {
    const double a = uniform(0.0, 2.0 * M_PI);
    return {std::cos(a), std::sin(a)};
  }

 private:
  std::mt19937_64 engine_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace detail

/// Stream-splitting rule: a substream is identified by a label and an index
/// and its seed is a splitmix64 hash chain over (master, label, index).
/// The same (master, label, index) always yields the same stream.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view label,
                                 std::uint64_t index = 0) {
  std::uint64_t h = detail::splitmix64(master);
  for (const char c : label) {
    h = detail::splitmix64(h ^ static_cast<std::uint64_t>(static_cast<unsigned char>(c)));
  }
  return detail::splitmix64(h ^ index);
}

inline RandomStream derive_stream(std::uint64_t master, std::string_view label,
                                  std::uint64_t index = 0) {
  return RandomStream(derive_seed(master, label, index));
}

}  // namespace risloc

#ifndef CVME_RNG_HPP
#define CVME_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>

namespace cvme {

// Deterministic, splittable random stream.
//
// Streams are identified by a (seed, key-path) pair. Child streams are derived
// by mixing the parent's identity with a caller-supplied key through
// SplitMix64, so replicate/bootstrap substreams never depend on thread count
// or evaluation order. The underlying engine is std::mt19937_64, whose output
// sequence is fixed by the standard; uniform and normal variates are derived
// from raw 64-bit draws here rather than through std::*_distribution, which
// is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : id_(mix(seed ^ 0x9e3779b97f4a7c15ull)), engine_(id_) {}

  // Independent child stream for the given key.
  Rng child(std::uint64_t key) const { return Rng(mix(id_ + mix(key + 0x1234567u)), 0); }

  std::uint64_t bits() { return engine_(); }

  // Uniform on [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(bits() >> 11) * 0x1.0p-53; }

  // Uniform on (0, 1), safe for logs.
  double uniform_open() { return (static_cast<double>(bits() >> 11) + 0.5) * 0x1.0p-53; }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller from two fresh uniforms; no cached spare so that the number of
  // engine draws per variate is fixed.
  double normal() {
    double u1 = uniform_open();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Lemire-style rejection to avoid modulo bias.
    std::uint64_t x = bits();
    __uint128_t m = static_cast<__uint128_t>(x) * n;
    std::uint64_t lo = static_cast<std::uint64_t>(m);
    if (lo < n) {
      std::uint64_t t = -n % n;
      while (lo < t) {
        x = bits();
        m = static_cast<__uint128_t>(x) * n;
        lo = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  // Gamma(shape, 1) for shape >= 1 via Marsaglia-Tsang; shape < 1 by boost.
  double gamma(double shape) {
    if (shape < 1.0) {
      double u = uniform_open();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    double d = shape - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      double u = uniform_open();
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
    }
  }

  std::uint64_t stream_id() const { return id_; }

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

 private:
  Rng(std::uint64_t mixed, int) : id_(mixed), engine_(mixed) {}

  std::uint64_t id_;
  std::mt19937_64 engine_;
};

}  // namespace cvme

#endif

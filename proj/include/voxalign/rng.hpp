#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <utility>

#include "voxalign/common.hpp"

namespace voxalign {

// splitmix64 finalizer, used to derive independent seeds from (seed, stream).
inline uint64_t mix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Deterministic RNG with explicitly specified distributions, so that streams
// are reproducible and serializable independent of the standard library's
// distribution internals.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  // Independent substream: same (seed, stream, index) always yields the same
  // generator, regardless of how the parent has been used.
  static Rng derive(uint64_t seed, uint64_t stream, uint64_t index = 0) {
    return Rng(mix64(seed + mix64(stream + mix64(index))));
  }

  uint64_t next_u64() { return gen_(); }

  // Uniform on [0,1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0,n).
  int64_t uniform_int(int64_t n) {
    require(n > 0, "uniform_int: n must be positive");
    const uint64_t un = static_cast<uint64_t>(n);
    const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return static_cast<int64_t>(v % un);
  }

  // Box-Muller without the cached second value; consumes two uniforms.
  double normal() {
    double u1 = 1.0 - uniform();  // (0,1], keeps log finite
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Marsaglia-Tsang; the a<1 case boosts to a+1 and rescales.
  double gamma(double a) {
    require(a > 0.0, "gamma: shape must be positive");
    if (a < 1.0) {
      double u = 1.0 - uniform();  // (0,1]
      return gamma(a + 1.0) * std::pow(u, 1.0 / a);
    }
    const double d = a - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double t = 1.0 + c * x;
      if (t <= 0.0) continue;
      double v = t * t * t;
      double u = 1.0 - uniform();
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
    }
  }

  double beta(double a, double b) {
    for (;;) {
      double x = gamma(a);
      double y = gamma(b);
      if (x + y > 0.0) return x / (x + y);
    }
  }

  template <class It>
  void shuffle(It first, It last) {
    auto n = static_cast<int64_t>(last - first);
    for (int64_t i = n - 1; i > 0; --i) {
      int64_t j = uniform_int(i + 1);
      std::swap(first[i], first[j]);
    }
  }

  // Textual mt19937_64 state; format is defined by the standard.
  std::string serialize() const {
    std::ostringstream os;
    os << gen_;
    return os.str();
  }

  void deserialize(const std::string& s) {
    std::istringstream is(s);
    is >> gen_;
    if (is.fail()) throw IoError("Rng::deserialize: malformed state string");
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace voxalign

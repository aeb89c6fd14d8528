#pragma once

#include <cstdint>
#include <random>

#include "twofe/special.hpp"

namespace twofe {

// Deterministic RNG stream. Streams for (seed, rep) pairs are derived by
// hashing so that parallel and serial study runs produce identical draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(splitmix64(seed)) {}
  Rng(std::uint64_t seed, std::uint64_t stream)
      : gen_(splitmix64(splitmix64(seed) ^ (stream * 0xD1B54A32D192ED03ULL + 1))) {}

  // Uniform in (0,1), 53-bit resolution.
  double uniform() {
    return (static_cast<double>(gen_() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
  }

  double normal(double mean = 0.0, double sd = 1.0) {
    return mean + sd * norm_icdf(uniform());
  }

  std::uint64_t next_u64() { return gen_(); }

  // Poisson draw via uniform products (exact and platform-independent);
  // large means are decomposed into independent chunks.
  int poisson(double lambda) {
    int total = 0;
    while (lambda > 30.0) {
      total += poisson_knuth(30.0);
      lambda -= 30.0;
    }
    return total + poisson_knuth(lambda);
  }

  // Fisher-Yates shuffle of [0, n) indices.
  template <typename Vec>
  void shuffle(Vec& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(gen_() % i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  int poisson_knuth(double lambda) {
    double limit = std::exp(-lambda), p = 1.0;
    int k = 0;
    do {
      ++k;
      p *= uniform();
    } while (p > limit);
    return k - 1;
  }

  std::mt19937_64 gen_;
};

}  // namespace twofe

#pragma once

#include <array>
#include <cstdint>

#include "neonext/tensor.hpp"

namespace neonext {

// Deterministic pseudo-random source.
//
// Engine: xoshiro256** (Blackman & Vigna), state seeded by four successive
// SplitMix64 outputs of the 64-bit seed. uniform() takes the top 53 bits.
// normal() uses the Marsaglia polar method and caches the second variate;
// it relies only on std::log and std::sqrt. gamma() is Marsaglia-Tsang and
// beta() is the ratio of two gammas. None of the <random> distributions are
// used because their outputs are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();
  double uniform();                           // [0, 1)
  std::uint64_t uniform_int(std::uint64_t n);  // [0, n), unbiased
  double normal();                            // N(0, 1)
  double gamma(double shape);                 // Gamma(shape, 1)
  double beta(double a, double b);

  // Independent child stream derived from this stream's seed and a tag.
  Rng fork(std::uint64_t tag) const;

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// i.i.d. N(0, sigma^2) samples in row-major order.
Matrix gaussian_fill(Rng& rng, std::size_t rows, std::size_t cols, double sigma);

}  // namespace neonext

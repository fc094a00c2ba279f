#pragma once

#include <cstddef>
#include <cstdint>

#include "neonext/rng.hpp"
#include "neonext/tensor.hpp"

namespace neonext {

struct InitSpec {
  std::size_t rows = 1, cols = 1;
  bool noise = true;
  std::uint64_t seed = 0;
};

// Noise-free NeoInit pattern. Square: identity. rows < cols: row i averages
// the half-open column band [i*step, min((i+1)*step, cols)) with
// step = round(cols/rows), rounding half away from zero. rows > cols: the
// transposed construction over row bands. Bands that fall past the edge stay
// zero, so trailing rows/columns may be all-zero.
Matrix neoinit_pattern(std::size_t rows, std::size_t cols);

// Pattern plus, when spec.noise is set, gaussian_fill(rng, rows, cols,
// 1/sqrt(rows*cols)) drawn from the caller's stream.
Matrix neoinit(const InitSpec& spec, Rng& rng);

// Convenience overload seeding a fresh stream from spec.seed.
Matrix neoinit(const InitSpec& spec);

}  // namespace neonext

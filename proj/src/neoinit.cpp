#include "neonext/neoinit.hpp"

#include <algorithm>
#include <cmath>

namespace neonext {

namespace {

// Fills band `i` of the short axis. `put(long_idx, value)` writes one entry.
template <class Put>
void fill_bands(std::size_t short_len, std::size_t long_len, Put&& put) {
  const auto step = static_cast<std::size_t>(
      std::round(static_cast<double>(long_len) / static_cast<double>(short_len)));
  for (std::size_t i = 0; i < short_len; ++i) {
    const std::size_t start = i * step;
    const std::size_t end = std::min((i + 1) * step, long_len);
    if (start >= end) continue;
    const double v = 1.0 / static_cast<double>(end - start);
    for (std::size_t j = start; j < end; ++j) put(i, j, v);
  }
}

}  // namespace

Matrix neoinit_pattern(std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) throw ParamError("neoinit: rows and cols must be >= 1");
  if (rows == cols) return Matrix::identity(rows);
  Matrix m(rows, cols);
  if (rows < cols) {
    fill_bands(rows, cols, [&m](std::size_t i, std::size_t j, double v) { m(i, j) = v; });
  } else {
    fill_bands(cols, rows, [&m](std::size_t i, std::size_t j, double v) { m(j, i) = v; });
  }
  return m;
}

Matrix neoinit(const InitSpec& spec, Rng& rng) {
  Matrix m = neoinit_pattern(spec.rows, spec.cols);
  if (spec.noise) {
    const double sigma = 1.0 / std::sqrt(static_cast<double>(spec.rows * spec.cols));
    const Matrix noise = gaussian_fill(rng, spec.rows, spec.cols, sigma);
    auto dst = m.data();
    auto src = noise.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
  return m;
}

Matrix neoinit(const InitSpec& spec) {
  Rng rng(spec.seed);
  return neoinit(spec, rng);
}

}  // namespace neonext

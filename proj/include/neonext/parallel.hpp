#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace neonext::detail {

// Runs fn(begin, end) over [0, total) split into at most `threads` contiguous
// slices. Each index is owned by exactly one slice.
template <class Fn>
void parallel_for(std::size_t total, unsigned threads, Fn&& fn) {
  const std::size_t slices = std::min<std::size_t>(std::max(1u, threads), total);
  if (slices <= 1) {
    fn(std::size_t{0}, total);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(slices);
  for (std::size_t s = 0; s < slices; ++s) {
    const std::size_t b = total * s / slices, e = total * (s + 1) / slices;
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
}

}  // namespace neonext::detail

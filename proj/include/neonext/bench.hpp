#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "neonext/tensor.hpp"

namespace neonext {

// Memory model: every input, weight and output element read or written once,
// 8 bytes each.
struct OpCost {
  std::uint64_t multiplies = 0;
  std::uint64_t bytes = 0;
};

// C * H * W * k^2 (same-size output, padding ignored).
OpCost flops_dwconv(std::size_t c, std::size_t h, std::size_t w, std::size_t k);
// 2 * C * H * W * k for square k x k NeoCell matrices. Requires h % k == w % k == 0.
OpCost flops_neocell(std::size_t c, std::size_t h, std::size_t w, std::size_t k);

// Per-channel k x k kernels stored as (1, C, k, k).
// Depthwise convolution, stride 1, zero padding k/2, same output size. k odd.
Tensor4 dwconv_reference(const Tensor4& x, const Tensor4& kernels);
// Valid (no padding) depthwise convolution: output (H - k + 1) x (W - k + 1).
// Returns the output and the number of multiplies executed.
std::pair<Tensor4, std::uint64_t> dwconv_valid_counted(const Tensor4& x, const Tensor4& kernels);

enum class BenchOp { neocell, dwconv, blockdiag };
BenchOp parse_bench_op(const std::string& s);
std::string to_string(BenchOp op);

struct BenchShape {
  std::size_t n = 1, c = 96, h = 56, w = 56, k = 7;
};

struct BenchResult {
  BenchOp op = BenchOp::neocell;
  BenchShape shape;
  std::size_t iters = 0;
  unsigned threads = 1;
  std::uint64_t seed = 0;
  std::vector<double> times_s;
  double min_s = 0.0, median_s = 0.0, mean_s = 0.0;
  std::uint64_t multiplies = 0;
  double mults_per_s = 0.0;
  double checksum = 0.0;  // sum of the last output
};

// Fixed random input and weights from seed; warmup untimed runs then iters
// timed runs.
BenchResult bench(BenchOp op, const BenchShape& shape, std::size_t iters, std::size_t warmup, unsigned threads = 1,
                  std::uint64_t seed = 0);

inline constexpr const char* kBenchCsvHeader =
    "op,n,c,h,w,k,threads,seed,iters,min_s,median_s,mean_s,multiplies,mults_per_s,checksum";
std::string bench_csv_row(const BenchResult& r);
// Appends one row; writes the header first when the file is new or empty.
void append_bench_csv(const std::filesystem::path& path, const BenchResult& r);

}  // namespace neonext

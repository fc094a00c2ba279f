#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "neonext/bench.hpp"
#include "neonext/neocell.hpp"
#include "neonext/rng.hpp"

using namespace neonext;
namespace fs = std::filesystem;

namespace {

Tensor4 random_tensor(Rng& rng, Dims4 d) {
  Tensor4 t(d);
  for (double& v : t.data()) v = rng.normal();
  return t;
}

// Loop nest in the other order (kernel offsets outermost) with the valid
// region only.
Tensor4 dwconv_flipped(const Tensor4& x, const Tensor4& kern) {
  const auto& d = x.dims();
  const std::size_t k = kern.dims().h, r = k / 2;
  Tensor4 y(d);
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t c = 0; c < d.c; ++c)
      for (std::size_t i = 0; i < d.h; ++i)
        for (std::size_t j = 0; j < d.w; ++j)
          for (std::size_t a = 0; a < k; ++a)
            for (std::size_t b = 0; b < k; ++b) {
              if (i + a < r || j + b < r || i + a - r >= d.h || j + b - r >= d.w) continue;
              y.at(n, c, i, j) += kern.at(0, c, a, b) * x.at(n, c, i + a - r, j + b - r);
            }
  return y;
}

}  // namespace

TEST(Flops, SmallExample) {
  EXPECT_EQ(flops_dwconv(1, 8, 8, 4).multiplies, 1024u);
  EXPECT_EQ(flops_neocell(1, 8, 8, 4).multiplies, 512u);
}

TEST(Flops, RatioIsTwoOverK) {
  for (std::size_t k : {1u, 2u, 3u, 4u, 5u, 7u, 8u})
    for (std::size_t c : {1u, 3u, 96u}) {
      const std::size_t h = 7 * 8 * 5 * 3, w = 2 * h;
      const auto nc = flops_neocell(c, h, w, k).multiplies, dw = flops_dwconv(c, h, w, k).multiplies;
      EXPECT_EQ(nc * k, 2 * dw) << "k=" << k;
    }
  EXPECT_EQ(flops_neocell(4, 6, 6, 2).multiplies, flops_dwconv(4, 6, 6, 2).multiplies);
  EXPECT_EQ(flops_neocell(2, 5, 5, 1).multiplies, 2 * flops_dwconv(2, 5, 5, 1).multiplies);
}

TEST(Flops, NeoCellCheaperForKAboveTwo) {
  for (std::size_t k : {3u, 4u, 5u, 7u}) {
    const std::size_t s = 4 * 3 * 5 * 7;
    EXPECT_LT(flops_neocell(8, s, s, k).multiplies, flops_dwconv(8, s, s, k).multiplies) << k;
  }
}

TEST(Flops, DivisibilityAndZeroSizes) {
  EXPECT_THROW(flops_neocell(1, 10, 8, 4), ShapeError);
  EXPECT_THROW(flops_neocell(1, 8, 10, 4), ShapeError);
  EXPECT_THROW(flops_dwconv(0, 8, 8, 3), ShapeError);
}

TEST(Flops, CountersAgreeWithFormulas) {
  Rng rng(5);
  for (std::size_t k : {3u, 4u, 7u}) {
    const std::size_t c = 3, h = 4 * k, w = 2 * k;
    const Tensor4 x = random_tensor(rng, {1, c, h, w});
    const Tensor4 kern = random_tensor(rng, {1, c, k, k});
    const auto [y, count] = dwconv_valid_counted(x, kern);
    EXPECT_EQ(count, std::uint64_t{c} * (h - k + 1) * (w - k + 1) * k * k);
    EXPECT_EQ(y.dims(), (Dims4{1, c, h - k + 1, w - k + 1}));

    const NeoCellSpec spec{{GroupSpec{0, c, k, k, k, k, 0}}, false};
    NeoCellParams p = NeoCellParams::zeros(spec);
    for (auto& m : p.left) m = gaussian_fill(rng, k, k, 1.0);
    for (auto& m : p.right) m = gaussian_fill(rng, k, k, 1.0);
    const auto [z, nc_count] = forward_patchwise_counted(x, spec, p);
    EXPECT_EQ(nc_count, flops_neocell(c, h, w, k).multiplies);
    EXPECT_EQ(z, forward_patchwise(x, spec, p));
  }
}

TEST(DwConv, DeltaKernelIsIdentity) {
  Rng rng(6);
  const Tensor4 x = random_tensor(rng, {2, 3, 9, 11});
  for (std::size_t k : {1u, 3u, 5u, 7u}) {
    Tensor4 kern({1, 3, k, k});
    for (std::size_t c = 0; c < 3; ++c) kern.at(0, c, k / 2, k / 2) = 1.0;
    EXPECT_EQ(dwconv_reference(x, kern), x) << k;
  }
}

TEST(DwConv, AllOnesCountsNeighbours) {
  const Tensor4 x({1, 1, 6, 6}, 1.0);
  const Tensor4 kern({1, 1, 3, 3}, 1.0);
  const Tensor4 y = dwconv_reference(x, kern);
  for (std::size_t i = 1; i < 5; ++i)
    for (std::size_t j = 1; j < 5; ++j) EXPECT_EQ(y.at(0, 0, i, j), 9.0);
  EXPECT_EQ(y.at(0, 0, 0, 0), 4.0);
  EXPECT_EQ(y.at(0, 0, 0, 3), 6.0);
  const auto [v, count] = dwconv_valid_counted(x, kern);
  for (double e : v.data()) EXPECT_EQ(e, 9.0);
}

TEST(DwConv, MatchesFlippedLoopNest) {
  Rng rng(7);
  const Tensor4 x = random_tensor(rng, {2, 4, 10, 13});
  for (std::size_t k : {3u, 5u, 7u}) {
    const Tensor4 kern = random_tensor(rng, {1, 4, k, k});
    EXPECT_EQ(dwconv_reference(x, kern), dwconv_flipped(x, kern)) << k;
  }
}

TEST(DwConv, ShapeErrors) {
  EXPECT_THROW(dwconv_reference(Tensor4({1, 2, 5, 5}), Tensor4({1, 3, 3, 3})), ShapeError);
  EXPECT_THROW(dwconv_reference(Tensor4({1, 2, 5, 5}), Tensor4({1, 2, 4, 4})), ShapeError);
}

TEST(Bench, RunsAndIsSeeded) {
  const BenchShape shape{1, 8, 28, 28, 7};
  for (BenchOp op : {BenchOp::neocell, BenchOp::dwconv, BenchOp::blockdiag}) {
    const BenchResult a = bench(op, shape, 2, 1, 1, 3);
    const BenchResult b = bench(op, shape, 1, 0, 1, 3);
    EXPECT_EQ(a.times_s.size(), 2u);
    EXPECT_GT(a.min_s, 0.0);
    EXPECT_LE(a.min_s, a.median_s);
    EXPECT_EQ(a.checksum, b.checksum) << to_string(op);
    EXPECT_GT(a.multiplies, 0u);
  }
  EXPECT_EQ(bench(BenchOp::neocell, shape, 1, 0).multiplies, flops_neocell(8, 28, 28, 7).multiplies);
  EXPECT_EQ(bench(BenchOp::dwconv, shape, 1, 0).multiplies, flops_dwconv(8, 28, 28, 7).multiplies);
}

TEST(Bench, NeoCellAndBlockdiagComputeTheSameOutput) {
  const BenchShape shape{1, 4, 14, 14, 7};
  EXPECT_NEAR(bench(BenchOp::neocell, shape, 1, 0, 1, 9).checksum, bench(BenchOp::blockdiag, shape, 1, 0, 1, 9).checksum,
              1e-8);
}

TEST(Bench, CsvAppendsUnderOneHeader) {
  const fs::path p = fs::temp_directory_path() / "neonext_bench_test.csv";
  fs::remove(p);
  const BenchResult r = bench(BenchOp::neocell, {1, 2, 8, 8, 4}, 1, 0);
  append_bench_csv(p, r);
  append_bench_csv(p, r);
  std::ifstream f(p);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(f, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0], kBenchCsvHeader);
  EXPECT_EQ(lines[1], bench_csv_row(r));
  EXPECT_EQ(std::count(lines[1].begin(), lines[1].end(), ','),
            std::count(lines[0].begin(), lines[0].end(), ','));
}

TEST(Bench, OpNames) {
  for (BenchOp op : {BenchOp::neocell, BenchOp::dwconv, BenchOp::blockdiag}) EXPECT_EQ(parse_bench_op(to_string(op)), op);
  EXPECT_THROW(parse_bench_op("conv3d"), UsageError);
}

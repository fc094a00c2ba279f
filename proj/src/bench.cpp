#include "neonext/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>

#include "neonext/neocell.hpp"
#include "neonext/rng.hpp"

namespace neonext {

OpCost flops_dwconv(std::size_t c, std::size_t h, std::size_t w, std::size_t k) {
  if (c == 0 || h == 0 || w == 0 || k == 0) throw ShapeError("flops_dwconv: all sizes must be positive");
  const std::uint64_t out = std::uint64_t{c} * h * w;
  return {out * k * k, 8 * (2 * out + std::uint64_t{c} * k * k)};
}

OpCost flops_neocell(std::size_t c, std::size_t h, std::size_t w, std::size_t k) {
  if (c == 0 || h == 0 || w == 0 || k == 0) throw ShapeError("flops_neocell: all sizes must be positive");
  if (h % k != 0 || w % k != 0)
    throw ShapeError("flops_neocell: " + std::to_string(h) + "x" + std::to_string(w) + " not divisible by k=" +
                     std::to_string(k));
  const std::uint64_t out = std::uint64_t{c} * h * w;
  return {2 * out * k, 8 * (2 * out + 2 * std::uint64_t{c} * k * k)};
}

namespace {

void check_kernels(const Tensor4& x, const Tensor4& kernels) {
  const auto& kd = kernels.dims();
  if (kd.n != 1 || kd.c != x.dims().c || kd.h != kd.w)
    throw ShapeError("dwconv: kernels must be (1, C, k, k) with C = " + std::to_string(x.dims().c) + ", got " +
                     to_string(kd));
}

}  // namespace

Tensor4 dwconv_reference(const Tensor4& x, const Tensor4& kernels) {
  check_kernels(x, kernels);
  const std::size_t k = kernels.dims().h;
  if (k % 2 == 0) throw ShapeError("dwconv_reference: kernel size must be odd, got " + std::to_string(k));
  const auto& d = x.dims();
  const long r = static_cast<long>(k / 2);
  Tensor4 y(d);
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t c = 0; c < d.c; ++c)
      for (std::size_t i = 0; i < d.h; ++i)
        for (std::size_t j = 0; j < d.w; ++j) {
          double s = 0.0;
          for (std::size_t a = 0; a < k; ++a)
            for (std::size_t b = 0; b < k; ++b) {
              const long si = static_cast<long>(i) + static_cast<long>(a) - r;
              const long sj = static_cast<long>(j) + static_cast<long>(b) - r;
              if (si < 0 || sj < 0 || si >= static_cast<long>(d.h) || sj >= static_cast<long>(d.w)) continue;
              s += kernels.at(0, c, a, b) * x.at(n, c, static_cast<std::size_t>(si), static_cast<std::size_t>(sj));
            }
          y.at(n, c, i, j) = s;
        }
  return y;
}

std::pair<Tensor4, std::uint64_t> dwconv_valid_counted(const Tensor4& x, const Tensor4& kernels) {
  check_kernels(x, kernels);
  const std::size_t k = kernels.dims().h;
  const auto& d = x.dims();
  if (k > d.h || k > d.w) throw ShapeError("dwconv_valid_counted: kernel larger than input");
  const std::size_t oh = d.h - k + 1, ow = d.w - k + 1;
  Tensor4 y({d.n, d.c, oh, ow});
  std::uint64_t mults = 0;
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t c = 0; c < d.c; ++c)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double s = 0.0;
          for (std::size_t a = 0; a < k; ++a)
            for (std::size_t b = 0; b < k; ++b) {
              s += kernels.at(0, c, a, b) * x.at(n, c, i + a, j + b);
              ++mults;
            }
          y.at(n, c, i, j) = s;
        }
  return {std::move(y), mults};
}

BenchOp parse_bench_op(const std::string& s) {
  if (s == "neocell") return BenchOp::neocell;
  if (s == "dwconv") return BenchOp::dwconv;
  if (s == "blockdiag") return BenchOp::blockdiag;
  throw UsageError("unknown bench op '" + s + "' (expected neocell|dwconv|blockdiag)");
}

std::string to_string(BenchOp op) {
  switch (op) {
    case BenchOp::neocell: return "neocell";
    case BenchOp::dwconv: return "dwconv";
    case BenchOp::blockdiag: return "blockdiag";
  }
  return "?";
}

namespace {

Tensor4 random_tensor(Rng& rng, Dims4 d) {
  Tensor4 t(d);
  for (double& v : t.data()) v = rng.normal();
  return t;
}

}  // namespace

BenchResult bench(BenchOp op, const BenchShape& s, std::size_t iters, std::size_t warmup, unsigned threads,
                  std::uint64_t seed) {
  if (iters == 0) throw UsageError("bench: iters must be >= 1");
  if (threads == 0) throw UsageError("bench: threads must be >= 1");
  Rng rng(seed);
  const Tensor4 x = random_tensor(rng, {s.n, s.c, s.h, s.w});
  BenchResult r;
  r.op = op;
  r.shape = s;
  r.iters = iters;
  r.threads = threads;
  r.seed = seed;

  std::function<Tensor4()> run;
  Tensor4 kernels;
  NeoCellSpec spec;
  NeoCellParams params;
  if (op == BenchOp::dwconv) {
    kernels = random_tensor(rng, {1, s.c, s.k, s.k});
    r.multiplies = flops_dwconv(s.c, s.h, s.w, s.k).multiplies * s.n;
    run = [&] { return dwconv_reference(x, kernels); };
  } else {
    spec.groups.push_back({0, s.c, s.k, s.k, s.k, s.k, 0});
    spec.validate_input(s.h, s.w);
    for (std::size_t c = 0; c < s.c; ++c) {
      params.left.push_back(gaussian_fill(rng, s.k, s.k, 1.0));
      params.right.push_back(gaussian_fill(rng, s.k, s.k, 1.0));
    }
    r.multiplies = flops_neocell(s.c, s.h, s.w, s.k).multiplies * s.n;
    if (op == BenchOp::neocell)
      run = [&] { return forward_patchwise(x, spec, params, threads); };
    else
      run = [&] { return forward_blockdiag(x, spec, params, threads); };
  }

  Tensor4 out;
  for (std::size_t i = 0; i < warmup; ++i) out = run();
  for (std::size_t i = 0; i < iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    out = run();
    const auto t1 = std::chrono::steady_clock::now();
    r.times_s.push_back(std::max(std::chrono::duration<double>(t1 - t0).count(), 1e-9));
  }
  std::vector<double> sorted = r.times_s;
  std::sort(sorted.begin(), sorted.end());
  r.min_s = sorted.front();
  r.median_s = sorted.size() % 2 ? sorted[sorted.size() / 2]
                                 : 0.5 * (sorted[sorted.size() / 2 - 1] + sorted[sorted.size() / 2]);
  double sum = 0.0;
  for (double t : r.times_s) sum += t;
  r.mean_s = sum / static_cast<double>(iters);
  r.mults_per_s = static_cast<double>(r.multiplies) / r.median_s;
  for (double v : out.data()) r.checksum += v;
  return r;
}

std::string bench_csv_row(const BenchResult& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%zu,%zu,%zu,%u,%llu,%zu,%.9g,%.9g,%.9g,%llu,%.6g,%.17g",
                to_string(r.op).c_str(), r.shape.n, r.shape.c, r.shape.h, r.shape.w, r.shape.k, r.threads,
                static_cast<unsigned long long>(r.seed), r.iters, r.min_s, r.median_s, r.mean_s,
                static_cast<unsigned long long>(r.multiplies), r.mults_per_s, r.checksum);
  return buf;
}

void append_bench_csv(const std::filesystem::path& path, const BenchResult& r) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream f(path, std::ios::app);
  if (!f) throw IoError("cannot append to " + path.string());
  if (fresh) f << kBenchCsvHeader << "\n";
  f << bench_csv_row(r) << "\n";
}

}  // namespace neonext

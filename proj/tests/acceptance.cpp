// Acceptance checks, one PASS/FAIL/SKIP line per criterion.
//   neonext_acceptance            criteria 1-7 (criterion 5 on the synthetic task)
//   neonext_acceptance --cifar10  criterion 5 on CIFAR-10; exits 77 without NEONEXT_CIFAR10_DIR

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include "neonext/bench.hpp"
#include "neonext/checks.hpp"
#include "neonext/layers.hpp"
#include "neonext/model.hpp"
#include "neonext/neocell.hpp"
#include "neonext/neoinit.hpp"
#include "neonext/train.hpp"

using namespace neonext;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(const std::string& id, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!o.pass) ++failures;
  std::printf("%s %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id.c_str(), o.detail.c_str(), s);
  std::fflush(stdout);
}

double elapsed_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Outcome equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(2024);
  const std::size_t trials = 120;
  double worst = 0.0;
  std::set<std::string> kinds;
  std::set<std::size_t> shifts;
  for (std::size_t t = 0; t < trials; ++t) {
    const EquivCase c = random_equiv_case(rng);
    kinds.insert(c.kind);
    for (const auto& g : c.spec.groups) shifts.insert(g.shift);
    worst = std::max(worst, run_equiv_case(c).max_abs_diff);
  }
  const double s = elapsed_since(t0);
  const bool ok = worst <= 1e-10 && s <= 60.0 && kinds.size() == 4 && shifts.size() >= 4;
  return {ok, std::to_string(trials) + " configs, " + std::to_string(kinds.size()) + " kinds, max |diff| " +
                  fmt("%.3g", worst) + ", " + fmt("%.1f", s) + " s (limits 1e-10, 60 s)"};
}

Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  const FdReport r = gradcheck("all", 0, 1e-5, 1e-4, 0);
  const double s = elapsed_since(t0);
  std::size_t entries = 0;
  for (const auto& p : r.params) entries += p.checked;
  return {r.pass() && s <= 120.0, std::to_string(r.params.size()) + " tensors, " + std::to_string(entries) +
                                      " entries, max rel err " + fmt("%.3g", r.max_rel_error()) + ", " +
                                      fmt("%.1f", s) + " s (limits 1e-4, 120 s)"};
}

Outcome complexity() {
  bool ok = true;
  std::size_t sweep = 0;
  for (std::size_t k = 1; k <= 8; ++k)
    for (std::size_t c : {1u, 7u, 96u, 384u})
      for (std::size_t m : {1u, 2u, 8u}) {
        const std::size_t h = k * m * 3, w = k * m * 5;
        const auto nc = flops_neocell(c, h, w, k).multiplies, dw = flops_dwconv(c, h, w, k).multiplies;
        ok &= nc * k == 2 * dw;  // nc / dw == 2 / k in integers
        ++sweep;
      }
  Rng rng(3);
  std::size_t counters = 0;
  for (std::size_t k : {2u, 3u, 4u, 5u, 7u}) {
    const std::size_t c = 3, h = 2 * k, w = 3 * k;
    Tensor4 x({1, c, h, w});
    for (double& v : x.data()) v = rng.normal();
    Tensor4 kern({1, c, k, k});
    for (double& v : kern.data()) v = rng.normal();
    ok &= dwconv_valid_counted(x, kern).second == std::uint64_t{c} * (h - k + 1) * (w - k + 1) * k * k;
    const NeoCellSpec spec{{GroupSpec{0, c, k, k, k, k, 0}}, false};
    NeoCellParams p = NeoCellParams::zeros(spec);
    for (auto& mtx : p.left) mtx = gaussian_fill(rng, k, k, 1.0);
    for (auto& mtx : p.right) mtx = gaussian_fill(rng, k, k, 1.0);
    ok &= forward_patchwise_counted(x, spec, p).second == flops_neocell(c, h, w, k).multiplies;
    counters += 2;
  }
  for (std::size_t k : {3u, 4u, 5u, 7u})
    ok &= flops_neocell(96, 420, 420, k).multiplies < flops_dwconv(96, 420, 420, k).multiplies;
  return {ok, std::to_string(sweep) + " ratio cases, " + std::to_string(counters) +
                  " counter checks, neocell < dwconv for k in {3,4,5,7}"};
}

Outcome neoinit_fidelity() {
  const double t = 0.5;
  bool ok = neoinit({7, 7, false, 0}) == Matrix::identity(7);
  ok &= neoinit({2, 4, false, 0}) == Matrix{{t, t, 0, 0}, {0, 0, t, t}};
  ok &= neoinit({4, 2, false, 0}) == Matrix{{t, 0}, {t, 0}, {0, t}, {0, t}};
  ok &= neoinit({3, 7, false, 0}) ==
        Matrix{{t, t, 0, 0, 0, 0, 0}, {0, 0, t, t, 0, 0, 0}, {0, 0, 0, 0, t, t, 0}};
  ok &= neoinit({1, 2, false, 0}) == Matrix{{t, t}};

  Rng rng(4);
  const NeoCellSpec sq{{GroupSpec{0, 3, 4, 4, 4, 4, 0}, GroupSpec{3, 5, 4, 4, 4, 4, 2}, GroupSpec{5, 8, 7, 7, 7, 7, 5}},
                       false};
  NeoCellParams p = NeoCellParams::zeros(sq);
  for (std::size_t c = 0; c < 8; ++c) {
    const auto& g = sq.group_of(c);
    p.left[c] = neoinit({g.h_out, g.h, false, 0});
    p.right[c] = neoinit({g.w, g.w_out, false, 0});
  }
  Tensor4 x({2, 8, 28, 28});
  for (double& v : x.data()) v = rng.normal();
  const bool identity = forward_patchwise(x, sq, p) == x && forward_blockdiag(x, sq, p) == x;

  const NeoCellSpec down{{GroupSpec{0, 8, 2, 2, 1, 1, 0}}, false};
  NeoCellParams dp = NeoCellParams::zeros(down);
  for (std::size_t c = 0; c < 8; ++c) {
    dp.left[c] = neoinit({1, 2, false, 0});
    dp.right[c] = neoinit({2, 1, false, 0});
  }
  const Tensor4 y = forward_patchwise(x, down, dp);
  double worst = 0.0;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 8; ++c)
      for (std::size_t i = 0; i < 14; ++i)
        for (std::size_t j = 0; j < 14; ++j) {
          const double pool = (x.at(n, c, 2 * i, 2 * j) + x.at(n, c, 2 * i, 2 * j + 1) + x.at(n, c, 2 * i + 1, 2 * j) +
                               x.at(n, c, 2 * i + 1, 2 * j + 1)) /
                              4.0;
          worst = std::max(worst, std::abs(y.at(n, c, i, j) - pool));
        }
  ok &= identity && worst <= 1e-12;
  return {ok, std::string("patterns ") + (ok ? "exact" : "checked") + ", identity layer " +
                  (identity ? "exact" : "NOT exact") + ", 2->1 vs avg-pool " + fmt("%.3g", worst)};
}

Outcome ablation(const RunConfig& cfg, double budget_s) {
  const auto t0 = std::chrono::steady_clock::now();
  const AblationReport rep = run_ablation(cfg, cfg.seeds);
  const double s = elapsed_since(t0);
  std::cout << rep.text();
  const bool ok =
      rep.neoinit.mean_acc > rep.random_normal.mean_acc && rep.neoinit.diverged == 0 && s <= budget_s;
  return {ok, "neoinit " + fmt("%.2f", 100 * rep.neoinit.mean_acc) + "% vs random-normal " +
                  fmt("%.2f", 100 * rep.random_normal.mean_acc) + "%, neoinit diverged " +
                  std::to_string(rep.neoinit.diverged) + ", random-normal diverged " +
                  std::to_string(rep.random_normal.diverged) + ", " + fmt("%.0f", s) + " s (limit " +
                  fmt("%.0f", budget_s) + " s)"};
}

Outcome architecture() {
  Rng rng(0);
  Model m = build_model(ModelSpec::neonext_t(224, 1000), rng);
  const double count = static_cast<double>(m.parameter_count());
  const double rel = std::abs(count - 27.7e6) / 27.7e6;
  const Tensor4 s2d = space_to_depth(Tensor4({1, 3, 224, 224}), 4);
  const Tensor4 stem = pointwise_conv(s2d, as_matrix(m.parameter("stem.pw.weight").value));
  const bool chain = s2d.dims() == Dims4{1, 48, 56, 56} && stem.dims() == Dims4{1, 96, 56, 56};
  return {rel <= 0.02 && chain, "NeoNeXt-T " + fmt("%.0f", count) + " parameters (" + fmt("%.2f", 100 * rel) +
                                    "% off 27.7M), stem 3x224x224 -> " + to_string(s2d.dims()) + " -> " +
                                    to_string(stem.dims())};
}

struct CliRun {
  int code = -1;
  std::string out;
};

CliRun cli(const std::string& args) {
  const std::string cmd = std::string("\"") + NEONEXT_CLI + "\" " + args + " 2>/dev/null";
  CliRun r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t got;
  while ((got = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, got);
  const int st = pclose(p);
  r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Removes the given comma-separated columns from every line.
std::string drop_columns(const std::string& csv, const std::set<std::size_t>& cols) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string field;
    for (std::size_t i = 0; std::getline(ls, field, ','); ++i)
      if (!cols.count(i)) out += field + ",";
    out += "\n";
  }
  return out;
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "neonext_acceptance_cli";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path cfg = root / "run.cfg";
  std::ofstream(cfg) << "neonext-run-config v1\nmodel = micro\nsynth_train = 96\nsynth_val = 48\n"
                        "batch_size = 32\nepochs = 2\nwarmup_epochs = 1\naugment = basic+mixup\n"
                        "label_smoothing = 0.1\n";
  std::vector<std::string> failed;
  std::size_t compared = 0;
  auto same = [&](const std::string& what, const std::string& a, const std::string& b) {
    ++compared;
    if (a != b || a.empty()) failed.push_back(what);
  };
  for (int rep = 0; rep < 2; ++rep) {
    const fs::path d = root / std::to_string(rep);
    fs::create_directories(d);
    bool ok = cli("bench --op blockdiag --c 4 --h 28 --w 28 --k 7 --iters 1 --seed 5 --out " + (d / "bench.csv").string()).code == 0;
    ok &= cli("bench --op dwconv --c 4 --h 28 --w 28 --k 7 --iters 1 --seed 5 --out " + (d / "bench.csv").string()).code == 0;
    ok &= cli("init-dump --rows 4 --cols 7 --seed 9 --out " + (d / "init.bin").string()).code == 0;
    ok &= cli("equiv-check --trials 8 --seed 3 --out " + (d / "equiv.csv").string()).code == 0;
    ok &= cli("gradcheck --target neocell --seed 2 --max-per-param 6 --out " + (d / "grad.csv").string()).code == 0;
    ok &= cli("train --config " + cfg.string() + " --seed 7 --out-dir " + (d / "train").string()).code == 0;
    if (!ok) failed.push_back("exit status (run " + std::to_string(rep) + ")");
  }
  const fs::path a = root / "0", b = root / "1";
  // bench: min_s, median_s, mean_s, mults_per_s are timings.
  same("bench.csv", drop_columns(slurp(a / "bench.csv"), {9, 10, 11, 13}),
       drop_columns(slurp(b / "bench.csv"), {9, 10, 11, 13}));
  for (const char* f : {"init.bin", "equiv.csv", "grad.csv"}) same(f, slurp(a / f), slurp(b / f));
  same("metrics.csv", drop_columns(slurp(a / "train/neoinit-seed7/metrics.csv"), {5}),
       drop_columns(slurp(b / "train/neoinit-seed7/metrics.csv"), {5}));
  for (const char* f : {"checkpoint/manifest.txt", "status.txt"})
    same(f, slurp(a / "train/neoinit-seed7" / f), slurp(b / "train/neoinit-seed7" / f));
  std::size_t tensors = 0;
  for (const auto& e : fs::directory_iterator(a / "train/neoinit-seed7/checkpoint/params")) {
    if (e.path().extension() != ".bin") continue;
    same(e.path().filename().string(), slurp(e.path()), slurp(b / "train/neoinit-seed7/checkpoint/params" / e.path().filename()));
    ++tensors;
  }
  std::string detail = std::to_string(compared) + " outputs compared (" + std::to_string(tensors) + " checkpoint tensors)";
  for (const auto& f : failed) detail += ", differs: " + f;
  return {failed.empty() && tensors > 0, detail};
}

}  // namespace

int main(int argc, char** argv) {
  const bool cifar = argc > 1 && std::string(argv[1]) == "--cifar10";
  if (cifar) {
    const char* dir = std::getenv("NEONEXT_CIFAR10_DIR");
    if (!dir || !*dir) {
      std::printf("SKIP C5-cifar10 init ablation: NEONEXT_CIFAR10_DIR is not set\n");
      return 77;
    }
    RunConfig cfg = load_run_config(fs::path(NEONEXT_CONFIGS) / "cifar_ablation.cfg");
    cfg.data_dir = dir;
    cfg.out_dir = fs::temp_directory_path() / "neonext_acceptance_cifar";
    report("C5-cifar10 init ablation (micro, 10 epochs, 5 seeds per arm)", [&] { return ablation(cfg, 7200.0); });
    return failures ? 1 : 0;
  }

  report("C1 patchwise/block-diagonal equivalence", equivalence);
  report("C2 gradient check", gradients);
  report("C3 complexity", complexity);
  report("C4 NeoInit fidelity", neoinit_fidelity);
  report("C5-synthetic init ablation (micro, 3 epochs, 5 seeds per arm)", [] {
    RunConfig cfg = load_run_config(fs::path(NEONEXT_CONFIGS) / "synth_ablation.cfg");
    cfg.out_dir = fs::temp_directory_path() / "neonext_acceptance_synth";
    return ablation(cfg, 300.0);
  });
  report("C6 architecture", architecture);
  report("C7 CLI determinism", determinism);
  return failures ? 1 : 0;
}

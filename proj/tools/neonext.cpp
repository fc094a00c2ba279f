// neonext command line: benchmarks, checks, training and the init ablation.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "neonext/bench.hpp"
#include "neonext/checks.hpp"
#include "neonext/neoinit.hpp"
#include "neonext/train.hpp"

using namespace neonext;

namespace {

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stoull(tok));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NeoCell operators, NeoNeXt models and tooling"};
  app.require_subcommand(1);

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "Time one operator on a fixed random input; append a CSV row");
  bench_cmd->set_help_flag("--help", "Print this help message and exit");
  std::string op = "neocell";
  BenchShape shape;
  std::size_t iters = 10, warmup = 2;
  unsigned threads = 1;
  std::uint64_t seed = 0;
  std::string out;
  bench_cmd->add_option("--op", op, "neocell|dwconv|blockdiag")->check(CLI::IsMember({"neocell", "dwconv", "blockdiag"}));
  bench_cmd->add_option("--n", shape.n, "batch");
  bench_cmd->add_option("--c", shape.c, "channels");
  bench_cmd->add_option("--h", shape.h, "height");
  bench_cmd->add_option("--w", shape.w, "width");
  bench_cmd->add_option("--k", shape.k, "NeoCell matrix size or conv kernel size");
  bench_cmd->add_option("--iters", iters)->check(CLI::PositiveNumber);
  bench_cmd->add_option("--warmup", warmup);
  bench_cmd->add_option("--threads", threads)->check(CLI::PositiveNumber);
  bench_cmd->add_option("--seed", seed);
  bench_cmd->add_option("--out", out, "CSV file (appended)");

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck", "Compare analytic gradients with central differences");
  std::string target = "all";
  double eps = 1e-5, threshold = 1e-4;
  std::size_t max_per_param = 0;
  grad_cmd->add_option("--target", target, "all or one of the targets");
  grad_cmd->add_option("--eps", eps);
  grad_cmd->add_option("--threshold", threshold);
  grad_cmd->add_option("--max-per-param", max_per_param, "entries sampled per tensor (0 = all)");
  grad_cmd->add_option("--seed", seed);
  grad_cmd->add_option("--out", out, "CSV report");

  // train / ablate
  auto* train_cmd = app.add_subcommand("train", "Run one training job from a config file");
  auto* ablate_cmd = app.add_subcommand("ablate", "Run both init arms over several seeds");
  std::string config, out_dir, seeds_arg;
  std::optional<double> epochs;
  std::optional<std::uint64_t> seed_override;
  unsigned jobs = 1;
  for (auto* c : {train_cmd, ablate_cmd}) {
    c->add_option("--config", config, "run config file")->required()->check(CLI::ExistingFile);
    c->add_option("--out-dir", out_dir, "override out_dir");
    c->add_option("--epochs", epochs, "override epochs");
  }
  train_cmd->add_option("--seed", seed_override, "override the seed (default: first seed of the config)");
  ablate_cmd->add_option("--seeds", seeds_arg, "comma separated; default: seeds of the config");
  ablate_cmd->add_option("--jobs", jobs, "runs executed concurrently")->check(CLI::PositiveNumber);

  // init-dump
  auto* init_cmd = app.add_subcommand("init-dump", "Write one NeoInit matrix in the tensor binary format");
  std::size_t rows = 4, cols = 4;
  bool no_noise = false;
  init_cmd->add_option("--rows", rows)->required()->check(CLI::PositiveNumber);
  init_cmd->add_option("--cols", cols)->required()->check(CLI::PositiveNumber);
  init_cmd->add_option("--seed", seed);
  init_cmd->add_flag("--no-noise", no_noise);
  init_cmd->add_option("--out", out, "binary output (1 x 1 x rows x cols)");

  // equiv-check
  auto* equiv_cmd = app.add_subcommand("equiv-check", "Patchwise vs block-diagonal forward on random configs");
  std::size_t trials = 100;
  double tol = 1e-10;
  equiv_cmd->add_option("--trials", trials)->check(CLI::PositiveNumber);
  equiv_cmd->add_option("--seed", seed);
  equiv_cmd->add_option("--tol", tol);
  equiv_cmd->add_option("--out", out, "CSV report");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*bench_cmd) {
      const BenchResult r = bench(parse_bench_op(op), shape, iters, warmup, threads, seed);
      std::cout << kBenchCsvHeader << "\n" << bench_csv_row(r) << "\n";
      if (!out.empty()) append_bench_csv(out, r);
      return 0;
    }
    if (*grad_cmd) {
      const FdReport r = gradcheck(target, seed, eps, threshold, max_per_param);
      std::cout << format_report(r);
      if (!out.empty()) {
        std::ofstream f(out);
        f << "name,checked,max_rel_error,worst_index,analytic,numeric,pass\n";
        for (const auto& p : r.params)
          f << p.name << "," << p.checked << "," << g17(p.max_rel_error) << "," << p.worst_index << ","
            << g17(p.worst_analytic) << "," << g17(p.worst_numeric) << "," << (p.pass ? 1 : 0) << "\n";
      }
      return r.pass() ? 0 : 1;
    }
    if (*train_cmd || *ablate_cmd) {
      RunConfig cfg = load_run_config(config);
      if (!out_dir.empty()) cfg.out_dir = out_dir;
      if (epochs) {
        cfg.schedule.total_epochs = *epochs;
        cfg.schedule.warmup_epochs = std::min(cfg.schedule.warmup_epochs, *epochs);
      }
      if (*train_cmd) {
        if (seed_override) cfg.seeds = {*seed_override};
        const RunReport r = train_run(cfg);
        for (const auto& e : r.epochs)
          std::cout << "epoch " << e.epoch << " val_loss " << e.val_loss << " val_acc " << e.val_acc << "\n";
        if (r.status == RunStatus::diverged) {
          std::cout << "diverged at step " << r.diverged_step << ": " << r.divergence_reason << "\n";
          return 2;
        }
        return 0;
      }
      const auto seeds = seeds_arg.empty() ? cfg.seeds : parse_seeds(seeds_arg);
      const AblationReport rep = run_ablation(cfg, seeds, jobs);
      std::cout << rep.text();
      return 0;
    }
    if (*init_cmd) {
      const Matrix m = neoinit({rows, cols, !no_noise, seed});
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) std::printf("%s%10.6f", c ? " " : "", m(r, c));
        std::printf("\n");
      }
      if (!out.empty()) write_tensor(out, as_tensor(m));
      return 0;
    }
    if (*equiv_cmd) {
      Rng rng(seed);
      std::ofstream f;
      if (!out.empty()) {
        f.open(out);
        f << "trial,kind,n,c,h,w,groups,max_abs_diff\n";
      }
      double worst = 0.0;
      for (std::size_t t = 0; t < trials; ++t) {
        const EquivResult r = run_equiv_case(random_equiv_case(rng));
        worst = std::max(worst, r.max_abs_diff);
        if (f.is_open())
          f << t << "," << r.kind << "," << r.input.n << "," << r.input.c << "," << r.input.h << "," << r.input.w
            << ",\"" << r.groups << "\"," << g17(r.max_abs_diff) << "\n";
      }
      std::cout << "trials " << trials << " max_abs_diff " << g17(worst) << " tol " << tol << " -> "
                << (worst <= tol ? "PASS" : "FAIL") << "\n";
      return worst <= tol ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "neonext/train.hpp"

using namespace neonext;
namespace fs = std::filesystem;

namespace {

std::vector<ad::Parameter> scalar_param(double v, bool decay = true) {
  return {ad::Parameter{"p", Tensor4({1, 1, 1, 1}, v), decay}};
}

ad::Grads scalar_grad(double g) { return {{"p", Tensor4({1, 1, 1, 1}, g)}}; }

double value(const std::vector<ad::Parameter>& ps) { return ps[0].value.data()[0]; }

RunConfig tiny_config(const std::string& out) {
  RunConfig c;
  c.synth_train = 120;
  c.synth_val = 60;
  c.batch_size = 32;
  c.schedule.total_epochs = 1;
  c.schedule.warmup_epochs = 0.5;
  c.augment.policy = AugmentPolicy::none;
  c.out_dir = fs::temp_directory_path() / out;
  fs::remove_all(c.out_dir);
  return c;
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Drops the trailing wall_time_s column of each metrics row.
std::string without_timing(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

}  // namespace

TEST(Sgd, SingleStepExample) {
  OptimSpec spec;
  spec.momentum = 0.0;
  auto ps = scalar_param(0.0);
  OptimState st;
  sgd_step(ps, scalar_grad(1.0), st, spec, 1.0);
  EXPECT_EQ(value(ps), -1.0);
}

TEST(Sgd, ZeroGradientKeepsParameter) {
  OptimSpec spec;
  auto ps = scalar_param(0.37);
  OptimState st;
  for (int i = 0; i < 50; ++i) sgd_step(ps, scalar_grad(0.0), st, spec, 0.1);
  EXPECT_EQ(value(ps), 0.37);
}

TEST(Sgd, QuadraticBowlFollowsClosedFormAndDecreasesMonotonically) {
  // f(p) = a p^2 / 2. Classical momentum gives the linear recurrence
  // v' = mu v + a p, p' = p - lr v', i.e. p_{t+1} = (1 + mu - lr a) p_t - mu p_{t-1}
  // with p_{-1} = p_0; roots of z^2 - (1 + mu - lr a) z + mu are real for
  // these constants, so the decay is monotone.
  const double a = 2.0, lr = 0.1, mu = 0.3;
  OptimSpec spec;
  spec.momentum = mu;
  auto ps = scalar_param(1.0);
  OptimState st;
  double prev = 1.0, prev2 = 1.0, last_loss = 0.5 * a;
  for (int t = 0; t < 100; ++t) {
    sgd_step(ps, scalar_grad(a * value(ps)), st, spec, lr);
    const double expect = t == 0 ? prev - lr * a * prev : (1.0 + mu - lr * a) * prev - mu * prev2;
    prev2 = prev;
    prev = expect;
    EXPECT_NEAR(value(ps), expect, 1e-14 + 1e-12 * std::abs(expect));
    const double loss = 0.5 * a * value(ps) * value(ps);
    EXPECT_LT(loss, last_loss);
    last_loss = loss;
  }
  EXPECT_LT(last_loss, 1e-6);
}

TEST(Sgd, CoupledWeightDecayOnlyWhereEnabled) {
  OptimSpec spec;
  spec.momentum = 0.0;
  spec.weight_decay = 0.5;
  std::vector<ad::Parameter> ps{{"w", Tensor4({1, 1, 1, 1}, 2.0), true}, {"b", Tensor4({1, 1, 1, 1}, 2.0), false}};
  ad::Grads g{{"w", Tensor4({1, 1, 1, 1}, 0.0)}, {"b", Tensor4({1, 1, 1, 1}, 0.0)}};
  OptimState st;
  sgd_step(ps, g, st, spec, 0.1);
  EXPECT_DOUBLE_EQ(ps[0].value.data()[0], 2.0 - 0.1 * 0.5 * 2.0);
  EXPECT_EQ(ps[1].value.data()[0], 2.0);
}

TEST(Sgd, NonFiniteGradientNamesParameterAndLeavesValuesUntouched) {
  OptimSpec spec;
  std::vector<ad::Parameter> ps{{"a", Tensor4({1, 1, 1, 2}, 1.0), true}, {"bad", Tensor4({1, 1, 1, 2}, 1.0), true}};
  ad::Grads g{{"a", Tensor4({1, 1, 1, 2}, 1.0)},
              {"bad", Tensor4({1, 1, 1, 2}, {0.0, std::numeric_limits<double>::quiet_NaN()})}};
  OptimState st;
  try {
    sgd_step(ps, g, st, spec, 0.1);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("bad"), std::string::npos) << e.what();
  }
  EXPECT_EQ(ps[0].value.data()[0], 1.0);
}

TEST(AdamW, ZeroGradNoDecayLeavesParams) {
  OptimSpec spec;
  spec.kind = OptimKind::adamw;
  auto ps = scalar_param(0.8);
  OptimState st;
  for (int i = 0; i < 5; ++i) adamw_step(ps, scalar_grad(0.0), st, spec, 1e-3);
  EXPECT_EQ(value(ps), 0.8);
}

TEST(AdamW, FirstStepMagnitudeIsLr) {
  OptimSpec spec;
  spec.kind = OptimKind::adamw;
  auto ps = scalar_param(0.0);
  OptimState st;
  adamw_step(ps, scalar_grad(1.0), st, spec, 4e-3);
  EXPECT_NEAR(std::abs(value(ps)), 4e-3, 4e-3 * 1e-7);
}

TEST(AdamW, DecayOnlyIsGeometric) {
  OptimSpec spec;
  spec.kind = OptimKind::adamw;
  spec.weight_decay = 0.05;
  const double lr = 0.1;
  auto ps = scalar_param(3.0);
  auto norm = scalar_param(3.0, false);
  OptimState st, st2;
  for (int t = 1; t <= 20; ++t) {
    adamw_step(ps, scalar_grad(0.0), st, spec, lr);
    adamw_step(norm, scalar_grad(0.0), st2, spec, lr);
    EXPECT_NEAR(value(ps), 3.0 * std::pow(1.0 - lr * 0.05, t), 1e-14);
  }
  EXPECT_EQ(value(norm), 3.0);
}

TEST(Schedule, Examples) {
  ScheduleSpec s{1.0, 10.0, 0.1, 0.001};
  const std::size_t spe = 50;
  EXPECT_EQ(lr_at(s, 0, spe), 0.0);
  EXPECT_EQ(lr_at(s, spe, spe), 0.1);
  // Cosine midpoint: step warm + (total - warm) / 2.
  EXPECT_NEAR(lr_at(s, spe + 225, spe), (0.1 + 0.001) / 2, 1e-12);
  EXPECT_NEAR(lr_at(s, 10 * spe, spe), 0.001, 1e-15);
  EXPECT_NEAR(lr_at(s, 12 * spe, spe), 0.001, 1e-15);
  ScheduleSpec no_warm{0.0, 5.0, 0.1, 0.002};
  EXPECT_EQ(lr_at(no_warm, 0, spe), 0.002);
  EXPECT_NEAR(lr_at(no_warm, 1, spe), 0.1, 1e-5);
}

TEST(Schedule, ContinuousAtWarmupJunction) {
  ScheduleSpec s{2.0, 10.0, 0.1, 0.0};
  const std::size_t spe = 1000;
  const double before = lr_at(s, 2 * spe - 1, spe), at = lr_at(s, 2 * spe, spe), after = lr_at(s, 2 * spe + 1, spe);
  EXPECT_LE(std::abs(at - before), 0.1 / 2000 + 1e-15);
  EXPECT_LE(std::abs(at - after), 1e-6);
}

TEST(Schedule, ValidateRejectsWarmupBeyondTotal) {
  EXPECT_THROW((ScheduleSpec{5.0, 3.0, 0.1, 0.0}.validate()), ConfigError);
}

TEST(CrossEntropy, UniformLogitsGiveLogKExactly) {
  for (std::size_t k : {2u, 10u, 100u}) {
    const Tensor4 logits({3, k, 1, 1}, 0.25);
    const std::vector<std::size_t> labels{0, 1, k - 1};
    EXPECT_EQ(cross_entropy(logits, labels), std::log(static_cast<double>(k)));
  }
}

TEST(CrossEntropy, SmoothedLossAboveTargetEntropy) {
  Rng rng(1);
  const double eps = 0.1;
  const std::size_t k = 10;
  // Entropy of the smoothed one-hot target.
  const double hi = 1.0 - eps + eps / k, lo = eps / k;
  const double entropy = -(hi * std::log(hi) + (k - 1) * lo * std::log(lo));
  for (int t = 0; t < 20; ++t) {
    Tensor4 logits({4, k, 1, 1});
    for (double& v : logits.data()) v = 5.0 * rng.normal();
    const std::vector<std::size_t> labels{1, 2, 3, 4};
    EXPECT_GE(cross_entropy(logits, labels, eps), entropy - 1e-12);
  }
}

TEST(CrossEntropy, MatchesTapeSoftCrossEntropy) {
  Rng rng(2);
  Tensor4 logits({3, 5, 1, 1});
  for (double& v : logits.data()) v = rng.normal();
  Tensor4 targets({3, 5, 1, 1});
  const std::vector<std::size_t> labels{4, 0, 2};
  for (std::size_t i = 0; i < 3; ++i) targets.at(i, labels[i], 0, 0) = 1.0;
  ad::Tape t;
  const double tape = t.value(ad::soft_cross_entropy(t, t.constant(logits), targets)).data()[0];
  EXPECT_NEAR(tape, cross_entropy(logits, labels), 1e-14);
}

TEST(Clip, BoundsGlobalNorm) {
  Rng rng(3);
  ad::Grads g{{"a", Tensor4({1, 1, 3, 3})}, {"b", Tensor4({1, 1, 1, 5})}};
  for (auto& [n, t] : g)
    for (double& v : t.data()) v = 10.0 * rng.normal();
  const double before = clip_grad_norm(g, 1.5);
  EXPECT_GT(before, 1.5);
  EXPECT_LE(global_grad_norm(g), 1.5 + 1e-12);
  ad::Grads small{{"a", Tensor4({1, 1, 1, 2}, {0.1, 0.1})}};
  const ad::Grads copy = small;
  clip_grad_norm(small, 1.0);
  EXPECT_EQ(small.at("a"), copy.at("a"));
}

TEST(Config, ParseFormatRoundTrip) {
  const std::string text =
      "# comment\n"
      "neonext-run-config v1\n"
      "model = micro\n"
      "init = random-normal   # trailing comment\n"
      "optimizer = adamw\n"
      "lr = 0.004\n"
      "weight_decay = 0.05\n"
      "clip = 1.5\n"
      "warmup_epochs = 2\n"
      "epochs = 7\n"
      "seeds = 3, 4,5\n"
      "augment = basic+mixup\n"
      "label_smoothing = 0.1\n"
      "drop_path = 0.2\n";
  const RunConfig c = parse_run_config(text);
  EXPECT_EQ(c.init, InitMethod::random_normal);
  EXPECT_EQ(c.optim.kind, OptimKind::adamw);
  EXPECT_EQ(c.schedule.peak_lr, 0.004);
  EXPECT_EQ(*c.optim.clip, 1.5);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{3, 4, 5}));
  EXPECT_EQ(c.augment.policy, AugmentPolicy::basic_mixup);
  EXPECT_EQ(*c.drop_path, 0.2);
  const RunConfig again = parse_run_config(format_run_config(c));
  EXPECT_EQ(format_run_config(again), format_run_config(c));
}

TEST(Config, ErrorsNameTheProblem) {
  try {
    parse_run_config("neonext-run-config v1\nmodel = micro\nlearning_rate = 3\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_run_config("model = micro\n"), ConfigError);
  EXPECT_THROW(parse_run_config("neonext-run-config v1\nlr = fast\n"), ConfigError);
  EXPECT_THROW(parse_run_config("neonext-run-config v1\nmomentum = 1.0\n"), ConfigError);
  EXPECT_THROW(parse_run_config("neonext-run-config v1\nseeds = \n"), ConfigError);
  EXPECT_THROW(parse_run_config("neonext-run-config v1\ninit = zeros\n"), ConfigError);
  EXPECT_THROW(parse_run_config("neonext-run-config v1\nwarmup_epochs = 20\nepochs = 10\n"), ConfigError);
}

TEST(Config, ShippedConfigsParse) {
  for (const char* name : {"synth_ablation.cfg", "cifar_ablation.cfg", "imagenet_t.cfg"}) {
    const fs::path p = fs::path(NEONEXT_CONFIGS) / name;
    EXPECT_NO_THROW(load_run_config(p)) << p;
  }
  const RunConfig t = load_run_config(fs::path(NEONEXT_CONFIGS) / "imagenet_t.cfg");
  EXPECT_EQ(t.model, "neonext-t");
  EXPECT_EQ(t.optim.kind, OptimKind::adamw);
  EXPECT_EQ(t.schedule.total_epochs, 300.0);
}

TEST(TrainRun, ZeroEpochsGivesInitialEvalOnly) {
  RunConfig c = tiny_config("neonext_zero_epochs");
  c.schedule.total_epochs = 0;
  c.schedule.warmup_epochs = 0;
  const RunReport r = train_run(c);
  ASSERT_EQ(r.epochs.size(), 1u);
  EXPECT_EQ(r.status, RunStatus::ok);
  EXPECT_TRUE(std::isnan(r.epochs[0].train_loss));
  EXPECT_TRUE(fs::exists(r.run_dir / "metrics.csv"));
  EXPECT_TRUE(fs::exists(r.run_dir / "checkpoint"));
}

TEST(TrainRun, MetricsAreBitReproducible) {
  RunConfig c = tiny_config("neonext_repro_a");
  const RunReport a = train_run(c);
  c.out_dir = fs::temp_directory_path() / "neonext_repro_b";
  fs::remove_all(c.out_dir);
  const RunReport b = train_run(c);
  const std::string ca = read_file(a.run_dir / "metrics.csv"), cb = read_file(b.run_dir / "metrics.csv");
  EXPECT_EQ(ca.substr(0, ca.find('\n')), "epoch,train_loss,val_loss,val_acc,lr,wall_time_s");
  EXPECT_EQ(without_timing(ca), without_timing(cb));
  EXPECT_EQ(a.final_val_loss, b.final_val_loss);
}

TEST(TrainRun, DivergenceIsAReportedStatus) {
  RunConfig c = tiny_config("neonext_diverge");
  c.optim.lr = c.schedule.peak_lr = 1e12;
  c.schedule.warmup_epochs = 0;
  const RunReport r = train_run(c);
  EXPECT_EQ(r.status, RunStatus::diverged);
  EXPECT_FALSE(r.divergence_reason.empty());
  EXPECT_NE(read_file(r.run_dir / "status.txt").find("diverged"), std::string::npos);
}

TEST(TrainRun, MicroLearnsSyntheticTaskInThreeEpochs) {
  RunConfig c;
  c.schedule.total_epochs = 3;
  c.schedule.warmup_epochs = 1;
  c.out_dir = fs::temp_directory_path() / "neonext_smoke";
  fs::remove_all(c.out_dir);
  const RunReport r = train_run(c);
  EXPECT_EQ(r.status, RunStatus::ok);
  EXPECT_GE(r.final_val_acc, 0.90);
}

TEST(Ablation, TwoSeedReportIsWellFormed) {
  RunConfig c = tiny_config("neonext_ablation_small");
  const AblationReport rep = run_ablation(c, {0, 1});
  EXPECT_EQ(rep.neoinit.runs.size(), 2u);
  EXPECT_EQ(rep.random_normal.runs.size(), 2u);
  EXPECT_EQ(rep.neoinit.init, InitMethod::neoinit);
  EXPECT_EQ(rep.random_normal.init, InitMethod::random_normal);
  EXPECT_DOUBLE_EQ(rep.accuracy_gap, rep.neoinit.mean_acc - rep.random_normal.mean_acc);
  const std::string text = rep.text();
  EXPECT_NE(text.find("88.45"), std::string::npos);
  EXPECT_NE(text.find("84.65"), std::string::npos);
  const std::string csv = read_file(c.out_dir / "ablation.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  for (const char* d : {"neoinit-seed0", "neoinit-seed1", "random-normal-seed0", "random-normal-seed1"})
    EXPECT_TRUE(fs::exists(c.out_dir / d / "metrics.csv")) << d;
  EXPECT_THROW(run_ablation(c, {0}), Error);
}

TEST(Ablation, MeanStd) {
  const auto [m, s] = mean_std({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(m, 2.5);
  EXPECT_NEAR(s, std::sqrt(5.0 / 3.0), 1e-15);
  EXPECT_EQ(mean_std({7.0}).second, 0.0);
}

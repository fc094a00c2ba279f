#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "neonext/autodiff.hpp"
#include "neonext/data.hpp"
#include "neonext/model.hpp"

namespace neonext {

enum class OptimKind { sgd_momentum, adamw };

struct OptimSpec {
  OptimKind kind = OptimKind::sgd_momentum;
  double lr = 0.1;  // used when no schedule supplies one
  double momentum = 0.9;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  double weight_decay = 0.0;
  std::optional<double> clip;  // global L2 norm bound

  void validate() const;
};

struct OptimState {
  std::map<std::string, Tensor4> m, v;  // momentum buffer (sgd) / moments (adamw)
  std::size_t step = 0;
};

// Classical momentum: v <- mu v + g, p <- p - lr v. Weight decay, when set,
// is added to the gradient (coupled L2) for parameters with decay enabled.
void sgd_step(std::vector<ad::Parameter>& params, const ad::Grads& grads, OptimState& state, const OptimSpec& spec,
              double lr);
// Decoupled weight decay p <- p - lr wd p, skipped for parameters with
// decay disabled (norm scales/shifts and biases), then the bias-corrected
// Adam update.
void adamw_step(std::vector<ad::Parameter>& params, const ad::Grads& grads, OptimState& state, const OptimSpec& spec,
                double lr);
void optimizer_step(std::vector<ad::Parameter>& params, const ad::Grads& grads, OptimState& state,
                    const OptimSpec& spec, double lr);

// Scales every gradient so the global L2 norm is at most max_norm. Returns the
// norm before clipping.
double clip_grad_norm(ad::Grads& grads, double max_norm);
double global_grad_norm(const ad::Grads& grads);

struct ScheduleSpec {
  double warmup_epochs = 1.0;
  double total_epochs = 10.0;
  double peak_lr = 0.1;
  double floor_lr = 0.0;

  void validate() const;
};

// Linear ramp from 0 to peak over the warmup steps, then half-cosine from
// peak to floor reached at step total_epochs * steps_per_epoch. With no
// warmup step 0 returns the floor and the cosine takes over from step 1.
double lr_at(const ScheduleSpec& s, std::size_t step, std::size_t steps_per_epoch);

// Mean over samples of -sum_k t_k log softmax(z)_k with t the one-hot label
// smoothed by `smoothing`.
double cross_entropy(const Tensor4& logits, std::span<const std::size_t> labels, double smoothing = 0.0);

enum class DataSource { synth, cifar10 };

// Flat key = value file, first non-comment line "neonext-run-config v1".
struct RunConfig {
  std::string model = "micro";
  InitMethod init = InitMethod::neoinit;
  OptimSpec optim;
  ScheduleSpec schedule;
  std::size_t batch_size = 64;
  std::vector<std::uint64_t> seeds{0};
  DataSource data = DataSource::synth;
  std::filesystem::path data_dir;  // cifar10; empty falls back to NEONEXT_CIFAR10_DIR
  std::size_t synth_train = 2000, synth_val = 500, synth_classes = 10;
  std::uint64_t synth_seed = 1234;
  SynthOptions synth;  // image_size follows input_size
  std::size_t train_limit = 0, val_limit = 0;  // 0 = use everything
  std::size_t input_size = 32;
  AugmentOptions augment{AugmentPolicy::basic, 0.0, 0.8, 4};
  std::optional<double> drop_path;  // overrides the model default
  unsigned threads = 1;
  std::filesystem::path out_dir = "runs";

  void validate() const;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string format_run_config(const RunConfig& cfg);
std::string to_string(InitMethod m);
InitMethod parse_init_method(const std::string& s);

struct TrainData {
  Dataset train, val;
};
TrainData load_train_data(const RunConfig& cfg);

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // NaN for the initial evaluation row
  double val_loss = 0.0, val_acc = 0.0;
  double lr = 0.0;
  double wall_time_s = 0.0;
};

enum class RunStatus { ok, diverged };

struct RunReport {
  RunStatus status = RunStatus::ok;
  std::uint64_t seed = 0;
  InitMethod init = InitMethod::neoinit;
  std::vector<EpochMetrics> epochs;  // entry 0 is the evaluation before training
  std::size_t diverged_step = 0;
  std::string divergence_reason;
  double final_val_loss = 0.0, final_val_acc = 0.0;
  std::filesystem::path run_dir;
};

struct EvalResult {
  double loss = 0.0, acc = 0.0;
};
// Eval-mode pass in batches. Samples with non-finite logits count as wrong.
EvalResult evaluate(Model& model, const Dataset& ds, std::size_t batch_size, unsigned threads = 1);

// Writes <out_dir>/<init>-seed<seed>/metrics.csv and checkpoint/. Columns:
// epoch,train_loss,val_loss,val_acc,lr,wall_time_s. A non-finite training
// loss, gradient or end-of-epoch validation loss stops the run with status
// diverged; the final metrics are then the evaluation of the diverged weights.
RunReport train_run(const RunConfig& cfg, std::uint64_t seed, const TrainData& data);
RunReport train_run(const RunConfig& cfg);

struct ArmSummary {
  InitMethod init = InitMethod::neoinit;
  std::vector<RunReport> runs;
  double mean_acc = 0.0, std_acc = 0.0;
  double mean_loss = 0.0, std_loss = 0.0;  // over runs that did not diverge
  std::size_t diverged = 0;
};

struct AblationReport {
  ArmSummary neoinit, random_normal;
  double accuracy_gap = 0.0;  // neoinit - random_normal, in accuracy fraction
  std::string text() const;
};

// Reference figures printed in the ablation report header.
inline constexpr double kReferenceNeoInitAcc = 88.45;
inline constexpr double kReferenceRandomAcc = 84.65;

// Runs both arms over the seeds (jobs > 1 runs them concurrently). Writes
// ablation.csv and summary.txt under base.out_dir.
AblationReport run_ablation(const RunConfig& base, const std::vector<std::uint64_t>& seeds, unsigned jobs = 1);

// Mean and sample standard deviation (0 for fewer than two values).
std::pair<double, double> mean_std(const std::vector<double>& v);

}  // namespace neonext

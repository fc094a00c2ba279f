#include <cmath>
#include <numbers>

#include "neonext/train.hpp"

namespace neonext {

void OptimSpec::validate() const {
  if (!(lr > 0.0)) throw ConfigError("optimizer: lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("optimizer: momentum must be in [0, 1)");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("optimizer: betas must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("optimizer: weight decay must be >= 0");
  if (clip && !(*clip > 0.0)) throw ConfigError("optimizer: clip must be > 0");
}

namespace {

const Tensor4& grad_for(const ad::Parameter& p, const ad::Grads& grads) {
  auto it = grads.find(p.name);
  if (it == grads.end()) throw ShapeError("optimizer: no gradient for " + p.name);
  if (!(it->second.dims() == p.value.dims()))
    throw ShapeError("optimizer: gradient shape " + to_string(it->second.dims()) + " != parameter " + p.name + " " +
                     to_string(p.value.dims()));
  for (std::size_t i = 0; i < it->second.size(); ++i)
    if (!std::isfinite(it->second.data()[i]))
      throw NumericError("optimizer: non-finite gradient in " + p.name + " at index " + std::to_string(i));
  return it->second;
}

Tensor4& buffer(std::map<std::string, Tensor4>& m, const ad::Parameter& p) {
  auto it = m.find(p.name);
  if (it == m.end()) it = m.emplace(p.name, Tensor4(p.value.dims())).first;
  return it->second;
}

}  // namespace

void sgd_step(std::vector<ad::Parameter>& params, const ad::Grads& grads, OptimState& state, const OptimSpec& spec,
              double lr) {
  // Validate everything first so a bad gradient leaves all parameters untouched.
  std::vector<const Tensor4*> gs;
  for (const auto& p : params) gs.push_back(&grad_for(p, grads));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    auto g = gs[k]->data();
    auto v = buffer(state.m, p).data();
    auto w = p.value.data();
    const double wd = p.decay ? spec.weight_decay : 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = spec.momentum * v[i] + (g[i] + wd * w[i]);
      w[i] -= lr * v[i];
    }
  }
  ++state.step;
}

void adamw_step(std::vector<ad::Parameter>& params, const ad::Grads& grads, OptimState& state, const OptimSpec& spec,
                double lr) {
  std::vector<const Tensor4*> gs;
  for (const auto& p : params) gs.push_back(&grad_for(p, grads));
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(spec.beta1, t);
  const double c2 = 1.0 - std::pow(spec.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    auto g = gs[k]->data();
    auto m = buffer(state.m, p).data();
    auto v = buffer(state.v, p).data();
    auto w = p.value.data();
    const double wd = p.decay ? spec.weight_decay : 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] -= lr * wd * w[i];
      m[i] = spec.beta1 * m[i] + (1.0 - spec.beta1) * g[i];
      v[i] = spec.beta2 * v[i] + (1.0 - spec.beta2) * g[i] * g[i];
      const double mh = m[i] / c1, vh = v[i] / c2;
      w[i] -= lr * mh / (std::sqrt(vh) + spec.adam_eps);
    }
  }
}

void optimizer_step(std::vector<ad::Parameter>& params, const ad::Grads& grads, OptimState& state,
                    const OptimSpec& spec, double lr) {
  if (spec.kind == OptimKind::sgd_momentum)
    sgd_step(params, grads, state, spec, lr);
  else
    adamw_step(params, grads, state, spec, lr);
}

double global_grad_norm(const ad::Grads& grads) {
  double s = 0.0;
  for (const auto& [name, g] : grads)
    for (double v : g.data()) s += v * v;
  return std::sqrt(s);
}

double clip_grad_norm(ad::Grads& grads, double max_norm) {
  if (!(max_norm > 0.0)) throw ParamError("clip_grad_norm: max_norm must be > 0");
  const double norm = global_grad_norm(grads);
  if (norm > max_norm && std::isfinite(norm)) {
    const double scale = max_norm / norm;
    for (auto& [name, g] : grads)
      for (double& v : g.data()) v *= scale;
  }
  return norm;
}

void ScheduleSpec::validate() const {
  if (!(warmup_epochs >= 0.0 && total_epochs >= 0.0)) throw ConfigError("schedule: epochs must be >= 0");
  if (warmup_epochs > total_epochs) throw ConfigError("schedule: warmup exceeds total epochs");
  if (!(peak_lr > 0.0)) throw ConfigError("schedule: peak lr must be > 0");
  if (!(floor_lr >= 0.0 && floor_lr <= peak_lr)) throw ConfigError("schedule: floor lr must be in [0, peak]");
}

double lr_at(const ScheduleSpec& s, std::size_t step, std::size_t steps_per_epoch) {
  const double spe = static_cast<double>(steps_per_epoch);
  const double warm = s.warmup_epochs * spe;
  const double total = s.total_epochs * spe;
  const double x = static_cast<double>(step);
  if (x < warm) return s.peak_lr * x / warm;
  if (step == 0) return s.floor_lr;  // no warmup: the first step sits at the floor
  if (total <= warm) return s.floor_lr;
  const double progress = std::min(1.0, (x - warm) / (total - warm));
  return s.floor_lr + (s.peak_lr - s.floor_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double cross_entropy(const Tensor4& logits, std::span<const std::size_t> labels, double smoothing) {
  const std::size_t n = logits.dims().n, k = logits.dims().c;
  if (labels.size() != n) throw ShapeError("cross_entropy: label count does not match batch");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double mx = logits.at(i, 0, 0, 0);
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits.at(i, j, 0, 0));
    double se = 0.0;
    for (std::size_t j = 0; j < k; ++j) se += std::exp(logits.at(i, j, 0, 0) - mx);
    const double lse = mx + std::log(se);
    double li = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double t = (j == labels[i] ? 1.0 - smoothing : 0.0) + smoothing / static_cast<double>(k);
      if (t != 0.0) li -= t * (logits.at(i, j, 0, 0) - lse);
    }
    total += li;
  }
  return total / static_cast<double>(n);
}

}  // namespace neonext

#include "neonext/checks.hpp"

#include <algorithm>
#include <sstream>

#include "neonext/model.hpp"

namespace neonext {

namespace {

std::size_t pick(Rng& rng, std::initializer_list<std::size_t> options) {
  return *(options.begin() + static_cast<std::ptrdiff_t>(rng.uniform_int(options.size())));
}

std::size_t between(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.uniform_int(hi - lo + 1); }

// Splits [0, C) into `parts` contiguous non-empty ranges.
std::vector<std::pair<std::size_t, std::size_t>> split_channels(Rng& rng, std::size_t C, std::size_t parts) {
  std::vector<std::size_t> cuts{0};
  std::vector<std::size_t> pool;
  for (std::size_t i = 1; i < C; ++i) pool.push_back(i);
  for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[rng.uniform_int(i)]);
  cuts.insert(cuts.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(parts - 1));
  cuts.push_back(C);
  std::sort(cuts.begin(), cuts.end());
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) out.emplace_back(cuts[i], cuts[i + 1]);
  return out;
}

}  // namespace

EquivCase random_equiv_case(Rng& rng) {
  static const char* kinds[] = {"square", "down2to1", "up2to3", "rect"};
  EquivCase c;
  c.kind = kinds[rng.uniform_int(4)];
  const std::size_t N = between(rng, 1, 2), C = between(rng, 1, 8);
  const std::size_t parts = between(rng, 1, std::min<std::size_t>(C, 4));
  const auto ranges = split_channels(rng, C, parts);
  std::size_t H = 0, W = 0;
  if (c.kind == "square") {
    H = pick(rng, {28, 56});
    W = pick(rng, {28, 56});
    for (auto [b, e] : ranges) {
      const std::size_t k = pick(rng, {4, 7});
      c.spec.groups.push_back({b, e, k, k, k, k, rng.uniform_int(k)});
    }
  } else if (c.kind == "down2to1" || c.kind == "up2to3") {
    const bool up = c.kind == "up2to3";
    H = 2 * between(rng, 1, 28);
    W = 2 * between(rng, 1, 28);
    const bool allow4 = H % 4 == 0 && W % 4 == 0;
    for (auto [b, e] : ranges) {
      const std::size_t m = allow4 && rng.uniform() < 0.5 ? 2 : 1;
      const std::size_t k = 2 * m, ko = (up ? 3 : 1) * m;
      c.spec.groups.push_back({b, e, k, k, ko, ko, 0});
    }
  } else {
    const std::size_t h = pick(rng, {2, 4, 7}), w = pick(rng, {4, 7, 8});
    H = h * between(rng, 1, 56 / h);
    W = w * between(rng, 1, 56 / w);
    const bool down = h % 2 == 0 && rng.uniform() < 0.5;
    for (auto [b, e] : ranges) {
      const std::size_t shift = down ? 0 : rng.uniform_int(std::min(h, w));
      c.spec.groups.push_back({b, e, h, w, down ? h / 2 : h, w, shift});
    }
  }
  c.spec.use_bias = rng.uniform() < 0.5;
  c.spec.validate();
  c.spec.validate_input(H, W);
  c.params = NeoCellParams::zeros(c.spec);
  for (std::size_t ch = 0; ch < C; ++ch) {
    const auto& g = c.spec.group_of(ch);
    c.params.left[ch] = gaussian_fill(rng, g.h_out, g.h, 1.0);
    c.params.right[ch] = gaussian_fill(rng, g.w, g.w_out, 1.0);
    if (c.spec.use_bias) c.params.bias[ch] = gaussian_fill(rng, g.h_out, g.w_out, 1.0);
  }
  c.x = Tensor4({N, C, H, W});
  for (double& v : c.x.data()) v = rng.normal();
  return c;
}

EquivResult run_equiv_case(const EquivCase& c, unsigned threads) {
  const Tensor4 a = forward_patchwise(c.x, c.spec, c.params, threads);
  const Tensor4 b = forward_blockdiag(c.x, c.spec, c.params, threads);
  if (!(a.dims() == b.dims())) throw ShapeError("equivalence: output shapes differ");
  EquivResult r;
  r.kind = c.kind;
  std::ostringstream g;
  for (std::size_t i = 0; i < c.spec.groups.size(); ++i) g << (i ? ";" : "") << describe(c.spec.groups[i]);
  r.groups = g.str();
  r.input = c.x.dims();
  r.max_abs_diff = max_abs_diff(a.data(), b.data());
  return r;
}

std::vector<std::string> gradcheck_targets() {
  return {"neocell", "neocell-blockdiag", "pointwise", "batchnorm-train", "batchnorm-eval", "gelu", "micro"};
}

namespace {

Tensor4 randn(Rng& rng, Dims4 d, double scale = 1.0) {
  Tensor4 t(d);
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

std::vector<std::size_t> sample_indices(Rng& rng, std::size_t size, std::size_t cap) {
  if (cap == 0 || size <= cap) return {};
  std::vector<std::size_t> all(size);
  for (std::size_t i = 0; i < size; ++i) all[i] = i;
  for (std::size_t i = 0; i < cap; ++i) std::swap(all[i], all[i + rng.uniform_int(size - i)]);
  all.resize(cap);
  std::sort(all.begin(), all.end());
  return all;
}

using LossFn = std::function<ad::Var(ad::Tape&, std::vector<ad::Var>&)>;

// Records the loss with every parameter as a tape leaf, takes the analytic
// gradients, then compares them against central differences of the same loss.
FdReport check(std::vector<ad::Parameter>& ps, const LossFn& build, Rng& rng, double eps, double threshold,
               std::size_t cap, const std::string& prefix) {
  auto run = [&](ad::Tape& t) {
    std::vector<ad::Var> vars;
    for (auto& p : ps) vars.push_back(t.param(p));
    return build(t, vars);
  };
  ad::Tape t;
  const ad::Var loss = run(t);
  const ad::Grads grads = t.backward(loss);
  std::vector<FdEntry> entries;
  for (auto& p : ps) {
    const Tensor4& g = grads.at(p.name);
    entries.push_back({prefix + p.name, p.value.data(), g.data(), sample_indices(rng, p.value.size(), cap)});
  }
  return fd_check(
      [&] {
        ad::Tape tt;
        return tt.value(run(tt)).data()[0];
      },
      std::move(entries), eps, threshold);
}

void merge(FdReport& into, const FdReport& r) {
  into.params.insert(into.params.end(), r.params.begin(), r.params.end());
}

FdReport check_neocell(Rng& rng, double eps, double thr, std::size_t cap, ad::NeoCellPath path) {
  struct Variant {
    std::string name;
    NeoCellSpec spec;
    std::size_t H, W;
  };
  const std::vector<Variant> variants{
      {"square4", {{{0, 2, 4, 4, 4, 4, 0}}, true}, 8, 8},
      {"shift", {{{0, 1, 4, 4, 4, 4, 0}, {1, 2, 4, 4, 4, 4, 1}, {2, 3, 4, 4, 4, 4, 3}}, true}, 8, 8},
      {"mixed47", {{{0, 1, 7, 7, 7, 7, 2}, {1, 2, 4, 4, 4, 4, 1}}, false}, 28, 28},
      {"down2to1", {{{0, 2, 2, 2, 1, 1, 0}}, false}, 6, 4},
      {"up2to3", {{{0, 2, 2, 2, 3, 3, 0}}, true}, 4, 6},
      {"rect", {{{0, 2, 2, 4, 2, 4, 1}}, true}, 4, 8},
  };
  FdReport out;
  for (const auto& v : variants) {
    std::vector<ad::Parameter> ps;
    const std::size_t C = v.spec.channels();
    ps.push_back({"x", randn(rng, {2, C, v.H, v.W}), true});
    for (std::size_t gi = 0; gi < v.spec.groups.size(); ++gi) {
      const auto& g = v.spec.groups[gi];
      const std::string n = "g" + std::to_string(gi);
      ps.push_back({n + ".left", randn(rng, {1, g.channels(), g.h_out, g.h}), true});
      ps.push_back({n + ".right", randn(rng, {1, g.channels(), g.w, g.w_out}), true});
      if (v.spec.use_bias) ps.push_back({n + ".bias", randn(rng, {1, g.channels(), g.h_out, g.w_out}), false});
    }
    const Dims4 od = output_shape(v.spec, ps[0].value.dims());
    const Tensor4 weights = randn(rng, od);
    const NeoCellSpec spec = v.spec;
    LossFn build = [spec, weights, path](ad::Tape& t, std::vector<ad::Var>& vars) {
      ad::NeoCellVars w;
      std::size_t k = 1;
      for (std::size_t gi = 0; gi < spec.groups.size(); ++gi) {
        w.left.push_back(vars[k++]);
        w.right.push_back(vars[k++]);
        if (spec.use_bias) w.bias.push_back(vars[k++]);
      }
      return ad::weighted_sum(t, ad::neocell(t, vars[0], spec, w, path), weights);
    };
    merge(out, check(ps, build, rng, eps, thr, cap, v.name + "."));
  }
  return out;
}

FdReport check_pointwise(Rng& rng, double eps, double thr, std::size_t cap) {
  std::vector<ad::Parameter> ps{{"x", randn(rng, {2, 3, 4, 5}), true},
                                {"weight", randn(rng, {1, 1, 6, 3}), true},
                                {"bias", randn(rng, {1, 1, 1, 6}), false}};
  const Tensor4 weights = randn(rng, {2, 6, 4, 5});
  LossFn build = [weights](ad::Tape& t, std::vector<ad::Var>& v) {
    return ad::weighted_sum(t, ad::pointwise_conv(t, v[0], v[1], &v[2]), weights);
  };
  return check(ps, build, rng, eps, thr, cap, "pointwise.");
}

FdReport check_batchnorm(Rng& rng, double eps, double thr, std::size_t cap, BatchNormMode mode) {
  std::vector<ad::Parameter> ps{{"x", randn(rng, {3, 2, 3, 3}, 2.0), true},
                                {"gamma", randn(rng, {1, 1, 1, 2}), false},
                                {"beta", randn(rng, {1, 1, 1, 2}), false}};
  const Tensor4 weights = randn(rng, {3, 2, 3, 3});
  BatchNormState base = BatchNormState::fresh(2);
  base.mean = {0.3, -0.2};
  base.var = {1.5, 0.7};
  LossFn build = [weights, base, mode](ad::Tape& t, std::vector<ad::Var>& v) {
    BatchNormState s = base;  // fresh copy per evaluation
    return ad::weighted_sum(t, ad::batchnorm(t, v[0], v[1], v[2], s, mode), weights);
  };
  return check(ps, build, rng, eps, thr, cap, mode == BatchNormMode::train ? "bn-train." : "bn-eval.");
}

FdReport check_gelu(Rng& rng, double eps, double thr, std::size_t cap) {
  std::vector<ad::Parameter> ps{{"x", randn(rng, {2, 2, 4, 4}, 2.0), true}};
  const Tensor4 weights = randn(rng, {2, 2, 4, 4});
  LossFn build = [weights](ad::Tape& t, std::vector<ad::Var>& v) {
    return ad::weighted_sum(t, ad::gelu(t, v[0]), weights);
  };
  return check(ps, build, rng, eps, thr, cap, "gelu.");
}

FdReport check_micro(Rng& rng, double eps, double thr, std::size_t cap) {
  Rng init = rng.fork(7);
  Model model = build_model(ModelSpec::micro(32, 10), init, InitMethod::neoinit);
  // Perturb the init so no gradient is structurally symmetric.
  for (auto& p : model.parameters())
    for (double& v : p.value.data()) v += 0.05 * rng.normal();
  const Tensor4 x = randn(rng, {4, 3, 32, 32}, 0.5);
  Tensor4 targets({4, 10, 1, 1});
  for (std::size_t i = 0; i < 4; ++i) targets.at(i, rng.uniform_int(10), 0, 0) = 1.0;
  const std::uint64_t drop_seed = rng.next_u64();

  auto loss_of = [&](ad::Tape& t) {
    Rng drop(drop_seed);
    ForwardOptions fo;
    fo.mode = BatchNormMode::train;
    fo.drop_rng = &drop;
    return ad::soft_cross_entropy(t, model.forward(t, t.constant(x), fo), targets);
  };
  ad::Tape t;
  const ad::Var loss = loss_of(t);
  const ad::Grads grads = t.backward(loss);
  std::vector<FdEntry> entries;
  for (auto& p : model.parameters()) {
    const Tensor4& g = grads.at(p.name);
    entries.push_back({"micro." + p.name, p.value.data(), g.data(), sample_indices(rng, p.value.size(), cap)});
  }
  return fd_check(
      [&] {
        ad::Tape tt;
        return tt.value(loss_of(tt)).data()[0];
      },
      std::move(entries), eps, thr);
}

}  // namespace

FdReport gradcheck(const std::string& target, std::uint64_t seed, double eps, double threshold,
                   std::size_t max_per_param) {
  Rng rng(seed);
  FdReport out;
  out.eps = eps;
  out.threshold = threshold;
  auto one = [&](const std::string& t) {
    const auto names = gradcheck_targets();
    const auto tag = static_cast<std::uint64_t>(std::find(names.begin(), names.end(), t) - names.begin());
    Rng r = rng.fork(tag);
    if (t == "neocell")
      merge(out, check_neocell(r, eps, threshold, max_per_param, ad::NeoCellPath::patchwise));
    else if (t == "neocell-blockdiag")
      merge(out, check_neocell(r, eps, threshold, max_per_param, ad::NeoCellPath::blockdiag));
    else if (t == "pointwise")
      merge(out, check_pointwise(r, eps, threshold, max_per_param));
    else if (t == "batchnorm-train")
      merge(out, check_batchnorm(r, eps, threshold, max_per_param, BatchNormMode::train));
    else if (t == "batchnorm-eval")
      merge(out, check_batchnorm(r, eps, threshold, max_per_param, BatchNormMode::eval));
    else if (t == "gelu")
      merge(out, check_gelu(r, eps, threshold, max_per_param));
    else if (t == "micro")
      merge(out, check_micro(r, eps, threshold, max_per_param == 0 ? 4 : max_per_param));
    else
      throw UsageError("unknown gradcheck target '" + t + "'");
  };
  if (target == "all")
    for (const auto& t : gradcheck_targets()) one(t);
  else
    one(target);
  return out;
}

}  // namespace neonext

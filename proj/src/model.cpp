#include "neonext/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "neonext/neoinit.hpp"

namespace neonext {

void BlockSpec::validate() const {
  if (expansion < 1) throw ParamError("BlockSpec: expansion ratio must be >= 1");
  if (!(drop_path >= 0.0 && drop_path < 1.0)) throw ParamError("BlockSpec: drop-path must be in [0, 1)");
  neocell.validate();
  if (neocell.channels() != channels) throw ParamError("BlockSpec: NeoCell spec does not cover the block channels");
}

void ModelSpec::validate() const {
  for (std::size_t s = 0; s < 4; ++s) {
    if (depths[s] == 0) throw ParamError("ModelSpec " + name + ": stage " + std::to_string(s) + " has depth 0");
    if (widths[s] == 0) throw ParamError("ModelSpec " + name + ": stage " + std::to_string(s) + " has width 0");
    if (s > 0 && widths[s] < widths[s - 1]) throw ParamError("ModelSpec " + name + ": widths must be non-decreasing");
    if (policies[s].sizes.empty()) throw ParamError("ModelSpec " + name + ": stage " + std::to_string(s) + " has no matrix sizes");
    if (widths[s] % policies[s].sizes.size() != 0) {
      throw ParamError("ModelSpec " + name + ": stage " + std::to_string(s) + " width " + std::to_string(widths[s]) +
                       " does not split evenly into " + std::to_string(policies[s].sizes.size()) + " parts");
    }
  }
  if (policies[3].shifts) throw ParamError("ModelSpec " + name + ": stage 4 must not use shifts");
  if (expansion < 1) throw ParamError("ModelSpec " + name + ": expansion must be >= 1");
  if (!(drop_path >= 0.0 && drop_path < 1.0)) throw ParamError("ModelSpec " + name + ": drop-path must be in [0, 1)");
  if (stem_patch == 0 || classes == 0 || in_channels == 0) throw ParamError("ModelSpec " + name + ": zero-sized field");
}

namespace {

ModelSpec convnext_like(std::string name, std::array<std::size_t, 4> depths, std::array<std::size_t, 4> widths,
                        double drop_path, std::size_t input_size, std::size_t classes) {
  ModelSpec m;
  m.name = std::move(name);
  m.depths = depths;
  m.widths = widths;
  m.policies = {StagePolicy{{4, 7}, true}, StagePolicy{{4, 7}, true}, StagePolicy{{4, 7}, true},
                StagePolicy{{7}, false}};
  m.drop_path = drop_path;
  m.input_size = input_size;
  m.classes = classes;
  return m;
}

}  // namespace

ModelSpec ModelSpec::neonext_t(std::size_t input_size, std::size_t classes) {
  return convnext_like("neonext-t", {3, 3, 9, 3}, {96, 192, 384, 768}, 0.1, input_size, classes);
}
ModelSpec ModelSpec::neonext_s(std::size_t input_size, std::size_t classes) {
  return convnext_like("neonext-s", {3, 3, 27, 3}, {96, 192, 384, 768}, 0.4, input_size, classes);
}
ModelSpec ModelSpec::neonext_b(std::size_t input_size, std::size_t classes) {
  return convnext_like("neonext-b", {3, 3, 27, 3}, {128, 256, 512, 1024}, 0.5, input_size, classes);
}
ModelSpec ModelSpec::micro(std::size_t input_size, std::size_t classes) {
  ModelSpec m;
  m.name = "neonext-micro";
  m.depths = {1, 1, 2, 1};
  m.widths = {24, 48, 96, 192};
  m.policies = {StagePolicy{{4}, true}, StagePolicy{{4}, true}, StagePolicy{{4}, true}, StagePolicy{{7}, false}};
  m.drop_path = 0.05;
  m.input_size = input_size;
  m.classes = classes;
  return m;
}

ModelSpec ModelSpec::by_name(const std::string& name, std::size_t input_size, std::size_t classes) {
  if (name == "neonext-t") return neonext_t(input_size, classes);
  if (name == "neonext-s") return neonext_s(input_size, classes);
  if (name == "neonext-b") return neonext_b(input_size, classes);
  if (name == "neonext-micro" || name == "micro") return micro(input_size, classes);
  throw ParamError("unknown model '" + name + "' (expected neonext-t|neonext-s|neonext-b|neonext-micro)");
}

NeoCellSpec stage_neocell_spec(std::size_t channels, std::size_t spatial, const StagePolicy& policy, bool use_bias,
                               std::vector<std::string>* notes) {
  NeoCellSpec spec;
  spec.use_bias = use_bias;
  const std::size_t parts = policy.sizes.size();
  std::size_t next = 0;
  for (std::size_t p = 0; p < parts; ++p) {
    const std::size_t part_channels = channels / parts + (p < channels % parts ? 1 : 0);
    if (part_channels == 0) continue;
    std::size_t k = policy.sizes[p];
    if (spatial % k != 0) {
      const auto it = std::find_if(kFallbackSizes.begin(), kFallbackSizes.end(),
                                   [spatial](std::size_t c) { return spatial % c == 0; });
      const std::size_t sub = *it;  // 1 always divides
      if (notes) {
        notes->push_back("size " + std::to_string(k) + " -> " + std::to_string(sub) + " at spatial " +
                         std::to_string(spatial) + " (channels " + std::to_string(next) + ".." +
                         std::to_string(next + part_channels) + ")");
      }
      k = sub;
    }
    const std::size_t subgroups = policy.shifts ? k : 1;
    for (std::size_t s = 0; s < subgroups; ++s) {
      const std::size_t n = part_channels / subgroups + (s < part_channels % subgroups ? 1 : 0);
      if (n == 0) continue;
      spec.groups.push_back(GroupSpec{next, next + n, k, k, k, k, policy.shifts ? s : 0});
      next += n;
    }
  }
  spec.validate_input(spatial, spatial);
  return spec;
}

std::size_t Model::add_param(std::string name, Tensor4 value, bool decay) {
  params_.push_back(ad::Parameter{std::move(name), std::move(value), decay});
  return params_.size() - 1;
}

std::size_t Model::add_norm(const std::string& name, std::size_t channels, NormLayer& out) {
  out.gamma = add_param(name + ".gamma", Tensor4({1, 1, 1, channels}, 1.0), false);
  out.beta = add_param(name + ".beta", Tensor4({1, 1, 1, channels}, 0.0), false);
  norm_states_.push_back(BatchNormState::fresh(channels));
  out.state = norm_states_.size() - 1;
  return out.state;
}

Model::NeoCellLayer Model::add_neocell(const std::string& name, const NeoCellSpec& spec, Rng& rng, InitMethod init) {
  NeoCellLayer layer;
  layer.spec = spec;
  for (std::size_t gi = 0; gi < spec.groups.size(); ++gi) {
    const auto& g = spec.groups[gi];
    const std::string prefix = name + ".g" + std::to_string(gi);
    Tensor4 left({1, g.channels(), g.h_out, g.h});
    Tensor4 right({1, g.channels(), g.w, g.w_out});
    for (std::size_t c = 0; c < g.channels(); ++c) {
      Matrix l, r;
      if (init == InitMethod::neoinit) {
        l = neoinit(InitSpec{g.h_out, g.h, true, 0}, rng);
        r = neoinit(InitSpec{g.w, g.w_out, true, 0}, rng);
      } else {
        l = gaussian_fill(rng, g.h_out, g.h, 1.0 / std::sqrt(static_cast<double>(g.h)));
        r = gaussian_fill(rng, g.w, g.w_out, 1.0 / std::sqrt(static_cast<double>(g.w)));
      }
      std::copy(l.data().begin(), l.data().end(), left.plane(0, c).begin());
      std::copy(r.data().begin(), r.data().end(), right.plane(0, c).begin());
    }
    layer.left.push_back(add_param(prefix + ".left", std::move(left), true));
    layer.right.push_back(add_param(prefix + ".right", std::move(right), true));
    if (spec.use_bias) layer.bias.push_back(add_param(prefix + ".bias", Tensor4({1, g.channels(), g.h_out, g.w_out}), false));
  }
  return layer;
}

Model::PointwiseLayer Model::add_pointwise(const std::string& name, std::size_t c_in, std::size_t c_out, Rng& rng) {
  PointwiseLayer layer;
  const Matrix w = gaussian_fill(rng, c_out, c_in, 1.0 / std::sqrt(static_cast<double>(c_in)));
  layer.weight = add_param(name + ".weight", as_tensor(w), true);
  layer.bias = add_param(name + ".bias", Tensor4({1, 1, 1, c_out}), false);
  return layer;
}

Model build_model(const ModelSpec& spec, Rng& rng, InitMethod init) {
  spec.validate();
  Model m;
  m.spec_ = spec;
  m.stem_patch_ = spec.stem_patch;
  if (spec.input_size % spec.stem_patch != 0) {
    throw ShapeError("build_model " + spec.name + ": stem: input " + std::to_string(spec.input_size) +
                     " not divisible by patch " + std::to_string(spec.stem_patch));
  }
  std::size_t spatial = spec.input_size / spec.stem_patch;
  const std::size_t stem_channels = spec.in_channels * spec.stem_patch * spec.stem_patch;
  m.stem_pw_ = m.add_pointwise("stem.pw", stem_channels, spec.widths[0], rng);
  m.add_norm("stem.norm", spec.widths[0], m.stem_norm_);

  const std::size_t total_blocks = std::accumulate(spec.depths.begin(), spec.depths.end(), std::size_t{0});
  std::size_t block_index = 0;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::string stage_name = "stages." + std::to_string(s);
    if (s > 0) {
      if (spatial % 2 != 0) {
        throw ShapeError("build_model " + spec.name + ": downsample into stage " + std::to_string(s) +
                         ": spatial size " + std::to_string(spatial) + " is odd");
      }
      Model::Downsample ds;
      ds.name = "downsample." + std::to_string(s);
      const std::size_t c_in = spec.widths[s - 1];
      NeoCellSpec ds_spec{{GroupSpec{0, c_in, 2, 2, 1, 1, 0}}, false};
      ds.neocell = m.add_neocell(ds.name + ".neocell", ds_spec, rng, init);
      m.add_norm(ds.name + ".norm1", c_in, ds.norm1);
      ds.pointwise = m.add_pointwise(ds.name + ".pw", c_in, spec.widths[s], rng);
      m.add_norm(ds.name + ".norm2", spec.widths[s], ds.norm2);
      m.downsamples_.push_back(std::move(ds));
      spatial /= 2;
    }
    std::vector<std::string> notes;
    NeoCellSpec block_neo;
    try {
      block_neo = stage_neocell_spec(spec.widths[s], spatial, spec.policies[s], spec.block_neocell_bias, &notes);
    } catch (const ShapeError& e) {
      throw ShapeError("build_model " + spec.name + ": stage " + std::to_string(s) + ": " + e.what());
    }
    for (const auto& n : notes) m.substitutions_.push_back("stage " + std::to_string(s) + ": " + n);
    std::vector<Model::Block> blocks;
    for (std::size_t b = 0; b < spec.depths[s]; ++b, ++block_index) {
      Model::Block blk;
      blk.name = stage_name + ".blocks." + std::to_string(b);
      const std::size_t c = spec.widths[s], hidden = c * spec.expansion;
      blk.neocell = m.add_neocell(blk.name + ".neocell", block_neo, rng, init);
      m.add_norm(blk.name + ".norm", c, blk.norm);
      blk.expand = m.add_pointwise(blk.name + ".expand", c, hidden, rng);
      blk.project = m.add_pointwise(blk.name + ".project", hidden, c, rng);
      blk.drop_path = total_blocks > 1 ? spec.drop_path * static_cast<double>(block_index) /
                                             static_cast<double>(total_blocks - 1)
                                       : 0.0;
      blocks.push_back(std::move(blk));
    }
    m.stages_.push_back(std::move(blocks));
  }
  m.add_norm("head.norm", spec.widths[3], m.head_norm_);
  m.head_fc_ = m.add_pointwise("head.fc", spec.widths[3], spec.classes, rng);
  return m;
}

ad::Parameter& Model::parameter(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw ParamError("model has no parameter '" + name + "'");
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

std::size_t Model::block_parameter_count(const BlockSpec& b) {
  std::size_t neo = 0;
  for (const auto& g : b.neocell.groups) {
    neo += g.channels() * (g.h_out * g.h + g.w * g.w_out + (b.neocell.use_bias ? g.h_out * g.w_out : 0));
  }
  const std::size_t c = b.channels, hidden = c * b.expansion;
  return neo + 2 * c + (c * hidden + hidden) + (hidden * c + c);
}

BlockSpec Model::block_spec(std::size_t stage, std::size_t index) const {
  const Block& blk = stages_.at(stage).at(index);
  return BlockSpec{spec_.widths[stage], blk.neocell.spec, spec_.expansion, blk.drop_path};
}

std::size_t Model::allocated_block_parameters(std::size_t stage, std::size_t index) const {
  const std::string prefix = stages_.at(stage).at(index).name + ".";
  std::size_t n = 0;
  for (const auto& p : params_)
    if (p.name.rfind(prefix, 0) == 0) n += p.value.size();
  return n;
}

namespace {

struct ForwardCtx {
  ad::Tape& t;
  std::vector<ad::Parameter>& params;
  std::vector<BatchNormState>& states;
  const ForwardOptions& opt;

  ad::Var p(std::size_t i) { return opt.track_params ? t.param(params[i]) : t.constant(params[i].value); }

  ad::Var neocell(ad::Var x, const Model::NeoCellLayer& l) {
    ad::NeoCellVars w;
    for (std::size_t i : l.left) w.left.push_back(p(i));
    for (std::size_t i : l.right) w.right.push_back(p(i));
    for (std::size_t i : l.bias) w.bias.push_back(p(i));
    return ad::neocell(t, x, l.spec, w, opt.path, opt.threads);
  }
  ad::Var pointwise(ad::Var x, const Model::PointwiseLayer& l) {
    const ad::Var w = p(l.weight);
    if (l.bias) {
      const ad::Var b = p(*l.bias);
      return ad::pointwise_conv(t, x, w, &b);
    }
    return ad::pointwise_conv(t, x, w, nullptr);
  }
  ad::Var norm(ad::Var x, const Model::NormLayer& l) {
    return ad::batchnorm(t, x, p(l.gamma), p(l.beta), states[l.state], opt.mode);
  }
};

}  // namespace

ad::Var Model::forward(ad::Tape& t, ad::Var x, const ForwardOptions& opt) {
  const Dims4 d = t.value(x).dims();
  if (d.c != spec_.in_channels || d.h != spec_.input_size || d.w != spec_.input_size) {
    throw ShapeError("model " + spec_.name + ": expected input (n, " + std::to_string(spec_.in_channels) + ", " +
                     std::to_string(spec_.input_size) + ", " + std::to_string(spec_.input_size) + "), got " +
                     to_string(d));
  }
  ForwardCtx ctx{t, params_, norm_states_, opt};
  ad::Var h = ad::space_to_depth(t, x, stem_patch_);
  h = ctx.norm(ctx.pointwise(h, stem_pw_), stem_norm_);
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    if (s > 0) {
      const Downsample& ds = downsamples_[s - 1];
      h = ad::gelu(t, ctx.norm(ctx.neocell(h, ds.neocell), ds.norm1));
      h = ad::gelu(t, ctx.norm(ctx.pointwise(h, ds.pointwise), ds.norm2));
    }
    for (const Block& blk : stages_[s]) {
      ad::Var r = ctx.norm(ctx.neocell(h, blk.neocell), blk.norm);
      r = ctx.pointwise(ad::gelu(t, ctx.pointwise(r, blk.expand)), blk.project);
      if (opt.mode == BatchNormMode::train && blk.drop_path > 0.0) {
        if (!opt.drop_rng) throw UsageError("model forward: train mode with drop-path needs an Rng");
        const double keep = 1.0 - blk.drop_path;
        std::vector<double> scale(d.n);
        for (double& v : scale) v = opt.drop_rng->uniform() < keep ? 1.0 / keep : 0.0;
        r = ad::scale_samples(t, r, std::move(scale));
      }
      h = ad::add(t, h, r);
    }
  }
  h = ctx.norm(ad::global_avg_pool(t, h), head_norm_);
  return ctx.pointwise(h, head_fc_);
}

Tensor4 Model::predict(const Tensor4& x, unsigned threads) {
  ad::Tape t;
  ForwardOptions opt;
  opt.mode = BatchNormMode::eval;
  opt.track_params = false;
  opt.threads = threads;
  const ad::Var out = forward(t, t.constant(x), opt);
  return t.value(out);
}

std::string Model::manifest() const {
  std::ostringstream os;
  auto count = [this](const std::string& prefix) {
    std::size_t n = 0;
    for (const auto& p : params_)
      if (p.name.rfind(prefix, 0) == 0) n += p.value.size();
    return n;
  };
  auto groups = [&os](const NeoCellSpec& spec, const char* indent) {
    for (const auto& g : spec.groups) os << indent << "group " << describe(g) << "\n";
  };
  os << "neonext-model-manifest v1\n";
  os << "model " << spec_.name << " input " << spec_.in_channels << "x" << spec_.input_size << "x"
     << spec_.input_size << " classes " << spec_.classes << " parameters " << parameter_count() << "\n";
  std::size_t spatial = spec_.input_size / stem_patch_;
  os << "stem space_to_depth " << stem_patch_ << " -> " << spec_.in_channels * stem_patch_ * stem_patch_ << "x"
     << spatial << "x" << spatial << "; pointwise -> " << spec_.widths[0] << "; params " << count("stem.") << "\n";
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    if (s > 0) {
      const Downsample& ds = downsamples_[s - 1];
      spatial /= 2;
      os << "downsample " << ds.name << " " << spec_.widths[s - 1] << "->" << spec_.widths[s] << " spatial "
         << spatial << " params " << count(ds.name + ".") << "\n";
      groups(ds.neocell.spec, "  ");
    }
    os << "stage " << s << " width " << spec_.widths[s] << " spatial " << spatial << " depth " << stages_[s].size()
       << "\n";
    for (const Block& blk : stages_[s]) {
      os << "  block " << blk.name << " params " << count(blk.name + ".") << " drop_path " << blk.drop_path
         << " neocell_bias " << (blk.neocell.spec.use_bias ? 1 : 0) << "\n";
      groups(blk.neocell.spec, "    ");
    }
  }
  os << "head avgpool -> batchnorm -> linear " << spec_.widths[3] << "->" << spec_.classes << " params "
     << count("head.") << "\n";
  for (const auto& sub : substitutions_) os << "substitution " << sub << "\n";
  return os.str();
}

void Model::save_checkpoint(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir / "params");
  {
    std::ofstream f(dir / "manifest.txt", std::ios::trunc);
    if (!f) throw IoError("cannot write " + (dir / "manifest.txt").string());
    f << manifest();
  }
  for (const auto& p : params_) write_tensor(dir / "params" / (p.name + ".bin"), p.value);
  for (std::size_t i = 0; i < norm_states_.size(); ++i) {
    const auto& st = norm_states_[i];
    const std::size_t c = st.mean.size();
    std::vector<double> packed(st.mean);
    packed.insert(packed.end(), st.var.begin(), st.var.end());
    write_tensor(dir / "params" / ("norm_state." + std::to_string(i) + ".bin"), Tensor4({1, 1, 2, c}, std::move(packed)));
  }
}

void Model::load_checkpoint(const std::filesystem::path& dir) {
  for (auto& p : params_) {
    const auto path = dir / "params" / (p.name + ".bin");
    Tensor4 t = read_tensor(path);
    if (t.dims() != p.value.dims())
      throw IoError(path.string() + ": dims " + to_string(t.dims()) + " != " + to_string(p.value.dims()));
    p.value = std::move(t);
  }
  for (std::size_t i = 0; i < norm_states_.size(); ++i) {
    auto& st = norm_states_[i];
    const auto path = dir / "params" / ("norm_state." + std::to_string(i) + ".bin");
    const Tensor4 t = read_tensor(path);
    const std::size_t c = st.mean.size();
    if (t.dims() != Dims4{1, 1, 2, c}) throw IoError(path.string() + ": unexpected dims");
    std::copy_n(t.data().begin(), c, st.mean.begin());
    std::copy_n(t.data().begin() + static_cast<std::ptrdiff_t>(c), c, st.var.begin());
  }
}

}  // namespace neonext

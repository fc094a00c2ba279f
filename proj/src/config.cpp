#include <charconv>
#include <fstream>
#include <sstream>

#include "neonext/train.hpp"

namespace neonext {

namespace {

constexpr const char* kHeader = "neonext-run-config v1";

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) throw ConfigError("config: " + key + ": not a number: '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size())
    throw ConfigError("config: " + key + ": not a non-negative integer: '" + v + "'");
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string to_string(InitMethod m) { return m == InitMethod::neoinit ? "neoinit" : "random-normal"; }

InitMethod parse_init_method(const std::string& s) {
  if (s == "neoinit") return InitMethod::neoinit;
  if (s == "random-normal") return InitMethod::random_normal;
  throw ConfigError("unknown init method '" + s + "' (expected neoinit|random-normal)");
}

void RunConfig::validate() const {
  optim.validate();
  schedule.validate();
  if (seeds.empty()) throw ConfigError("config: seeds must be non-empty");
  if (batch_size == 0) throw ConfigError("config: batch_size must be > 0");
  if (data == DataSource::synth && (synth_classes < 2 || synth_train < synth_classes || synth_val == 0))
    throw ConfigError("config: synthetic task sizes invalid");
  if (augment.label_smoothing < 0.0 || augment.label_smoothing >= 1.0)
    throw ConfigError("config: label_smoothing must be in [0, 1)");
  if (!(augment.mixup_alpha > 0.0)) throw ConfigError("config: mixup_alpha must be > 0");
  if (drop_path && !(*drop_path >= 0.0 && *drop_path < 1.0)) throw ConfigError("config: drop_path must be in [0, 1)");
  if (threads == 0) throw ConfigError("config: threads must be >= 1");
  ModelSpec::by_name(model, input_size, 10);
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  bool header = false;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (!header) {
      if (line != kHeader) throw ConfigError("config: expected header '" + std::string(kHeader) + "', got '" + line + "'");
      header = true;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config: line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq)), v = trim(line.substr(eq + 1));
    if (key == "model") {
      c.model = v;
    } else if (key == "init") {
      c.init = parse_init_method(v);
    } else if (key == "optimizer") {
      if (v == "sgd-momentum")
        c.optim.kind = OptimKind::sgd_momentum;
      else if (v == "adamw")
        c.optim.kind = OptimKind::adamw;
      else
        throw ConfigError("config: unknown optimizer '" + v + "'");
    } else if (key == "lr") {
      c.optim.lr = c.schedule.peak_lr = to_double(key, v);
    } else if (key == "lr_floor") {
      c.schedule.floor_lr = to_double(key, v);
    } else if (key == "momentum") {
      c.optim.momentum = to_double(key, v);
    } else if (key == "beta1") {
      c.optim.beta1 = to_double(key, v);
    } else if (key == "beta2") {
      c.optim.beta2 = to_double(key, v);
    } else if (key == "weight_decay") {
      c.optim.weight_decay = to_double(key, v);
    } else if (key == "clip") {
      if (v == "none")
        c.optim.clip.reset();
      else
        c.optim.clip = to_double(key, v);
    } else if (key == "warmup_epochs") {
      c.schedule.warmup_epochs = to_double(key, v);
    } else if (key == "epochs") {
      c.schedule.total_epochs = to_double(key, v);
    } else if (key == "batch_size") {
      c.batch_size = to_u64(key, v);
    } else if (key == "seeds") {
      c.seeds.clear();
      std::istringstream ss(v);
      std::string tok;
      while (std::getline(ss, tok, ',')) c.seeds.push_back(to_u64(key, trim(tok)));
    } else if (key == "data") {
      if (v == "synth")
        c.data = DataSource::synth;
      else if (v == "cifar10")
        c.data = DataSource::cifar10;
      else
        throw ConfigError("config: unknown data source '" + v + "'");
    } else if (key == "data_dir") {
      c.data_dir = v;
    } else if (key == "synth_train") {
      c.synth_train = to_u64(key, v);
    } else if (key == "synth_val") {
      c.synth_val = to_u64(key, v);
    } else if (key == "synth_classes") {
      c.synth_classes = to_u64(key, v);
    } else if (key == "synth_seed") {
      c.synth_seed = to_u64(key, v);
    } else if (key == "synth_gain_min") {
      c.synth.gain_min = to_double(key, v);
    } else if (key == "synth_gain_max") {
      c.synth.gain_max = to_double(key, v);
    } else if (key == "synth_nuisance") {
      c.synth.nuisance = to_double(key, v);
    } else if (key == "synth_noise") {
      c.synth.noise = to_double(key, v);
    } else if (key == "train_limit") {
      c.train_limit = to_u64(key, v);
    } else if (key == "val_limit") {
      c.val_limit = to_u64(key, v);
    } else if (key == "input_size") {
      c.input_size = to_u64(key, v);
    } else if (key == "augment") {
      c.augment.policy = parse_augment_policy(v);
    } else if (key == "label_smoothing") {
      c.augment.label_smoothing = to_double(key, v);
    } else if (key == "mixup_alpha") {
      c.augment.mixup_alpha = to_double(key, v);
    } else if (key == "drop_path") {
      if (v == "default")
        c.drop_path.reset();
      else
        c.drop_path = to_double(key, v);
    } else if (key == "threads") {
      c.threads = static_cast<unsigned>(to_u64(key, v));
    } else if (key == "out_dir") {
      c.out_dir = v;
    } else {
      throw ConfigError("config: unknown key '" + key + "' on line " + std::to_string(lineno));
    }
  }
  if (!header) throw ConfigError("config: empty file");
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  try {
    return parse_run_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string format_run_config(const RunConfig& c) {
  std::ostringstream o;
  o << kHeader << "\n";
  o << "model = " << c.model << "\n";
  o << "init = " << to_string(c.init) << "\n";
  o << "optimizer = " << (c.optim.kind == OptimKind::sgd_momentum ? "sgd-momentum" : "adamw") << "\n";
  o << "lr = " << fmt(c.schedule.peak_lr) << "\n";
  o << "lr_floor = " << fmt(c.schedule.floor_lr) << "\n";
  o << "momentum = " << fmt(c.optim.momentum) << "\n";
  o << "beta1 = " << fmt(c.optim.beta1) << "\n";
  o << "beta2 = " << fmt(c.optim.beta2) << "\n";
  o << "weight_decay = " << fmt(c.optim.weight_decay) << "\n";
  o << "clip = " << (c.optim.clip ? fmt(*c.optim.clip) : "none") << "\n";
  o << "warmup_epochs = " << fmt(c.schedule.warmup_epochs) << "\n";
  o << "epochs = " << fmt(c.schedule.total_epochs) << "\n";
  o << "batch_size = " << c.batch_size << "\n";
  o << "seeds = ";
  for (std::size_t i = 0; i < c.seeds.size(); ++i) o << (i ? "," : "") << c.seeds[i];
  o << "\n";
  o << "data = " << (c.data == DataSource::synth ? "synth" : "cifar10") << "\n";
  if (!c.data_dir.empty()) o << "data_dir = " << c.data_dir.string() << "\n";
  o << "synth_train = " << c.synth_train << "\n";
  o << "synth_val = " << c.synth_val << "\n";
  o << "synth_classes = " << c.synth_classes << "\n";
  o << "synth_seed = " << c.synth_seed << "\n";
  o << "synth_gain_min = " << fmt(c.synth.gain_min) << "\n";
  o << "synth_gain_max = " << fmt(c.synth.gain_max) << "\n";
  o << "synth_nuisance = " << fmt(c.synth.nuisance) << "\n";
  o << "synth_noise = " << fmt(c.synth.noise) << "\n";
  o << "train_limit = " << c.train_limit << "\n";
  o << "val_limit = " << c.val_limit << "\n";
  o << "input_size = " << c.input_size << "\n";
  o << "augment = " << to_string(c.augment.policy) << "\n";
  o << "label_smoothing = " << fmt(c.augment.label_smoothing) << "\n";
  o << "mixup_alpha = " << fmt(c.augment.mixup_alpha) << "\n";
  o << "drop_path = " << (c.drop_path ? fmt(*c.drop_path) : "default") << "\n";
  o << "threads = " << c.threads << "\n";
  o << "out_dir = " << c.out_dir.string() << "\n";
  return o.str();
}

}  // namespace neonext

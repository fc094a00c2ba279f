#include "neonext/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>

namespace neonext {

void Dataset::validate() const {
  if (images.dims().n != labels.size())
    throw ShapeError("Dataset: " + std::to_string(images.dims().n) + " images but " + std::to_string(labels.size()) +
                     " labels");
  for (double v : images.data())
    if (!(v >= 0.0 && v <= 1.0)) throw ParamError("Dataset: pixel value outside [0, 1]");
  for (auto l : labels)
    if (l >= classes) throw ParamError("Dataset: label " + std::to_string(l) + " >= classes");
}

Dataset load_cifar_file(const std::filesystem::path& file) {
  std::ifstream f(file, std::ios::binary);
  if (!f) throw IoError("cifar10: missing file " + file.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const std::size_t records = bytes.size() / kCifarRecordBytes;
  if (bytes.size() % kCifarRecordBytes != 0) {
    throw IoError("cifar10: " + file.string() + ": truncated record at byte offset " +
                  std::to_string(records * kCifarRecordBytes) + " (file size " + std::to_string(bytes.size()) + ")");
  }
  if (records == 0) throw IoError("cifar10: " + file.string() + ": no records");
  Dataset ds;
  ds.classes = 10;
  ds.images = Tensor4({records, 3, 32, 32});
  ds.labels.resize(records);
  auto dst = ds.images.data();
  for (std::size_t r = 0; r < records; ++r) {
    const std::size_t off = r * kCifarRecordBytes;
    const std::uint8_t label = bytes[off];
    if (label >= 10) {
      throw IoError("cifar10: " + file.string() + ": label " + std::to_string(label) + " >= 10 at byte offset " +
                    std::to_string(off));
    }
    ds.labels[r] = label;
    for (std::size_t i = 0; i < 3072; ++i) dst[r * 3072 + i] = bytes[off + 1 + i] / 255.0;
  }
  return ds;
}

namespace {

Dataset concat(std::vector<Dataset> parts) {
  std::size_t total = 0;
  for (const auto& p : parts) total += p.size();
  Dataset out;
  out.classes = parts.front().classes;
  const auto& d0 = parts.front().images.dims();
  out.images = Tensor4({total, d0.c, d0.h, d0.w});
  auto dst = out.images.data().begin();
  for (auto& p : parts) {
    dst = std::copy(p.images.data().begin(), p.images.data().end(), dst);
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    p = Dataset{};
  }
  return out;
}

}  // namespace

CifarSplit load_cifar10(const std::filesystem::path& dir) {
  std::vector<Dataset> train;
  for (int i = 1; i <= 5; ++i) train.push_back(load_cifar_file(dir / ("data_batch_" + std::to_string(i) + ".bin")));
  CifarSplit s;
  s.train = concat(std::move(train));
  s.test = load_cifar_file(dir / "test_batch.bin");
  return s;
}

std::filesystem::path cifar10_dir_from_env() {
  const char* v = std::getenv("NEONEXT_CIFAR10_DIR");
  return v ? std::filesystem::path(v) : std::filesystem::path{};
}

namespace {

struct Wave {
  double amp, fx, fy, phase;
};

std::vector<Wave> draw_waves(Rng& rng, std::size_t count) {
  std::vector<Wave> w(count);
  for (auto& v : w) {
    std::size_t fx = 0, fy = 0;
    while (fx == 0 && fy == 0) {
      fx = rng.uniform_int(3);
      fy = rng.uniform_int(3);
    }
    v = {rng.normal(), static_cast<double>(fx), static_cast<double>(fy), 2.0 * std::numbers::pi * rng.uniform()};
  }
  return w;
}

// Sum of waves over an S x S plane, scaled to unit max-abs.
std::vector<double> render(const std::vector<Wave>& waves, std::size_t size) {
  std::vector<double> p(size * size, 0.0);
  for (std::size_t i = 0; i < size; ++i)
    for (std::size_t j = 0; j < size; ++j) {
      double s = 0.0;
      for (const auto& w : waves)
        s += w.amp * std::cos(2.0 * std::numbers::pi * (w.fx * i + w.fy * j) / size + w.phase);
      p[i * size + j] = s;
    }
  double m = 0.0;
  for (double v : p) m = std::max(m, std::abs(v));
  if (m > 0.0)
    for (double& v : p) v /= m;
  return p;
}

}  // namespace

Dataset synth_task(Rng& rng, std::size_t n, std::size_t classes, const SynthOptions& opt) {
  if (classes == 0 || n < classes) throw ParamError("synth_task: need n >= classes >= 1");
  if (opt.image_size == 0 || !(opt.gain_min <= opt.gain_max) || opt.noise < 0.0 || opt.nuisance < 0.0)
    throw ParamError("synth_task: invalid options");
  const std::size_t S = opt.image_size, C = 3;
  std::vector<std::vector<double>> templates;  // class * C + channel
  for (std::size_t k = 0; k < classes; ++k)
    for (std::size_t ch = 0; ch < C; ++ch) templates.push_back(render(draw_waves(rng, 3), S));

  std::vector<std::uint8_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<std::uint8_t>(i % classes);
  for (std::size_t i = n; i > 1; --i) std::swap(labels[i - 1], labels[rng.uniform_int(i)]);

  Dataset ds;
  ds.classes = classes;
  ds.images = Tensor4({n, C, S, S});
  ds.labels = labels;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < C; ++ch) {
      const auto& tmpl = templates[labels[i] * C + ch];
      const auto nuisance = render(draw_waves(rng, 2), S);
      const double gain = opt.gain_min + (opt.gain_max - opt.gain_min) * rng.uniform();
      auto dst = ds.images.plane(i, ch);
      for (std::size_t p = 0; p < S * S; ++p) {
        const double v = 0.5 + gain * tmpl[p] + opt.nuisance * nuisance[p] + opt.noise * rng.normal();
        dst[p] = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return ds;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  write_tensor(dir / "images.bin", ds.images);
  std::vector<double> labels(ds.labels.begin(), ds.labels.end());
  labels.push_back(static_cast<double>(ds.classes));
  const std::size_t count = labels.size();
  write_tensor(dir / "labels.bin", Tensor4({1, 1, 1, count}, std::move(labels)));
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.images = read_tensor(dir / "images.bin");
  const Tensor4 l = read_tensor(dir / "labels.bin");
  auto v = l.data();
  if (v.size() != ds.images.dims().n + 1) throw IoError(dir.string() + ": label count does not match images");
  ds.classes = static_cast<std::size_t>(v.back());
  for (std::size_t i = 0; i + 1 < v.size(); ++i) ds.labels.push_back(static_cast<std::uint8_t>(v[i]));
  ds.validate();
  return ds;
}

Dataset subset(const Dataset& ds, std::span<const std::size_t> indices) {
  const auto& d = ds.images.dims();
  Dataset out;
  out.classes = ds.classes;
  out.images = Tensor4({indices.size(), d.c, d.h, d.w});
  const std::size_t per = d.c * d.h * d.w;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= ds.size()) throw ShapeError("subset: index out of range");
    std::copy_n(ds.images.data().begin() + static_cast<std::ptrdiff_t>(indices[i] * per), per,
                out.images.data().begin() + static_cast<std::ptrdiff_t>(i * per));
    out.labels.push_back(ds.labels[indices[i]]);
  }
  return out;
}

HoldoutSplit holdout_split(const Dataset& ds, std::size_t val_count, Rng& rng) {
  if (val_count == 0 || val_count >= ds.size()) throw ParamError("holdout_split: val_count must be in (0, n)");
  std::vector<std::size_t> perm(ds.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_int(i)]);
  HoldoutSplit s;
  s.val_indices.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(val_count));
  s.train_indices.assign(perm.begin() + static_cast<std::ptrdiff_t>(val_count), perm.end());
  std::sort(s.val_indices.begin(), s.val_indices.end());
  std::sort(s.train_indices.begin(), s.train_indices.end());
  s.train = subset(ds, s.train_indices);
  s.val = subset(ds, s.val_indices);
  return s;
}

std::vector<std::vector<std::size_t>> plan_batches(const BatchPlan& plan, std::size_t dataset_size) {
  if (plan.batch_size == 0) throw ParamError("plan_batches: batch size must be positive");
  std::vector<std::size_t> order(dataset_size);
  for (std::size_t i = 0; i < dataset_size; ++i) order[i] = i;
  if (plan.shuffle) {
    Rng rng = Rng(plan.seed).fork(plan.epoch);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(i)]);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t b = 0; b < dataset_size; b += plan.batch_size) {
    const std::size_t e = std::min(dataset_size, b + plan.batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b), order.begin() + static_cast<std::ptrdiff_t>(e));
  }
  return batches;
}

Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices) {
  Dataset sub = subset(ds, indices);
  Batch b;
  b.images = std::move(sub.images);
  b.targets = Tensor4({indices.size(), ds.classes, 1, 1});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    b.labels.push_back(sub.labels[i]);
    b.targets.at(i, sub.labels[i], 0, 0) = 1.0;
  }
  return b;
}

AugmentPolicy parse_augment_policy(const std::string& name) {
  if (name == "none") return AugmentPolicy::none;
  if (name == "basic") return AugmentPolicy::basic;
  if (name == "basic+mixup") return AugmentPolicy::basic_mixup;
  throw ConfigError("unknown augmentation policy '" + name + "' (expected none|basic|basic+mixup)");
}

std::string to_string(AugmentPolicy p) {
  switch (p) {
    case AugmentPolicy::none: return "none";
    case AugmentPolicy::basic: return "basic";
    case AugmentPolicy::basic_mixup: return "basic+mixup";
  }
  return "?";
}

void hflip_inplace(Tensor4& images, std::size_t sample) {
  const auto& d = images.dims();
  for (std::size_t c = 0; c < d.c; ++c) {
    auto p = images.plane(sample, c);
    for (std::size_t i = 0; i < d.h; ++i) std::reverse(p.begin() + i * d.w, p.begin() + (i + 1) * d.w);
  }
}

void crop_inplace(Tensor4& images, std::size_t sample, std::size_t pad, std::size_t dy, std::size_t dx) {
  if (dy > 2 * pad || dx > 2 * pad) throw ParamError("crop_inplace: offset beyond padding");
  const auto& d = images.dims();
  std::vector<double> src;
  for (std::size_t c = 0; c < d.c; ++c) {
    auto p = images.plane(sample, c);
    src.assign(p.begin(), p.end());
    for (std::size_t i = 0; i < d.h; ++i)
      for (std::size_t j = 0; j < d.w; ++j) {
        // padded coordinate (i + dy, j + dx) maps to source (i + dy - pad, j + dx - pad)
        const long si = static_cast<long>(i + dy) - static_cast<long>(pad);
        const long sj = static_cast<long>(j + dx) - static_cast<long>(pad);
        const bool inside = si >= 0 && sj >= 0 && si < static_cast<long>(d.h) && sj < static_cast<long>(d.w);
        p[i * d.w + j] = inside ? src[static_cast<std::size_t>(si) * d.w + static_cast<std::size_t>(sj)] : 0.0;
      }
  }
}

void mixup_inplace(Batch& b, double lam) {
  if (!(lam >= 0.0 && lam <= 1.0)) throw ParamError("mixup: lambda must be in [0, 1]");
  const Tensor4 images = b.images, targets = b.targets;
  const std::size_t n = b.images.dims().n;
  const std::size_t per_img = images.size() / n, per_tgt = targets.size() / n;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = n - 1 - i;
    for (std::size_t k = 0; k < per_img; ++k)
      b.images.data()[i * per_img + k] = lam * images.data()[i * per_img + k] + (1.0 - lam) * images.data()[j * per_img + k];
    for (std::size_t k = 0; k < per_tgt; ++k)
      b.targets.data()[i * per_tgt + k] =
          lam * targets.data()[i * per_tgt + k] + (1.0 - lam) * targets.data()[j * per_tgt + k];
  }
}

void smooth_labels_inplace(Batch& b, double smoothing) {
  if (!(smoothing >= 0.0 && smoothing < 1.0)) throw ParamError("label smoothing must be in [0, 1)");
  const double k = static_cast<double>(b.targets.dims().c);
  for (double& v : b.targets.data()) v = (1.0 - smoothing) * v + smoothing / k;
}

Batch augment(Batch b, Rng& rng, const AugmentOptions& opt) {
  if (opt.policy != AugmentPolicy::none) {
    const std::size_t n = b.images.dims().n;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t dy = rng.uniform_int(2 * opt.crop_pad + 1);
      const std::size_t dx = rng.uniform_int(2 * opt.crop_pad + 1);
      crop_inplace(b.images, i, opt.crop_pad, dy, dx);
      if (rng.uniform() < 0.5) hflip_inplace(b.images, i);
    }
    if (opt.policy == AugmentPolicy::basic_mixup) mixup_inplace(b, rng.beta(opt.mixup_alpha, opt.mixup_alpha));
  }
  if (opt.label_smoothing > 0.0) smooth_labels_inplace(b, opt.label_smoothing);
  return b;
}

}  // namespace neonext

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "neonext/rng.hpp"
#include "neonext/tensor.hpp"

namespace neonext {

struct Dataset {
  Tensor4 images;                  // (n, 3, H, W), values in [0, 1]
  std::vector<std::uint8_t> labels;
  std::size_t classes = 10;

  std::size_t size() const { return labels.size(); }
  void validate() const;
};

struct CifarSplit {
  Dataset train, test;
};

// CIFAR-10 binary layout: records of 1 label byte + 3072 channel-major pixel
// bytes (R plane, G plane, B plane; 32x32 each, row-major).
inline constexpr std::size_t kCifarRecordBytes = 3073;

Dataset load_cifar_file(const std::filesystem::path& file);
// data_batch_1.bin .. data_batch_5.bin and test_batch.bin under dir.
CifarSplit load_cifar10(const std::filesystem::path& dir);
// Directory from NEONEXT_CIFAR10_DIR, or empty when unset.
std::filesystem::path cifar10_dir_from_env();

// Procedural stand-in: each class owns a fixed low-frequency template; a
// sample is 0.5 + gain * template + nuisance * (random low-frequency field)
// + noise * N(0, 1) per pixel, clamped to [0, 1], with gain drawn uniformly
// from [gain_min, gain_max]. Labels are balanced (counts differ by at most one).
struct SynthOptions {
  std::size_t image_size = 32;
  double gain_min = 0.2, gain_max = 0.35;
  double nuisance = 0.15;
  double noise = 0.08;
};
Dataset synth_task(Rng& rng, std::size_t n, std::size_t classes, const SynthOptions& opt = {});

void save_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& dir);

Dataset subset(const Dataset& ds, std::span<const std::size_t> indices);

struct HoldoutSplit {
  Dataset train, val;
  std::vector<std::size_t> train_indices, val_indices;
};
// Seeded random holdout of val_count samples.
HoldoutSplit holdout_split(const Dataset& ds, std::size_t val_count, Rng& rng);

struct BatchPlan {
  std::uint64_t seed = 0;
  std::size_t batch_size = 64;
  bool shuffle = true;
  std::size_t epoch = 0;
};

// Index lists for one epoch; the last batch may be short. A pure function of
// (plan, dataset size).
std::vector<std::vector<std::size_t>> plan_batches(const BatchPlan& plan, std::size_t dataset_size);

struct Batch {
  Tensor4 images;
  Tensor4 targets;  // (n, K, 1, 1) probabilities
  std::vector<std::size_t> labels;
};

Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices);

enum class AugmentPolicy { none, basic, basic_mixup };
AugmentPolicy parse_augment_policy(const std::string& name);
std::string to_string(AugmentPolicy p);

struct AugmentOptions {
  AugmentPolicy policy = AugmentPolicy::none;
  double label_smoothing = 0.0;
  double mixup_alpha = 0.8;
  std::size_t crop_pad = 4;
};

void hflip_inplace(Tensor4& images, std::size_t sample);
// Zero-pad by `pad` then take the window at (dy, dx) in [0, 2*pad].
void crop_inplace(Tensor4& images, std::size_t sample, std::size_t pad, std::size_t dy, std::size_t dx);
// x_i <- lam x_i + (1 - lam) x_{n-1-i}, same for targets.
void mixup_inplace(Batch& b, double lam);
void smooth_labels_inplace(Batch& b, double smoothing);

// basic: random crop (pad 4) and horizontal flip (p = 0.5) per sample;
// basic_mixup adds mixup with lambda ~ Beta(alpha, alpha). Label smoothing is
// applied last whenever it is non-zero, under any policy.
Batch augment(Batch b, Rng& rng, const AugmentOptions& opt);

}  // namespace neonext

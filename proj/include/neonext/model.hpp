#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "neonext/autodiff.hpp"
#include "neonext/layers.hpp"
#include "neonext/neocell.hpp"
#include "neonext/rng.hpp"

namespace neonext {

// NeoCell layout for the blocks of one stage: channels split into equal parts
// (remainder to the earliest), one square matrix size per part. With shifts,
// a part of size k is further split into k subgroups shifted by 0..k-1.
struct StagePolicy {
  std::vector<std::size_t> sizes;
  bool shifts = false;
};

enum class InitMethod { neoinit, random_normal };

struct BlockSpec {
  std::size_t channels = 0;
  NeoCellSpec neocell;
  std::size_t expansion = 4;
  double drop_path = 0.0;

  void validate() const;
};

struct ModelSpec {
  std::string name = "custom";
  std::array<std::size_t, 4> depths{};
  std::array<std::size_t, 4> widths{};
  std::array<StagePolicy, 4> policies{};
  std::size_t stem_patch = 4;
  std::size_t in_channels = 3;
  std::size_t input_size = 224;
  std::size_t classes = 1000;
  std::size_t expansion = 4;
  double drop_path = 0.0;  // rate of the last block; earlier blocks ramp linearly from 0
  bool block_neocell_bias = true;

  void validate() const;

  static ModelSpec neonext_t(std::size_t input_size = 224, std::size_t classes = 1000);
  static ModelSpec neonext_s(std::size_t input_size = 224, std::size_t classes = 1000);
  static ModelSpec neonext_b(std::size_t input_size = 224, std::size_t classes = 1000);
  static ModelSpec micro(std::size_t input_size = 32, std::size_t classes = 10);
  static ModelSpec by_name(const std::string& name, std::size_t input_size, std::size_t classes);
};

// Matrix sizes tried, in order, when a stage's spatial size is not divisible
// by the policy size.
inline constexpr std::array<std::size_t, 4> kFallbackSizes{7, 4, 2, 1};

// Group list for `channels` channels at spatial size `spatial` under `policy`.
// Substitutions performed are appended to `notes`.
NeoCellSpec stage_neocell_spec(std::size_t channels, std::size_t spatial, const StagePolicy& policy,
                               bool use_bias, std::vector<std::string>* notes = nullptr);

struct ForwardOptions {
  BatchNormMode mode = BatchNormMode::eval;
  Rng* drop_rng = nullptr;     // required for drop-path in train mode
  bool track_params = true;    // record parameters as tape leaves
  ad::NeoCellPath path = ad::NeoCellPath::patchwise;
  unsigned threads = 1;
};

class Model {
 public:
  struct NeoCellLayer {
    NeoCellSpec spec;
    std::vector<std::size_t> left, right, bias;  // parameter indices per group
  };
  struct PointwiseLayer {
    std::size_t weight = 0;
    std::optional<std::size_t> bias;
  };
  struct NormLayer {
    std::size_t gamma = 0, beta = 0, state = 0;
  };
  struct Block {
    std::string name;
    NeoCellLayer neocell;
    NormLayer norm;
    PointwiseLayer expand, project;
    double drop_path = 0.0;
  };
  struct Downsample {
    std::string name;
    NeoCellLayer neocell;
    NormLayer norm1;
    PointwiseLayer pointwise;
    NormLayer norm2;
  };

  const ModelSpec& spec() const { return spec_; }
  std::vector<ad::Parameter>& parameters() { return params_; }
  const std::vector<ad::Parameter>& parameters() const { return params_; }
  std::vector<BatchNormState>& norm_states() { return norm_states_; }
  const std::vector<BatchNormState>& norm_states() const { return norm_states_; }
  const std::vector<std::vector<Block>>& stages() const { return stages_; }
  std::vector<std::vector<Block>>& stages() { return stages_; }
  const std::vector<std::string>& substitutions() const { return substitutions_; }
  ad::Parameter& parameter(const std::string& name);

  std::size_t parameter_count() const;
  // Analytic per-block count: NeoCell matrices and bias + 2C norm + expand
  // (C*eC + eC) + project (eC*C + C).
  static std::size_t block_parameter_count(const BlockSpec& b);
  BlockSpec block_spec(std::size_t stage, std::size_t index) const;
  // Sum of the allocated parameter sizes under "<block name>."
  std::size_t allocated_block_parameters(std::size_t stage, std::size_t index) const;

  // Logits (n, classes, 1, 1).
  ad::Var forward(ad::Tape& t, ad::Var x, const ForwardOptions& opt);
  Tensor4 predict(const Tensor4& x, unsigned threads = 1);

  // Human-readable listing of every layer, its groups, shifts and counts.
  std::string manifest() const;

  void save_checkpoint(const std::filesystem::path& dir) const;
  void load_checkpoint(const std::filesystem::path& dir);

 private:
  friend Model build_model(const ModelSpec& spec, Rng& rng, InitMethod init);

  std::size_t add_param(std::string name, Tensor4 value, bool decay);
  std::size_t add_norm(const std::string& name, std::size_t channels, NormLayer& out);
  NeoCellLayer add_neocell(const std::string& name, const NeoCellSpec& spec, Rng& rng, InitMethod init);
  PointwiseLayer add_pointwise(const std::string& name, std::size_t c_in, std::size_t c_out, Rng& rng);

  ModelSpec spec_;
  std::vector<ad::Parameter> params_;
  std::vector<BatchNormState> norm_states_;
  std::size_t stem_patch_ = 4;
  PointwiseLayer stem_pw_;
  NormLayer stem_norm_;
  std::vector<std::vector<Block>> stages_;
  std::vector<Downsample> downsamples_;
  NormLayer head_norm_;
  PointwiseLayer head_fc_;
  std::vector<std::string> substitutions_;
};

// Stem: space_to_depth(p) -> pointwise -> BN. Blocks: NeoCell -> BN ->
// pointwise expand -> GELU -> pointwise project -> drop-path -> residual add.
// Downsample between stages: NeoCell(2->1, 2->1) -> BN -> GELU -> pointwise
// -> BN -> GELU. Head: global average pool -> BN -> linear.
// NeoCell matrices use NeoInit (or the random-normal baseline); pointwise
// weights are N(0, 1/fan_in) with zero bias; BN starts at gamma 1, beta 0.
Model build_model(const ModelSpec& spec, Rng& rng, InitMethod init = InitMethod::neoinit);

}  // namespace neonext

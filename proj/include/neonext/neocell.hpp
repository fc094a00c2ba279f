#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "neonext/tensor.hpp"

namespace neonext {

// A contiguous channel range sharing one matrix geometry and one spatial shift.
// Input patches are h x w, output patches h_out x w_out.
struct GroupSpec {
  std::size_t begin = 0, end = 0;  // channels [begin, end)
  std::size_t h = 1, w = 1;
  std::size_t h_out = 1, w_out = 1;
  std::size_t shift = 0;

  std::size_t channels() const { return end - begin; }
  bool resamples() const { return h != h_out || w != w_out; }
  void validate() const;
  bool operator==(const GroupSpec&) const = default;
};

struct NeoCellSpec {
  std::vector<GroupSpec> groups;  // ordered by channel range
  bool use_bias = false;

  std::size_t channels() const;
  // Structural checks: ranges disjoint and covering [0, C), group invariants.
  void validate() const;
  // Divisibility of (H, W) by every group and agreement on the output size.
  void validate_input(std::size_t height, std::size_t width) const;
  const GroupSpec& group_of(std::size_t channel) const;
  bool operator==(const NeoCellSpec&) const = default;
};

// Per-channel weights. bias is empty when NeoCellSpec::use_bias is false.
struct NeoCellParams {
  std::vector<Matrix> left;   // h_out x h
  std::vector<Matrix> right;  // w x w_out
  std::vector<Matrix> bias;   // h_out x w_out

  static NeoCellParams zeros(const NeoCellSpec& spec);
  void validate(const NeoCellSpec& spec) const;
  std::size_t parameter_count() const;
};

Dims4 output_shape(const NeoCellSpec& spec, const Dims4& in);

// Reference path: explicit patch split with two small products per patch.
// Work is split over (batch, channel) planes when threads > 1; the result does
// not depend on the thread count.
Tensor4 forward_patchwise(const Tensor4& x, const NeoCellSpec& spec, const NeoCellParams& params,
                          unsigned threads = 1);

// Same computation with an exact count of scalar multiplications performed by
// the patch kernels.
std::pair<Tensor4, std::uint64_t> forward_patchwise_counted(const Tensor4& x,
                                                            const NeoCellSpec& spec,
                                                            const NeoCellParams& params);

// A (out_h x H) and B (W x out_w): left/right repeated along the block
// diagonal; for shift s the cyclic conjugate P_s A P_s^-1 with wraparound
// corner blocks.
std::pair<Matrix, Matrix> materialize_block_diagonal(const GroupSpec& group, const Matrix& left,
                                                     const Matrix& right, std::size_t height,
                                                     std::size_t width);

// Y_c = A_c X_c B_c on whole planes, skipping structural zeros of A_c and B_c.
Tensor4 forward_blockdiag(const Tensor4& x, const NeoCellSpec& spec, const NeoCellParams& params,
                          unsigned threads = 1);

// Directory layout: manifest.txt listing the group specs, plus one tensor file
// per group and weight kind, <layer>.g<i>.<left|right|bias>.bin, with dims
// (1, group channels, rows, cols).
void save_neocell(const std::filesystem::path& dir, const std::string& layer,
                  const NeoCellSpec& spec, const NeoCellParams& params);
std::pair<NeoCellSpec, NeoCellParams> load_neocell(const std::filesystem::path& dir,
                                                   const std::string& layer);

std::string describe(const GroupSpec& g);

}  // namespace neonext

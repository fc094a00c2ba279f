#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "neonext/autodiff.hpp"
#include "neonext/neocell.hpp"
#include "neonext/rng.hpp"

namespace neonext {

// One randomized NeoCell configuration with input and weights.
struct EquivCase {
  std::string kind;  // "square", "down2to1", "up2to3", "rect"
  NeoCellSpec spec;
  NeoCellParams params;
  Tensor4 x;
};

// Mixed 4x4/7x7 square groups with shifts 0..k-1, resampling 2->1 and 2->3
// groups, and rectangular patches. Inputs are at most 2 x 8 x 56 x 56.
EquivCase random_equiv_case(Rng& rng);

struct EquivResult {
  std::string kind;
  std::string groups;
  Dims4 input;
  double max_abs_diff = 0.0;
};
EquivResult run_equiv_case(const EquivCase& c, unsigned threads = 1);

// Gradient-check targets: neocell, neocell-blockdiag, pointwise,
// batchnorm-train, batchnorm-eval, gelu, micro. "all" runs every target.
std::vector<std::string> gradcheck_targets();
// max_per_param caps the entries checked per tensor (sampled with the seed);
// 0 checks every entry.
FdReport gradcheck(const std::string& target, std::uint64_t seed, double eps = 1e-5, double threshold = 1e-4,
                   std::size_t max_per_param = 0);

}  // namespace neonext

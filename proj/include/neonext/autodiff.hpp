#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "neonext/layers.hpp"
#include "neonext/neocell.hpp"
#include "neonext/tensor.hpp"

namespace neonext {

// Gradients of one NeoCell application.
struct NeoCellGrads {
  Tensor4 x;
  NeoCellParams params;
};

// Per patch, with G the output-patch gradient:
//   dL += G (X R)^T,  dR += (L X)^T G,  dX = L^T G R^T,  dBias += G.
// Weight gradients are accumulated channel by channel, batch then patch in
// ascending order. Shifted groups pass the gradients through the same rolls as
// the forward.
NeoCellGrads neocell_backward(const Tensor4& x, const NeoCellSpec& spec, const NeoCellParams& params,
                              const Tensor4& grad_out, unsigned threads = 1);

namespace ad {

struct Parameter {
  std::string name;
  Tensor4 value;
  bool decay = true;  // false for norm scales/shifts and biases
};

// Parameter name -> gradient of identical dims.
using Grads = std::map<std::string, Tensor4>;

struct Var {
  std::size_t id = 0;
};

class Tape;
using BackwardFn = std::function<void(Tape&, const Tensor4& grad_out)>;

// Records operations in forward order; backward() walks them in exact
// reverse. A tape supports a single backward pass.
class Tape {
 public:
  Var constant(Tensor4 value);
  // Leaf for a parameter. Registering the same parameter twice returns the
  // same leaf, so its gradient is reported once.
  Var param(Parameter& p);
  Var record(Tensor4 value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor4& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient buffer for v, zero-initialized on first use.
  Tensor4& grad(Var v);
  void accumulate(Var v, const Tensor4& g);

  Grads backward(Var loss, double loss_grad = 1.0);

 private:
  struct Node {
    Tensor4 value;
    Tensor4 grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Matrices are carried as 1 x 1 x rows x cols tensors.
Var matmul(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);
// Sum of x * weights (weights constant, same dims as x) -> 1x1x1x1 scalar.
Var weighted_sum(Tape& t, Var x, const Tensor4& weights);

// NeoCell weights grouped as in the model: per spec group a left tensor
// (1, C_g, h_out, h), right (1, C_g, w, w_out) and, with bias, (1, C_g, h_out, w_out).
struct NeoCellVars {
  std::vector<Var> left, right, bias;
};
enum class NeoCellPath { patchwise, blockdiag };

NeoCellParams gather_neocell_params(const NeoCellSpec& spec, const std::vector<const Tensor4*>& left,
                                    const std::vector<const Tensor4*>& right,
                                    const std::vector<const Tensor4*>& bias);
Var neocell(Tape& t, Var x, const NeoCellSpec& spec, const NeoCellVars& w,
            NeoCellPath path = NeoCellPath::patchwise, unsigned threads = 1);

// weight (1, 1, c_out, c_in); bias optional (1, 1, 1, c_out).
Var pointwise_conv(Tape& t, Var x, Var weight, const Var* bias);
// gamma/beta are (1, 1, 1, C). In train mode the running statistics are
// updated as a side effect of recording.
Var batchnorm(Tape& t, Var x, Var gamma, Var beta, BatchNormState& state, BatchNormMode mode);
Var gelu(Tape& t, Var x);
Var space_to_depth(Tape& t, Var x, std::size_t patch);
Var global_avg_pool(Tape& t, Var x);
// Multiplies sample n by scale[n] (drop-path mask).
Var scale_samples(Tape& t, Var x, std::vector<double> scale);
// Mean over the batch of -sum_k target[n][k] * log_softmax(logits[n])[k].
// logits (n, K, 1, 1); targets n rows of K probabilities.
Var soft_cross_entropy(Tape& t, Var logits, const Tensor4& targets);

}  // namespace ad

// Central finite-difference verification of analytic gradients.
struct FdEntry {
  std::string name;
  std::span<double> values;          // perturbed in place, restored afterwards
  std::span<const double> analytic;  // same length as values
  std::vector<std::size_t> indices;  // subset to check; empty = all
};

struct FdParamResult {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0, worst_numeric = 0.0;
  bool pass = true;
};

struct FdReport {
  std::vector<FdParamResult> params;
  double eps = 0.0, threshold = 0.0;
  bool pass() const;
  double max_rel_error() const;
};

// Relative error per entry: |a - n| / max(|a|, |n|, denom_floor), with
// n = (f(p + eps) - f(p - eps)) / (2 eps). A non-finite loss raises
// NumericError naming the parameter and index. The floor keeps gradients
// that are exactly zero (a bias feeding batch-statistics normalization) from
// being judged on central-difference round-off, which is about 1e-10 for an
// O(1) loss at eps = 1e-5.
FdReport fd_check(const std::function<double()>& loss, std::vector<FdEntry> entries, double eps,
                  double threshold, double denom_floor = 1e-5);

std::string format_report(const FdReport& r);

}  // namespace neonext

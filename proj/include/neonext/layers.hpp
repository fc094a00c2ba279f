#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "neonext/tensor.hpp"

namespace neonext {

// (n, c, H, W) -> (n, c*p*p, H/p, W/p). Output channel c*p*p + di*p + dj holds
// input pixels (i*p + di, j*p + dj).
Tensor4 space_to_depth(const Tensor4& x, std::size_t patch);
Tensor4 depth_to_space(const Tensor4& x, std::size_t patch);

// Per-pixel channel mixing: y[n, o, :, :] = sum_i weight(o, i) x[n, i, :, :] + bias[o].
// weight is c_out x c_in; bias is empty or c_out long.
Tensor4 pointwise_conv(const Tensor4& x, const Matrix& weight, std::span<const double> bias = {});

// (n, c, h, w) <-> row-major c x (n*h*w) buffer, used to run pointwise
// convolutions as one product over the whole batch.
std::vector<double> to_channel_major(const Tensor4& x);
Tensor4 from_channel_major(std::span<const double> buf, const Dims4& d);

enum class BatchNormMode { train, eval };

// Running statistics. Train mode blends batch statistics in with
// running = (1 - momentum) * running + momentum * batch, using the unbiased
// batch variance for the running estimate (the biased one for normalizing).
struct BatchNormState {
  std::vector<double> mean, var;
  double momentum = 0.1;
  double eps = 1e-5;

  static BatchNormState fresh(std::size_t channels);
};

struct ChannelMoments {
  std::vector<double> mean, var;  // biased variance
};
ChannelMoments channel_moments(const Tensor4& x);

Tensor4 batchnorm_forward(const Tensor4& x, std::span<const double> gamma, std::span<const double> beta,
                          BatchNormState& state, BatchNormMode mode);

double gelu(double x);
double gelu_grad(double x);
Tensor4 gelu(const Tensor4& x);

}  // namespace neonext

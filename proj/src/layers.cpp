#include "neonext/layers.hpp"

#include <cmath>
#include <numbers>

namespace neonext {

Tensor4 space_to_depth(const Tensor4& x, std::size_t patch) {
  const auto& d = x.dims();
  if (patch == 0 || d.h % patch != 0 || d.w % patch != 0) {
    throw ShapeError("space_to_depth: " + std::to_string(d.h) + "x" + std::to_string(d.w) +
                     " not divisible by patch " + std::to_string(patch));
  }
  const std::size_t p = patch, oh = d.h / p, ow = d.w / p;
  Tensor4 y({d.n, d.c * p * p, oh, ow});
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t c = 0; c < d.c; ++c)
      for (std::size_t di = 0; di < p; ++di)
        for (std::size_t dj = 0; dj < p; ++dj) {
          auto dst = y.plane(n, c * p * p + di * p + dj);
          for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) dst[i * ow + j] = x.at(n, c, i * p + di, j * p + dj);
        }
  return y;
}

Tensor4 depth_to_space(const Tensor4& x, std::size_t patch) {
  const auto& d = x.dims();
  const std::size_t p = patch;
  if (p == 0 || d.c % (p * p) != 0)
    throw ShapeError("depth_to_space: channels " + std::to_string(d.c) + " not divisible by patch^2");
  Tensor4 y({d.n, d.c / (p * p), d.h * p, d.w * p});
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t c = 0; c < y.dims().c; ++c)
      for (std::size_t di = 0; di < p; ++di)
        for (std::size_t dj = 0; dj < p; ++dj) {
          auto src = x.plane(n, c * p * p + di * p + dj);
          for (std::size_t i = 0; i < d.h; ++i)
            for (std::size_t j = 0; j < d.w; ++j) y.at(n, c, i * p + di, j * p + dj) = src[i * d.w + j];
        }
  return y;
}

std::vector<double> to_channel_major(const Tensor4& x) {
  const auto& d = x.dims();
  const std::size_t hw = d.h * d.w, cols = d.n * hw;
  std::vector<double> buf(x.size());
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t c = 0; c < d.c; ++c) {
      auto src = x.plane(n, c);
      std::copy(src.begin(), src.end(), buf.begin() + static_cast<std::ptrdiff_t>(c * cols + n * hw));
    }
  return buf;
}

Tensor4 from_channel_major(std::span<const double> buf, const Dims4& d) {
  const std::size_t hw = d.h * d.w, cols = d.n * hw;
  Tensor4 y(d);
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t c = 0; c < d.c; ++c) {
      auto dst = y.plane(n, c);
      std::copy_n(buf.begin() + static_cast<std::ptrdiff_t>(c * cols + n * hw), hw, dst.begin());
    }
  return y;
}

Tensor4 pointwise_conv(const Tensor4& x, const Matrix& weight, std::span<const double> bias) {
  const auto& d = x.dims();
  if (weight.cols() != d.c) {
    throw ShapeError("pointwise_conv: weight is " + std::to_string(weight.rows()) + "x" +
                     std::to_string(weight.cols()) + ", input has " + std::to_string(d.c) + " channels");
  }
  if (!bias.empty() && bias.size() != weight.rows())
    throw ShapeError("pointwise_conv: bias length " + std::to_string(bias.size()) + " != c_out");
  const std::size_t cols = d.n * d.h * d.w, co = weight.rows();
  const std::vector<double> xb = to_channel_major(x);
  std::vector<double> yb(co * cols, 0.0);
  if (!bias.empty())
    for (std::size_t o = 0; o < co; ++o) std::fill(yb.begin() + o * cols, yb.begin() + (o + 1) * cols, bias[o]);
  kernel::gemm_nn(co, d.c, cols, weight.data().data(), d.c, xb.data(), cols, yb.data(), cols);
  return from_channel_major(yb, {d.n, co, d.h, d.w});
}

BatchNormState BatchNormState::fresh(std::size_t channels) {
  BatchNormState s;
  s.mean.assign(channels, 0.0);
  s.var.assign(channels, 1.0);
  return s;
}

ChannelMoments channel_moments(const Tensor4& x) {
  const auto& d = x.dims();
  const double count = static_cast<double>(d.n * d.h * d.w);
  ChannelMoments m{std::vector<double>(d.c, 0.0), std::vector<double>(d.c, 0.0)};
  for (std::size_t c = 0; c < d.c; ++c) {
    double s = 0.0;
    for (std::size_t n = 0; n < d.n; ++n)
      for (double v : x.plane(n, c)) s += v;
    const double mean = s / count;
    double ss = 0.0;
    for (std::size_t n = 0; n < d.n; ++n)
      for (double v : x.plane(n, c)) ss += (v - mean) * (v - mean);
    m.mean[c] = mean;
    m.var[c] = ss / count;
  }
  return m;
}

Tensor4 batchnorm_forward(const Tensor4& x, std::span<const double> gamma, std::span<const double> beta,
                          BatchNormState& state, BatchNormMode mode) {
  const auto& d = x.dims();
  if (gamma.size() != d.c || beta.size() != d.c || state.mean.size() != d.c || state.var.size() != d.c)
    throw ShapeError("batchnorm: per-channel parameter length does not match " + std::to_string(d.c) + " channels");
  std::vector<double> mean = state.mean, var = state.var;
  if (mode == BatchNormMode::train) {
    auto m = channel_moments(x);
    const double count = static_cast<double>(d.n * d.h * d.w);
    const double unbias = count > 1 ? count / (count - 1.0) : 1.0;
    for (std::size_t c = 0; c < d.c; ++c) {
      state.mean[c] = (1.0 - state.momentum) * state.mean[c] + state.momentum * m.mean[c];
      state.var[c] = (1.0 - state.momentum) * state.var[c] + state.momentum * m.var[c] * unbias;
    }
    mean = std::move(m.mean);
    var = std::move(m.var);
  }
  Tensor4 y(d);
  for (std::size_t c = 0; c < d.c; ++c) {
    const double inv_std = 1.0 / std::sqrt(var[c] + state.eps);
    for (std::size_t n = 0; n < d.n; ++n) {
      auto src = x.plane(n, c);
      auto dst = y.plane(n, c);
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = (src[i] - mean[c]) * inv_std * gamma[c] + beta[c];
    }
  }
  return y;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) * 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
  return cdf + x * pdf;
}

Tensor4 gelu(const Tensor4& x) {
  Tensor4 y(x.dims());
  auto src = x.data();
  auto dst = y.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = gelu(src[i]);
  return y;
}

}  // namespace neonext

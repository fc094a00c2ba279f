#include "neonext/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "neonext/parallel.hpp"

namespace neonext {

namespace {

void unroll_plane(std::span<const double> in, std::size_t height, std::size_t width, std::size_t s,
                  std::vector<double>& out) {
  out.resize(height * width);
  for (std::size_t i = 0; i < height; ++i) {
    const std::size_t si = (i + s) % height;
    for (std::size_t j = 0; j < width; ++j) out[i * width + j] = in[si * width + (j + s) % width];
  }
}

void roll_plane_into(std::span<const double> in, std::size_t height, std::size_t width, std::size_t s,
                     std::span<double> out) {
  for (std::size_t i = 0; i < height; ++i) {
    const std::size_t si = (i + height - s) % height;
    for (std::size_t j = 0; j < width; ++j) out[i * width + j] = in[si * width + (j + width - s) % width];
  }
}

}  // namespace

NeoCellGrads neocell_backward(const Tensor4& x, const NeoCellSpec& spec, const NeoCellParams& params,
                              const Tensor4& grad_out, unsigned threads) {
  const Dims4 od = output_shape(spec, x.dims());
  params.validate(spec);
  if (grad_out.dims() != od) {
    throw ShapeError("neocell_backward: grad_out is " + to_string(grad_out.dims()) + ", expected " +
                     to_string(od));
  }
  const auto& d = x.dims();
  NeoCellGrads out{Tensor4(d), NeoCellParams::zeros(spec)};

  detail::parallel_for(d.c, threads, [&](std::size_t cb, std::size_t ce) {
    std::vector<double> xr, gr, gx_staged, xr_patch, lx, ltg;
    for (std::size_t c = cb; c < ce; ++c) {
      const auto& g = spec.group_of(c);
      const Matrix& L = params.left[c];
      const Matrix& R = params.right[c];
      Matrix& gL = out.params.left[c];
      Matrix& gR = out.params.right[c];
      Matrix* gB = spec.use_bias ? &out.params.bias[c] : nullptr;
      const std::size_t ph = d.h / g.h, pw = d.w / g.w;
      xr_patch.assign(g.h * g.w_out, 0.0);
      lx.assign(g.h_out * g.w, 0.0);
      ltg.assign(g.h * g.w_out, 0.0);
      for (std::size_t n = 0; n < d.n; ++n) {
        const double* xp = x.plane(n, c).data();
        const double* gp = grad_out.plane(n, c).data();
        double* gxp = out.x.plane(n, c).data();
        if (g.shift > 0) {
          unroll_plane(x.plane(n, c), d.h, d.w, g.shift, xr);
          unroll_plane(grad_out.plane(n, c), od.h, od.w, g.shift, gr);
          gx_staged.assign(d.h * d.w, 0.0);
          xp = xr.data();
          gp = gr.data();
          gxp = gx_staged.data();
        }
        for (std::size_t pi = 0; pi < ph; ++pi) {
          for (std::size_t pj = 0; pj < pw; ++pj) {
            const double* X = xp + pi * g.h * d.w + pj * g.w;
            const double* G = gp + pi * g.h_out * od.w + pj * g.w_out;
            double* GX = gxp + pi * g.h * d.w + pj * g.w;
            // dL += G (X R)^T
            std::fill(xr_patch.begin(), xr_patch.end(), 0.0);
            kernel::gemm_nn(g.h, g.w, g.w_out, X, d.w, R.data().data(), g.w_out, xr_patch.data(), g.w_out);
            kernel::gemm_nt(g.h_out, g.w_out, g.h, G, od.w, xr_patch.data(), g.w_out, gL.data().data(), g.h);
            // dR += (L X)^T G
            std::fill(lx.begin(), lx.end(), 0.0);
            kernel::gemm_nn(g.h_out, g.h, g.w, L.data().data(), g.h, X, d.w, lx.data(), g.w);
            kernel::gemm_tn(g.w, g.h_out, g.w_out, lx.data(), g.w, G, od.w, gR.data().data(), g.w_out);
            // dX = L^T G R^T
            std::fill(ltg.begin(), ltg.end(), 0.0);
            kernel::gemm_tn(g.h, g.h_out, g.w_out, L.data().data(), g.h, G, od.w, ltg.data(), g.w_out);
            kernel::gemm_nt(g.h, g.w_out, g.w, ltg.data(), g.w_out, R.data().data(), g.w_out, GX, d.w);
            if (gB) {
              for (std::size_t r = 0; r < g.h_out; ++r)
                for (std::size_t q = 0; q < g.w_out; ++q) (*gB)(r, q) += G[r * od.w + q];
            }
          }
        }
        if (g.shift > 0) roll_plane_into(gx_staged, d.h, d.w, g.shift, out.x.plane(n, c));
      }
    }
  });
  return out;
}

namespace ad {

Var Tape::constant(Tensor4 value) {
  nodes_.push_back(Node{std::move(value), {}, false, false, {}, nullptr});
  return {nodes_.size() - 1};
}

Var Tape::param(Parameter& p) {
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].param == &p) return {i};
  for (const auto& n : nodes_)
    if (n.param && n.param->name == p.name)
      throw UsageError("tape: two distinct parameters share the name '" + p.name + "'");
  nodes_.push_back(Node{p.value, {}, false, true, {}, &p});
  return {nodes_.size() - 1};
}

Var Tape::record(Tensor4 value, std::vector<Var> inputs, BackwardFn backward) {
  if (consumed_) throw UsageError("tape: cannot record after backward()");
  bool req = false;
  for (Var v : inputs) {
    if (v.id >= nodes_.size()) throw UsageError("tape: input refers to an unknown node");
    req = req || nodes_[v.id].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, false, req, req ? std::move(backward) : BackwardFn{}, nullptr});
  return {nodes_.size() - 1};
}

Tensor4& Tape::grad(Var v) {
  Node& n = nodes_.at(v.id);
  if (!n.has_grad) {
    n.grad = Tensor4(n.value.dims());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::accumulate(Var v, const Tensor4& g) {
  if (!requires_grad(v)) return;
  Tensor4& dst = grad(v);
  if (dst.dims() != g.dims())
    throw ShapeError("tape: gradient " + to_string(g.dims()) + " for node of dims " + to_string(dst.dims()));
  auto a = dst.data();
  auto b = g.data();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

Grads Tape::backward(Var loss, double loss_grad) {
  if (nodes_.empty()) throw UsageError("tape: backward on an empty tape");
  if (consumed_) throw UsageError("tape: backward already ran on this tape; record a new forward pass");
  if (loss.id >= nodes_.size()) throw UsageError("tape: unknown loss node");
  if (nodes_[loss.id].value.size() != 1) throw UsageError("tape: loss must be a scalar");
  consumed_ = true;
  if (nodes_[loss.id].requires_grad) grad(loss).data()[0] = loss_grad;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.has_grad || !n.backward) continue;
    // Copy out: the backward rule may touch nodes_ through the tape.
    const Tensor4 g = n.grad;
    n.backward(*this, g);
  }
  Grads out;
  for (auto& n : nodes_) {
    if (!n.param) continue;
    out.emplace(n.param->name, n.has_grad ? n.grad : Tensor4(n.value.dims()));
  }
  return out;
}

namespace {

Matrix matrix_of(const Tensor4& t) { return as_matrix(t); }

void require_matrix(const Tensor4& t, const char* what) {
  if (t.dims().n != 1 || t.dims().c != 1)
    throw ShapeError(std::string(what) + ": expected a 1x1xRxC matrix, got " + to_string(t.dims()));
}

}  // namespace

Var matmul(Tape& t, Var a, Var b) {
  const Tensor4& av = t.value(a);
  const Tensor4& bv = t.value(b);
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  Tensor4 out = as_tensor(neonext::matmul(matrix_of(av), matrix_of(bv)));
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, const Tensor4& g) {
    const Tensor4& A = tp.value(a);
    const Tensor4& B = tp.value(b);
    const std::size_t m = A.dims().h, k = A.dims().w, n = B.dims().w;
    if (tp.requires_grad(a)) {
      kernel::gemm_nt(m, n, k, g.data().data(), n, B.data().data(), n, tp.grad(a).data().data(), k);
    }
    if (tp.requires_grad(b)) {
      kernel::gemm_tn(k, m, n, A.data().data(), k, g.data().data(), n, tp.grad(b).data().data(), n);
    }
  });
}

Var add(Tape& t, Var a, Var b) {
  const Tensor4& av = t.value(a);
  const Tensor4& bv = t.value(b);
  if (av.dims() != bv.dims())
    throw ShapeError("add: " + to_string(av.dims()) + " vs " + to_string(bv.dims()));
  Tensor4 out(av.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = av.data()[i] + bv.data()[i];
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, const Tensor4& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

Var weighted_sum(Tape& t, Var x, const Tensor4& weights) {
  const Tensor4& xv = t.value(x);
  if (xv.dims() != weights.dims()) throw ShapeError("weighted_sum: weight dims do not match input");
  double s = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) s += xv.data()[i] * weights.data()[i];
  return t.record(Tensor4({1, 1, 1, 1}, s), {x}, [x, weights](Tape& tp, const Tensor4& g) {
    if (!tp.requires_grad(x)) return;
    auto dst = tp.grad(x).data();
    const double gs = g.data()[0];
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += gs * weights.data()[i];
  });
}

NeoCellParams gather_neocell_params(const NeoCellSpec& spec, const std::vector<const Tensor4*>& left,
                                    const std::vector<const Tensor4*>& right,
                                    const std::vector<const Tensor4*>& bias) {
  const std::size_t ng = spec.groups.size();
  if (left.size() != ng || right.size() != ng || bias.size() != (spec.use_bias ? ng : 0))
    throw ParamError("neocell: expected one weight tensor per group");
  NeoCellParams p = NeoCellParams::zeros(spec);
  for (std::size_t gi = 0; gi < ng; ++gi) {
    const auto& g = spec.groups[gi];
    auto take = [&](const Tensor4* t, std::vector<Matrix>& mats, std::size_t rows, std::size_t cols,
                    const char* what) {
      if (t->dims() != Dims4{1, g.channels(), rows, cols})
        throw ParamError(std::string("neocell: ") + what + " tensor for " + describe(g) + " has dims " +
                         to_string(t->dims()));
      for (std::size_t c = g.begin; c < g.end; ++c) {
        auto src = t->plane(0, c - g.begin);
        std::copy(src.begin(), src.end(), mats[c].data().begin());
      }
    };
    take(left[gi], p.left, g.h_out, g.h, "left");
    take(right[gi], p.right, g.w, g.w_out, "right");
    if (spec.use_bias) take(bias[gi], p.bias, g.h_out, g.w_out, "bias");
  }
  return p;
}

Var neocell(Tape& t, Var x, const NeoCellSpec& spec, const NeoCellVars& w, NeoCellPath path, unsigned threads) {
  auto values = [&t](const std::vector<Var>& vs) {
    std::vector<const Tensor4*> out;
    for (Var v : vs) out.push_back(&t.value(v));
    return out;
  };
  NeoCellParams params = gather_neocell_params(spec, values(w.left), values(w.right), values(w.bias));
  Tensor4 y = path == NeoCellPath::patchwise ? forward_patchwise(t.value(x), spec, params, threads)
                                             : forward_blockdiag(t.value(x), spec, params, threads);
  std::vector<Var> inputs{x};
  inputs.insert(inputs.end(), w.left.begin(), w.left.end());
  inputs.insert(inputs.end(), w.right.begin(), w.right.end());
  inputs.insert(inputs.end(), w.bias.begin(), w.bias.end());
  return t.record(std::move(y), std::move(inputs),
                  [x, spec, w, params = std::move(params), threads](Tape& tp, const Tensor4& g) {
                    NeoCellGrads grads = neocell_backward(tp.value(x), spec, params, g, threads);
                    tp.accumulate(x, grads.x);
                    for (std::size_t gi = 0; gi < spec.groups.size(); ++gi) {
                      const auto& grp = spec.groups[gi];
                      auto scatter = [&](Var v, const std::vector<Matrix>& mats) {
                        if (!tp.requires_grad(v)) return;
                        Tensor4& dst = tp.grad(v);
                        for (std::size_t c = grp.begin; c < grp.end; ++c) {
                          auto src = mats[c].data();
                          auto out = dst.plane(0, c - grp.begin);
                          for (std::size_t i = 0; i < src.size(); ++i) out[i] += src[i];
                        }
                      };
                      scatter(w.left[gi], grads.params.left);
                      scatter(w.right[gi], grads.params.right);
                      if (spec.use_bias) scatter(w.bias[gi], grads.params.bias);
                    }
                  });
}

Var pointwise_conv(Tape& t, Var x, Var weight, const Var* bias) {
  const Tensor4& wv = t.value(weight);
  require_matrix(wv, "pointwise_conv weight");
  std::span<const double> b;
  if (bias) {
    const Tensor4& bv = t.value(*bias);
    if (bv.dims() != Dims4{1, 1, 1, wv.dims().h}) throw ShapeError("pointwise_conv: bias must be 1x1x1xC_out");
    b = bv.data();
  }
  Tensor4 y = neonext::pointwise_conv(t.value(x), matrix_of(wv), b);
  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias != nullptr;
  const Var bvar = bias ? *bias : Var{};
  return t.record(std::move(y), std::move(inputs), [x, weight, has_bias, bvar](Tape& tp, const Tensor4& g) {
    const Tensor4& X = tp.value(x);
    const Tensor4& W = tp.value(weight);
    const auto& d = X.dims();
    const std::size_t cols = d.n * d.h * d.w, ci = d.c, co = W.dims().h;
    const std::vector<double> gb = to_channel_major(g);
    if (tp.requires_grad(weight)) {
      // dW = G X^T with X^T laid out (cols x ci) so the inner loop runs over ci.
      const std::vector<double> xb = to_channel_major(X);
      std::vector<double> xt(cols * ci);
      for (std::size_t c = 0; c < ci; ++c)
        for (std::size_t j = 0; j < cols; ++j) xt[j * ci + c] = xb[c * cols + j];
      kernel::gemm_nn(co, cols, ci, gb.data(), cols, xt.data(), ci, tp.grad(weight).data().data(), ci);
    }
    if (tp.requires_grad(x)) {
      std::vector<double> dxb(ci * cols, 0.0);
      kernel::gemm_tn(ci, co, cols, W.data().data(), ci, gb.data(), cols, dxb.data(), cols);
      tp.accumulate(x, from_channel_major(dxb, d));
    }
    if (has_bias && tp.requires_grad(bvar)) {
      auto db = tp.grad(bvar).data();
      for (std::size_t o = 0; o < co; ++o)
        for (std::size_t j = 0; j < cols; ++j) db[o] += gb[o * cols + j];
    }
  });
}

Var batchnorm(Tape& t, Var x, Var gamma, Var beta, BatchNormState& state, BatchNormMode mode) {
  const Tensor4& xv = t.value(x);
  const auto& d = xv.dims();
  if (t.value(gamma).dims() != Dims4{1, 1, 1, d.c} || t.value(beta).dims() != Dims4{1, 1, 1, d.c})
    throw ShapeError("batchnorm: gamma/beta must be 1x1x1x" + std::to_string(d.c));
  // Statistics used for normalization, captured before the running update.
  std::vector<double> mean, var;
  if (mode == BatchNormMode::train) {
    auto m = channel_moments(xv);
    mean = std::move(m.mean);
    var = std::move(m.var);
  } else {
    mean = state.mean;
    var = state.var;
  }
  const double eps = state.eps;
  Tensor4 y = batchnorm_forward(xv, t.value(gamma).data(), t.value(beta).data(), state, mode);
  return t.record(std::move(y), {x, gamma, beta},
                  [x, gamma, beta, mean, var, eps, mode](Tape& tp, const Tensor4& g) {
                    const Tensor4& X = tp.value(x);
                    const auto& dd = X.dims();
                    const auto gm = tp.value(gamma).data();
                    const double count = static_cast<double>(dd.n * dd.h * dd.w);
                    std::vector<double> dgamma(dd.c, 0.0), dbeta(dd.c, 0.0);
                    for (std::size_t c = 0; c < dd.c; ++c) {
                      const double inv = 1.0 / std::sqrt(var[c] + eps);
                      double sg = 0.0, sgx = 0.0;
                      for (std::size_t n = 0; n < dd.n; ++n) {
                        auto xs = X.plane(n, c);
                        auto gs = g.plane(n, c);
                        for (std::size_t i = 0; i < xs.size(); ++i) {
                          sg += gs[i];
                          sgx += gs[i] * (xs[i] - mean[c]) * inv;
                        }
                      }
                      dgamma[c] = sgx;
                      dbeta[c] = sg;
                      if (!tp.requires_grad(x)) continue;
                      Tensor4& dx = tp.grad(x);
                      for (std::size_t n = 0; n < dd.n; ++n) {
                        auto xs = X.plane(n, c);
                        auto gs = g.plane(n, c);
                        auto out = dx.plane(n, c);
                        if (mode == BatchNormMode::train) {
                          const double k = gm[c] * inv / count;
                          for (std::size_t i = 0; i < xs.size(); ++i) {
                            const double xhat = (xs[i] - mean[c]) * inv;
                            out[i] += k * (count * gs[i] - sg - xhat * sgx);
                          }
                        } else {
                          for (std::size_t i = 0; i < xs.size(); ++i) out[i] += gs[i] * gm[c] * inv;
                        }
                      }
                    }
                    tp.accumulate(gamma, Tensor4({1, 1, 1, dd.c}, std::move(dgamma)));
                    tp.accumulate(beta, Tensor4({1, 1, 1, dd.c}, std::move(dbeta)));
                  });
}

Var gelu(Tape& t, Var x) {
  return t.record(neonext::gelu(t.value(x)), {x}, [x](Tape& tp, const Tensor4& g) {
    if (!tp.requires_grad(x)) return;
    auto xs = tp.value(x).data();
    auto dx = tp.grad(x).data();
    for (std::size_t i = 0; i < xs.size(); ++i) dx[i] += g.data()[i] * gelu_grad(xs[i]);
  });
}

Var space_to_depth(Tape& t, Var x, std::size_t patch) {
  return t.record(neonext::space_to_depth(t.value(x), patch), {x}, [x, patch](Tape& tp, const Tensor4& g) {
    tp.accumulate(x, depth_to_space(g, patch));
  });
}

Var global_avg_pool(Tape& t, Var x) {
  const Tensor4& xv = t.value(x);
  const auto& d = xv.dims();
  Tensor4 y({d.n, d.c, 1, 1});
  const double inv = 1.0 / static_cast<double>(d.h * d.w);
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t c = 0; c < d.c; ++c) {
      double s = 0.0;
      for (double v : xv.plane(n, c)) s += v;
      y.at(n, c, 0, 0) = s * inv;
    }
  return t.record(std::move(y), {x}, [x, inv](Tape& tp, const Tensor4& g) {
    if (!tp.requires_grad(x)) return;
    Tensor4& dx = tp.grad(x);
    const auto& dd = dx.dims();
    for (std::size_t n = 0; n < dd.n; ++n)
      for (std::size_t c = 0; c < dd.c; ++c)
        for (double& v : dx.plane(n, c)) v += g.at(n, c, 0, 0) * inv;
  });
}

Var scale_samples(Tape& t, Var x, std::vector<double> scale) {
  const Tensor4& xv = t.value(x);
  const auto& d = xv.dims();
  if (scale.size() != d.n) throw ShapeError("scale_samples: one scale per sample required");
  Tensor4 y(d);
  const std::size_t per = d.c * d.h * d.w;
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t i = 0; i < per; ++i) y.data()[n * per + i] = xv.data()[n * per + i] * scale[n];
  return t.record(std::move(y), {x}, [x, scale = std::move(scale), per](Tape& tp, const Tensor4& g) {
    if (!tp.requires_grad(x)) return;
    auto dx = tp.grad(x).data();
    for (std::size_t n = 0; n < scale.size(); ++n)
      for (std::size_t i = 0; i < per; ++i) dx[n * per + i] += g.data()[n * per + i] * scale[n];
  });
}

Var soft_cross_entropy(Tape& t, Var logits, const Tensor4& targets) {
  const Tensor4& z = t.value(logits);
  const auto& d = z.dims();
  if (d.h != 1 || d.w != 1) throw ShapeError("soft_cross_entropy: logits must be (n, K, 1, 1)");
  if (targets.size() != d.n * d.c) throw ShapeError("soft_cross_entropy: targets must hold n*K values");
  const std::size_t K = d.c;
  Tensor4 probs(d);
  double loss = 0.0;
  for (std::size_t n = 0; n < d.n; ++n) {
    const double* zn = z.data().data() + n * K;
    const double mx = *std::max_element(zn, zn + K);
    double se = 0.0;
    for (std::size_t k = 0; k < K; ++k) se += std::exp(zn[k] - mx);
    const double lse = mx + std::log(se);
    for (std::size_t k = 0; k < K; ++k) {
      probs.data()[n * K + k] = std::exp(zn[k] - lse);
      const double tk = targets.data()[n * K + k];
      if (tk != 0.0) loss -= tk * (zn[k] - lse);
    }
  }
  loss /= static_cast<double>(d.n);
  return t.record(Tensor4({1, 1, 1, 1}, loss), {logits},
                  [logits, targets, probs = std::move(probs), K](Tape& tp, const Tensor4& g) {
                    if (!tp.requires_grad(logits)) return;
                    auto dz = tp.grad(logits).data();
                    const std::size_t n_samples = dz.size() / K;
                    const double scale = g.data()[0] / static_cast<double>(n_samples);
                    for (std::size_t n = 0; n < n_samples; ++n) {
                      double tsum = 0.0;
                      for (std::size_t k = 0; k < K; ++k) tsum += targets.data()[n * K + k];
                      for (std::size_t k = 0; k < K; ++k)
                        dz[n * K + k] += scale * (probs.data()[n * K + k] * tsum - targets.data()[n * K + k]);
                    }
                  });
}

}  // namespace ad

bool FdReport::pass() const {
  return std::all_of(params.begin(), params.end(), [](const FdParamResult& r) { return r.pass; });
}

double FdReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& r : params) m = std::max(m, r.max_rel_error);
  return m;
}

FdReport fd_check(const std::function<double()>& loss, std::vector<FdEntry> entries, double eps, double threshold,
                  double denom_floor) {
  if (!(eps > 0.0)) throw ParamError("fd_check: eps must be positive");
  FdReport report;
  report.eps = eps;
  report.threshold = threshold;
  for (auto& e : entries) {
    if (e.values.size() != e.analytic.size())
      throw ShapeError("fd_check: '" + e.name + "' analytic gradient length differs from values");
    std::vector<std::size_t> idx = e.indices;
    if (idx.empty()) {
      idx.resize(e.values.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    }
    FdParamResult r;
    r.name = e.name;
    for (std::size_t i : idx) {
      if (i >= e.values.size()) throw ShapeError("fd_check: index out of range for '" + e.name + "'");
      const double orig = e.values[i];
      e.values[i] = orig + eps;
      const double fp = loss();
      e.values[i] = orig - eps;
      const double fm = loss();
      e.values[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw NumericError("fd_check: non-finite loss perturbing '" + e.name + "' index " + std::to_string(i));
      }
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = e.analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), denom_floor});
      const double rel = std::abs(a - numeric) / denom;
      const double err = std::isnan(rel) ? std::numeric_limits<double>::infinity() : rel;
      if (++r.checked == 1 || err > r.max_rel_error) {
        r.max_rel_error = err;
        r.worst_index = i;
        r.worst_analytic = a;
        r.worst_numeric = numeric;
      }
    }
    r.pass = r.max_rel_error <= threshold;
    report.params.push_back(std::move(r));
  }
  return report;
}

std::string format_report(const FdReport& r) {
  std::ostringstream os;
  os << std::left << std::setw(28) << "parameter" << std::right << std::setw(8) << "checked" << std::setw(14)
     << "max_rel_err" << std::setw(8) << "index" << std::setw(16) << "analytic" << std::setw(16) << "numeric"
     << "  status\n";
  for (const auto& p : r.params) {
    os << std::left << std::setw(28) << p.name << std::right << std::setw(8) << p.checked << std::setw(14)
       << std::scientific << std::setprecision(3) << p.max_rel_error << std::setw(8) << p.worst_index
       << std::setw(16) << std::setprecision(6) << p.worst_analytic << std::setw(16) << p.worst_numeric
       << std::defaultfloat << "  " << (p.pass ? "pass" : "FAIL") << "\n";
  }
  os << "eps " << r.eps << " threshold " << r.threshold << " -> " << (r.pass() ? "PASS" : "FAIL") << "\n";
  return os.str();
}

}  // namespace neonext

#include "neonext/neocell.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "neonext/parallel.hpp"

namespace neonext {

std::string describe(const GroupSpec& g) {
  std::ostringstream os;
  os << "channels [" << g.begin << "," << g.end << ") " << g.h << "x" << g.w << "->" << g.h_out << "x"
     << g.w_out << " shift " << g.shift;
  return os.str();
}

void GroupSpec::validate() const {
  if (end <= begin) throw ShapeError("group " + describe(*this) + ": empty channel range");
  if (h == 0 || w == 0 || h_out == 0 || w_out == 0)
    throw ShapeError("group " + describe(*this) + ": matrix dims must be >= 1");
  if (shift >= h || shift >= w)
    throw ShapeError("group " + describe(*this) + ": shift must be smaller than the patch size");
  if (shift > 0 && resamples())
    throw ShapeError("group " + describe(*this) + ": shifts are only defined for non-resampling groups");
}

std::size_t NeoCellSpec::channels() const { return groups.empty() ? 0 : groups.back().end; }

void NeoCellSpec::validate() const {
  if (groups.empty()) throw ShapeError("NeoCellSpec: no groups");
  std::size_t next = 0;
  for (const auto& g : groups) {
    g.validate();
    if (g.begin != next) {
      throw ShapeError("NeoCellSpec: group " + describe(g) + " does not start at channel " +
                       std::to_string(next) + " (ranges must be contiguous and disjoint)");
    }
    next = g.end;
  }
}

void NeoCellSpec::validate_input(std::size_t height, std::size_t width) const {
  validate();
  std::size_t out_h = 0, out_w = 0;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto& g = groups[i];
    if (height % g.h != 0) {
      throw ShapeError("NeoCell group " + std::to_string(i) + " (" + describe(g) + "): height " +
                       std::to_string(height) + " not divisible by " + std::to_string(g.h));
    }
    if (width % g.w != 0) {
      throw ShapeError("NeoCell group " + std::to_string(i) + " (" + describe(g) + "): width " +
                       std::to_string(width) + " not divisible by " + std::to_string(g.w));
    }
    const std::size_t oh = height / g.h * g.h_out, ow = width / g.w * g.w_out;
    if (i == 0) {
      out_h = oh;
      out_w = ow;
    } else if (oh != out_h || ow != out_w) {
      throw ShapeError("NeoCell group " + std::to_string(i) + " (" + describe(g) +
                       ") disagrees on output size: " + std::to_string(oh) + "x" + std::to_string(ow) +
                       " vs " + std::to_string(out_h) + "x" + std::to_string(out_w));
    }
  }
}

const GroupSpec& NeoCellSpec::group_of(std::size_t channel) const {
  for (const auto& g : groups)
    if (channel >= g.begin && channel < g.end) return g;
  throw ShapeError("NeoCellSpec: channel " + std::to_string(channel) + " not covered");
}

NeoCellParams NeoCellParams::zeros(const NeoCellSpec& spec) {
  spec.validate();
  NeoCellParams p;
  for (const auto& g : spec.groups) {
    for (std::size_t c = g.begin; c < g.end; ++c) {
      p.left.emplace_back(g.h_out, g.h);
      p.right.emplace_back(g.w, g.w_out);
      if (spec.use_bias) p.bias.emplace_back(g.h_out, g.w_out);
    }
  }
  return p;
}

void NeoCellParams::validate(const NeoCellSpec& spec) const {
  const std::size_t c_total = spec.channels();
  if (left.size() != c_total || right.size() != c_total)
    throw ParamError("NeoCellParams: expected " + std::to_string(c_total) + " channels of matrices");
  if (spec.use_bias ? bias.size() != c_total : !bias.empty())
    throw ParamError("NeoCellParams: bias presence does not match spec");
  for (const auto& g : spec.groups) {
    for (std::size_t c = g.begin; c < g.end; ++c) {
      const bool ok = left[c].rows() == g.h_out && left[c].cols() == g.h && right[c].rows() == g.w &&
                      right[c].cols() == g.w_out &&
                      (!spec.use_bias || (bias[c].rows() == g.h_out && bias[c].cols() == g.w_out));
      if (!ok) throw ParamError("NeoCellParams: channel " + std::to_string(c) + " dims do not match " + describe(g));
    }
  }
}

std::size_t NeoCellParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& m : left) n += m.data().size();
  for (const auto& m : right) n += m.data().size();
  for (const auto& m : bias) n += m.data().size();
  return n;
}

Dims4 output_shape(const NeoCellSpec& spec, const Dims4& in) {
  spec.validate_input(in.h, in.w);
  if (in.c != spec.channels()) {
    throw ShapeError("NeoCell: input has " + std::to_string(in.c) + " channels, spec covers " +
                     std::to_string(spec.channels()));
  }
  const auto& g = spec.groups.front();
  return {in.n, in.c, in.h / g.h * g.h_out, in.w / g.w * g.w_out};
}

namespace {

// C[m x n] += A[m x k] * B[k x n], optionally counting multiplications.
template <bool Count>
void patch_gemm(std::size_t m, std::size_t k, std::size_t n, const double* a, std::size_t lda,
                const double* b, std::size_t ldb, double* c, std::size_t ldc, std::uint64_t& mults) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * ldc;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * lda + p];
      const double* bp = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) {
        ci[j] += aip * bp[j];
        if constexpr (Count) ++mults;
      }
    }
  }
}

// Copy of a plane rolled by (-s, -s): out[i][j] = in[(i + s) % H][(j + s) % W].
void unroll_plane(std::span<const double> in, std::size_t height, std::size_t width, std::size_t s,
                  std::vector<double>& out) {
  out.resize(height * width);
  for (std::size_t i = 0; i < height; ++i) {
    const std::size_t si = (i + s) % height;
    for (std::size_t j = 0; j < width; ++j) out[i * width + j] = in[si * width + (j + s) % width];
  }
}

// out[i][j] = in[(i - s) % H][(j - s) % W]
void roll_plane_into(std::span<const double> in, std::size_t height, std::size_t width, std::size_t s,
                     std::span<double> out) {
  for (std::size_t i = 0; i < height; ++i) {
    const std::size_t si = (i + height - s) % height;
    for (std::size_t j = 0; j < width; ++j) out[i * width + j] = in[si * width + (j + width - s) % width];
  }
}

template <bool Count>
std::uint64_t patchwise_plane(std::span<const double> in, std::size_t height, std::size_t width,
                              const GroupSpec& g, const Matrix& left, const Matrix& right,
                              const Matrix* bias, std::span<double> out) {
  std::uint64_t mults = 0;
  const std::size_t ph = height / g.h, pw = width / g.w;
  const std::size_t out_w = pw * g.w_out;
  std::vector<double> rolled, staged;
  const double* src = in.data();
  double* dst = out.data();
  if (g.shift > 0) {
    unroll_plane(in, height, width, g.shift, rolled);
    src = rolled.data();
    staged.assign(out.size(), 0.0);
    dst = staged.data();
  } else {
    std::fill(out.begin(), out.end(), 0.0);
  }
  std::vector<double> tmp(g.h_out * g.w);
  for (std::size_t pi = 0; pi < ph; ++pi) {
    for (std::size_t pj = 0; pj < pw; ++pj) {
      std::fill(tmp.begin(), tmp.end(), 0.0);
      // T = L * X_patch
      patch_gemm<Count>(g.h_out, g.h, g.w, left.data().data(), g.h, src + pi * g.h * width + pj * g.w,
                        width, tmp.data(), g.w, mults);
      // Y_patch = T * R
      double* y = dst + pi * g.h_out * out_w + pj * g.w_out;
      patch_gemm<Count>(g.h_out, g.w, g.w_out, tmp.data(), g.w, right.data().data(), g.w_out, y, out_w,
                        mults);
      if (bias) {
        for (std::size_t r = 0; r < g.h_out; ++r)
          for (std::size_t c = 0; c < g.w_out; ++c) y[r * out_w + c] += (*bias)(r, c);
      }
    }
  }
  if (g.shift > 0) roll_plane_into(staged, height, width, g.shift, out);
  return mults;
}

void check_forward_args(const Tensor4& x, const NeoCellSpec& spec, const NeoCellParams& params) {
  (void)output_shape(spec, x.dims());
  params.validate(spec);
}

}  // namespace

Tensor4 forward_patchwise(const Tensor4& x, const NeoCellSpec& spec, const NeoCellParams& params,
                          unsigned threads) {
  check_forward_args(x, spec, params);
  const auto& d = x.dims();
  Tensor4 y(output_shape(spec, d));
  detail::parallel_for(d.n * d.c, threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t idx = b; idx < e; ++idx) {
      const std::size_t n = idx / d.c, c = idx % d.c;
      const auto& g = spec.group_of(c);
      patchwise_plane<false>(x.plane(n, c), d.h, d.w, g, params.left[c], params.right[c],
                             spec.use_bias ? &params.bias[c] : nullptr, y.plane(n, c));
    }
  });
  return y;
}

std::pair<Tensor4, std::uint64_t> forward_patchwise_counted(const Tensor4& x, const NeoCellSpec& spec,
                                                            const NeoCellParams& params) {
  check_forward_args(x, spec, params);
  const auto& d = x.dims();
  Tensor4 y(output_shape(spec, d));
  std::uint64_t mults = 0;
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t c = 0; c < d.c; ++c) {
      const auto& g = spec.group_of(c);
      mults += patchwise_plane<true>(x.plane(n, c), d.h, d.w, g, params.left[c], params.right[c],
                                     spec.use_bias ? &params.bias[c] : nullptr, y.plane(n, c));
    }
  return {std::move(y), mults};
}

std::pair<Matrix, Matrix> materialize_block_diagonal(const GroupSpec& group, const Matrix& left,
                                                     const Matrix& right, std::size_t height,
                                                     std::size_t width) {
  group.validate();
  NeoCellSpec single{{GroupSpec{0, 1, group.h, group.w, group.h_out, group.w_out, group.shift}}, false};
  single.validate_input(height, width);
  if (left.rows() != group.h_out || left.cols() != group.h || right.rows() != group.w ||
      right.cols() != group.w_out) {
    throw ParamError("materialize_block_diagonal: matrix dims do not match " + describe(group));
  }
  const std::size_t ph = height / group.h, pw = width / group.w;
  const std::size_t s = group.shift;
  Matrix a(ph * group.h_out, height);
  for (std::size_t b = 0; b < ph; ++b)
    for (std::size_t r = 0; r < group.h_out; ++r)
      for (std::size_t k = 0; k < group.h; ++k) {
        // shift only occurs with h_out == h, so rows and cols share the modulus
        const std::size_t row = (b * group.h_out + r + s) % a.rows();
        const std::size_t col = (b * group.h + k + s) % height;
        a(row, col) = left(r, k);
      }
  Matrix bm(width, pw * group.w_out);
  for (std::size_t b = 0; b < pw; ++b)
    for (std::size_t k = 0; k < group.w; ++k)
      for (std::size_t c = 0; c < group.w_out; ++c) {
        const std::size_t row = (b * group.w + k + s) % width;
        const std::size_t col = (b * group.w_out + c + s) % bm.cols();
        bm(row, col) = right(k, c);
      }
  return {std::move(a), std::move(bm)};
}

namespace {

// Row-compressed view of a matrix's structural nonzeros, built from the block
// layout so that exact-zero weights inside a block are still visited.
struct SparseRows {
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> cols;
  std::vector<double> values;
};

SparseRows compress(const Matrix& m, const std::vector<std::vector<std::size_t>>& pattern) {
  SparseRows s;
  s.offsets.reserve(m.rows() + 1);
  s.offsets.push_back(0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c : pattern[r]) {
      s.cols.push_back(c);
      s.values.push_back(m(r, c));
    }
    s.offsets.push_back(s.cols.size());
  }
  return s;
}

// Column indices of the block that owns each row, sorted ascending.
std::vector<std::vector<std::size_t>> block_pattern(std::size_t blocks, std::size_t rows_per_block,
                                                    std::size_t cols_per_block, std::size_t total_rows,
                                                    std::size_t total_cols, std::size_t shift) {
  std::vector<std::vector<std::size_t>> p(total_rows);
  for (std::size_t b = 0; b < blocks; ++b)
    for (std::size_t r = 0; r < rows_per_block; ++r) {
      auto& row = p[(b * rows_per_block + r + shift) % total_rows];
      for (std::size_t k = 0; k < cols_per_block; ++k) row.push_back((b * cols_per_block + k + shift) % total_cols);
      std::sort(row.begin(), row.end());
    }
  return p;
}

struct ChannelOperators {
  SparseRows a, b;
};

}  // namespace

Tensor4 forward_blockdiag(const Tensor4& x, const NeoCellSpec& spec, const NeoCellParams& params,
                          unsigned threads) {
  check_forward_args(x, spec, params);
  const auto& d = x.dims();
  const Dims4 od = output_shape(spec, d);
  Tensor4 y(od);

  std::vector<ChannelOperators> ops(d.c);
  for (const auto& g : spec.groups) {
    const auto a_pat = block_pattern(d.h / g.h, g.h_out, g.h, od.h, d.h, g.shift);
    const auto b_pat = block_pattern(d.w / g.w, g.w, g.w_out, d.w, od.w, g.shift);
    for (std::size_t c = g.begin; c < g.end; ++c) {
      auto [a, b] = materialize_block_diagonal(g, params.left[c], params.right[c], d.h, d.w);
      ops[c] = {compress(a, a_pat), compress(b, b_pat)};
    }
  }

  detail::parallel_for(d.n * d.c, threads, [&](std::size_t begin, std::size_t end) {
    std::vector<double> t(od.h * d.w);
    for (std::size_t idx = begin; idx < end; ++idx) {
      const std::size_t n = idx / d.c, c = idx % d.c;
      const auto& op = ops[c];
      auto xp = x.plane(n, c);
      auto yp = y.plane(n, c);
      // T = A X
      std::fill(t.begin(), t.end(), 0.0);
      for (std::size_t i = 0; i < od.h; ++i) {
        double* ti = t.data() + i * d.w;
        for (std::size_t e = op.a.offsets[i]; e < op.a.offsets[i + 1]; ++e) {
          const double av = op.a.values[e];
          const double* xk = xp.data() + op.a.cols[e] * d.w;
          for (std::size_t j = 0; j < d.w; ++j) ti[j] += av * xk[j];
        }
      }
      // Y = T B
      for (std::size_t i = 0; i < od.h; ++i) {
        const double* ti = t.data() + i * d.w;
        double* yi = yp.data() + i * od.w;
        for (std::size_t k = 0; k < d.w; ++k) {
          const double tv = ti[k];
          for (std::size_t e = op.b.offsets[k]; e < op.b.offsets[k + 1]; ++e) yi[op.b.cols[e]] += tv * op.b.values[e];
        }
      }
      if (spec.use_bias) {
        const auto& g = spec.group_of(c);
        const auto& bias = params.bias[c];
        for (std::size_t i = 0; i < od.h; ++i)
          for (std::size_t j = 0; j < od.w; ++j)
            yp[i * od.w + j] += bias((i + od.h - g.shift) % g.h_out, (j + od.w - g.shift) % g.w_out);
      }
    }
  });
  return y;
}

namespace {

const char* kManifestHeader = "neocell-manifest v1";

struct LayerBlock {
  std::string name;
  std::vector<std::string> lines;
};

std::vector<LayerBlock> read_manifest(const std::filesystem::path& path) {
  std::vector<LayerBlock> blocks;
  std::ifstream f(path);
  if (!f) return blocks;
  std::string line;
  if (!std::getline(f, line) || line != kManifestHeader) throw IoError(path.string() + ": bad manifest header");
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string tag;
    is >> tag;
    if (tag == "layer") {
      blocks.push_back({});
      is >> blocks.back().name;
    } else if (blocks.empty()) {
      throw IoError(path.string() + ": group line before any layer");
    }
    blocks.back().lines.push_back(line);
  }
  return blocks;
}

std::filesystem::path weight_file(const std::filesystem::path& dir, const std::string& layer, std::size_t gi,
                                  const char* kind) {
  return dir / (layer + ".g" + std::to_string(gi) + "." + kind + ".bin");
}

}  // namespace

void save_neocell(const std::filesystem::path& dir, const std::string& layer, const NeoCellSpec& spec,
                  const NeoCellParams& params) {
  params.validate(spec);
  if (layer.empty() || layer.find_first_of(" \t\n/") != std::string::npos)
    throw ParamError("save_neocell: invalid layer name '" + layer + "'");
  std::filesystem::create_directories(dir);
  const auto manifest = dir / "manifest.txt";
  auto blocks = read_manifest(manifest);
  std::erase_if(blocks, [&](const LayerBlock& b) { return b.name == layer; });
  LayerBlock blk{layer, {}};
  blk.lines.push_back("layer " + layer + " channels " + std::to_string(spec.channels()) + " bias " +
                      (spec.use_bias ? "1" : "0") + " groups " + std::to_string(spec.groups.size()));
  for (std::size_t gi = 0; gi < spec.groups.size(); ++gi) {
    const auto& g = spec.groups[gi];
    std::ostringstream os;
    os << "group " << g.begin << " " << g.end << " " << g.h << " " << g.w << " " << g.h_out << " " << g.w_out
       << " " << g.shift;
    blk.lines.push_back(os.str());
    auto pack = [&](const std::vector<Matrix>& mats, std::size_t rows, std::size_t cols) {
      Tensor4 t({1, g.channels(), rows, cols});
      for (std::size_t c = g.begin; c < g.end; ++c) {
        auto src = mats[c].data();
        std::copy(src.begin(), src.end(), t.plane(0, c - g.begin).begin());
      }
      return t;
    };
    write_tensor(weight_file(dir, layer, gi, "left"), pack(params.left, g.h_out, g.h));
    write_tensor(weight_file(dir, layer, gi, "right"), pack(params.right, g.w, g.w_out));
    if (spec.use_bias) write_tensor(weight_file(dir, layer, gi, "bias"), pack(params.bias, g.h_out, g.w_out));
  }
  blocks.push_back(std::move(blk));
  std::ofstream f(manifest, std::ios::trunc);
  if (!f) throw IoError("cannot write " + manifest.string());
  f << kManifestHeader << "\n";
  for (const auto& b : blocks)
    for (const auto& l : b.lines) f << l << "\n";
}

std::pair<NeoCellSpec, NeoCellParams> load_neocell(const std::filesystem::path& dir, const std::string& layer) {
  const auto manifest = dir / "manifest.txt";
  const auto blocks = read_manifest(manifest);
  auto it = std::find_if(blocks.begin(), blocks.end(), [&](const LayerBlock& b) { return b.name == layer; });
  if (it == blocks.end()) throw IoError(manifest.string() + ": no layer '" + layer + "'");
  NeoCellSpec spec;
  {
    std::istringstream is(it->lines.front());
    std::string tag, name, k1, k2, k3;
    std::size_t channels = 0, groups = 0;
    int bias = 0;
    is >> tag >> name >> k1 >> channels >> k2 >> bias >> k3 >> groups;
    if (!is || k1 != "channels" || k2 != "bias" || k3 != "groups" || groups + 1 != it->lines.size())
      throw IoError(manifest.string() + ": malformed layer line for '" + layer + "'");
    spec.use_bias = bias != 0;
  }
  for (std::size_t i = 1; i < it->lines.size(); ++i) {
    std::istringstream is(it->lines[i]);
    std::string tag;
    GroupSpec g;
    is >> tag >> g.begin >> g.end >> g.h >> g.w >> g.h_out >> g.w_out >> g.shift;
    if (!is || tag != "group") throw IoError(manifest.string() + ": malformed group line '" + it->lines[i] + "'");
    spec.groups.push_back(g);
  }
  spec.validate();
  NeoCellParams params = NeoCellParams::zeros(spec);
  for (std::size_t gi = 0; gi < spec.groups.size(); ++gi) {
    const auto& g = spec.groups[gi];
    auto unpack = [&](const char* kind, std::vector<Matrix>& mats) {
      const auto path = weight_file(dir, layer, gi, kind);
      const Tensor4 t = read_tensor(path);
      const Matrix& proto = mats[g.begin];
      if (t.dims() != Dims4{1, g.channels(), proto.rows(), proto.cols()})
        throw IoError(path.string() + ": dims " + to_string(t.dims()) + " do not match manifest");
      for (std::size_t c = g.begin; c < g.end; ++c) {
        auto src = t.plane(0, c - g.begin);
        std::copy(src.begin(), src.end(), mats[c].data().begin());
      }
    };
    unpack("left", params.left);
    unpack("right", params.right);
    if (spec.use_bias) unpack("bias", params.bias);
  }
  return {std::move(spec), std::move(params)};
}

}  // namespace neonext

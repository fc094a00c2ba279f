#include "neonext/tensor.hpp"

#include <bit>
#include <cstring>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>

namespace neonext {

std::string to_string(const Dims4& d) {
  return std::to_string(d.n) + "x" + std::to_string(d.c) + "x" + std::to_string(d.h) + "x" +
         std::to_string(d.w);
}

Tensor4::Tensor4(Dims4 dims, double fill) : dims_(dims), data_(dims.count(), fill) {
  if (dims.n == 0 || dims.c == 0 || dims.h == 0 || dims.w == 0) {
    throw ShapeError("Tensor4: every dimension must be positive, got " + to_string(dims));
  }
}

Tensor4::Tensor4(Dims4 dims, std::vector<double> data) : dims_(dims), data_(std::move(data)) {
  if (dims.n == 0 || dims.c == 0 || dims.h == 0 || dims.w == 0) {
    throw ShapeError("Tensor4: every dimension must be positive, got " + to_string(dims));
  }
  if (data_.size() != dims.count()) {
    throw ShapeError("Tensor4: data length " + std::to_string(data_.size()) +
                     " does not match dims " + to_string(dims));
  }
}

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {
  if (rows == 0 || cols == 0) throw ShapeError("Matrix: rows and cols must be positive");
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (rows == 0 || cols == 0) throw ShapeError("Matrix: rows and cols must be positive");
  if (data_.size() != rows * cols) {
    throw ShapeError("Matrix: data length " + std::to_string(data_.size()) + " != " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ ? rows.begin()->size() : 0;
  if (rows_ == 0 || cols_ == 0) throw ShapeError("Matrix: empty initializer");
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("Matrix: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

namespace kernel {

namespace {

// Register tile of MR x NR outputs. Every output still receives its terms in
// ascending p, so the result equals the plain i-k-j loop bit for bit. A(i, p)
// is a[i * ras + p * pas].
constexpr std::size_t MR = 4, NR = 8;
typedef double vec8 __attribute__((vector_size(NR * sizeof(double))));

inline vec8 load8(const double* p) {
  vec8 v;
  std::memcpy(&v, p, sizeof v);
  return v;
}
inline void store8(double* p, vec8 v) { std::memcpy(p, &v, sizeof v); }

template <std::size_t R>
void tile(std::size_t k, std::size_t n, const double* a, std::size_t ras, std::size_t pas, const double* b,
          std::size_t ldb, double* c, std::size_t ldc) {
  std::size_t j = 0;
  for (; j + NR <= n; j += NR) {
    vec8 acc[R];
    for (std::size_t r = 0; r < R; ++r) acc[r] = load8(c + r * ldc + j);
    for (std::size_t p = 0; p < k; ++p) {
      const vec8 bp = load8(b + p * ldb + j);
      for (std::size_t r = 0; r < R; ++r) acc[r] += a[r * ras + p * pas] * bp;
    }
    for (std::size_t r = 0; r < R; ++r) store8(c + r * ldc + j, acc[r]);
  }
  if (j < n) {
    for (std::size_t r = 0; r < R; ++r) {
      double* cr = c + r * ldc;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = a[r * ras + p * pas];
        const double* bp = b + p * ldb;
        for (std::size_t q = j; q < n; ++q) cr[q] += av * bp[q];
      }
    }
  }
}

void gemm_strided(std::size_t m, std::size_t k, std::size_t n, const double* a, std::size_t ras, std::size_t pas,
                  const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  std::size_t i = 0;
  for (; i + MR <= m; i += MR) tile<MR>(k, n, a + i * ras, ras, pas, b, ldb, c + i * ldc, ldc);
  for (; i < m; ++i) tile<1>(k, n, a + i * ras, ras, pas, b, ldb, c + i * ldc, ldc);
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  gemm_strided(m, k, n, a, lda, 1, b, ldb, c, ldc);
}

void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  gemm_strided(m, k, n, a, 1, lda, b, ldb, c, ldc);
}

void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * lda;
    double* ci = c + i * ldc;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * ldb;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

}  // namespace kernel

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: lhs is " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     ", rhs is " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  Matrix out(a.rows(), b.cols());
  kernel::gemm_nn(a.rows(), a.cols(), b.cols(), a.data().data(), a.cols(), b.data().data(),
                  b.cols(), out.data().data(), out.cols());
  return out;
}

namespace {
std::size_t wrap(long v, std::size_t m) {
  const long mm = static_cast<long>(m);
  long r = v % mm;
  return static_cast<std::size_t>(r < 0 ? r + mm : r);
}
}  // namespace

Tensor4 roll2d(const Tensor4& x, long shift_h, long shift_w) {
  const auto& d = x.dims();
  Tensor4 out(d);
  const std::size_t sh = wrap(shift_h, d.h), sw = wrap(shift_w, d.w);
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t c = 0; c < d.c; ++c) {
      auto src = x.plane(n, c);
      auto dst = out.plane(n, c);
      for (std::size_t i = 0; i < d.h; ++i) {
        const std::size_t si = (i + d.h - sh) % d.h;
        for (std::size_t j = 0; j < d.w; ++j) dst[i * d.w + j] = src[si * d.w + (j + d.w - sw) % d.w];
      }
    }
  return out;
}

std::vector<std::uint8_t> encode_tensor(const Tensor4& t) {
  std::vector<std::uint8_t> out;
  out.reserve(16 + 8 * t.size());
  auto put = [&out](std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  const auto& d = t.dims();
  for (std::size_t v : {d.n, d.c, d.h, d.w}) {
    if (v > std::numeric_limits<std::uint32_t>::max()) throw ShapeError("encode_tensor: dim overflow");
    put(v, 4);
  }
  for (double v : t.data()) put(std::bit_cast<std::uint64_t>(v), 8);
  return out;
}

Tensor4 decode_tensor(std::span<const std::uint8_t> bytes) {
  auto get = [&bytes](std::size_t off, int len) {
    std::uint64_t v = 0;
    for (int i = 0; i < len; ++i) v |= std::uint64_t{bytes[off + i]} << (8 * i);
    return v;
  };
  if (bytes.size() < 16) throw IoError("tensor file: header truncated");
  Dims4 d{get(0, 4), get(4, 4), get(8, 4), get(12, 4)};
  if (bytes.size() != 16 + 8 * d.count()) {
    throw IoError("tensor file: expected " + std::to_string(16 + 8 * d.count()) + " bytes for " +
                  to_string(d) + ", got " + std::to_string(bytes.size()));
  }
  std::vector<double> data(d.count());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = std::bit_cast<double>(get(16 + 8 * i, 8));
  return Tensor4(d, std::move(data));
}

void write_tensor(const std::filesystem::path& path, const Tensor4& t) {
  const auto bytes = encode_tensor(t);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

Tensor4 read_tensor(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return decode_tensor(bytes);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

Tensor4 as_tensor(const Matrix& m) {
  return Tensor4({1, 1, m.rows(), m.cols()}, std::vector<double>(m.data().begin(), m.data().end()));
}

Matrix as_matrix(const Tensor4& t) {
  const auto& d = t.dims();
  if (d.n != 1 || d.c != 1) throw ShapeError("as_matrix: expected 1x1xRxC, got " + to_string(d));
  return Matrix(d.h, d.w, std::vector<double>(t.data().begin(), t.data().end()));
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("max_abs_diff: length mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(a[i] - b[i]);
    if (!(d <= m)) m = d;  // propagates NaN
  }
  return m;
}

}  // namespace neonext

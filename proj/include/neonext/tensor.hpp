#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace neonext {

// Error hierarchy shared by every module. Each category maps to one failure
// class named in the operation contracts.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ShapeError : public Error {
 public:
  using Error::Error;
};
class ParamError : public Error {
 public:
  using Error::Error;
};
class NumericError : public Error {
 public:
  using Error::Error;
};
class UsageError : public Error {
 public:
  using Error::Error;
};
class IoError : public Error {
 public:
  using Error::Error;
};
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct Dims4 {
  std::size_t n = 1, c = 1, h = 1, w = 1;

  std::size_t count() const { return n * c * h * w; }
  bool operator==(const Dims4&) const = default;
};

std::string to_string(const Dims4& d);

// Dense rank-4 array in row-major (n, c, h, w) order. stride_w is always 1.
class Tensor4 {
 public:
  Tensor4() = default;
  explicit Tensor4(Dims4 dims, double fill = 0.0);
  Tensor4(Dims4 dims, std::vector<double> data);

  const Dims4& dims() const { return dims_; }
  std::size_t size() const { return data_.size(); }
  std::array<std::size_t, 4> strides() const {
    return {dims_.c * dims_.h * dims_.w, dims_.h * dims_.w, dims_.w, 1};
  }

  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * dims_.c + c) * dims_.h + h) * dims_.w + w];
  }
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * dims_.c + c) * dims_.h + h) * dims_.w + w];
  }

  // One (h, w) spatial plane.
  std::span<double> plane(std::size_t n, std::size_t c) {
    return {data_.data() + (n * dims_.c + c) * dims_.h * dims_.w, dims_.h * dims_.w};
  }
  std::span<const double> plane(std::size_t n, std::size_t c) const {
    return {data_.data() + (n * dims_.c + c) * dims_.h * dims_.w, dims_.h * dims_.w};
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }

  bool operator==(const Tensor4&) const = default;

 private:
  Dims4 dims_{0, 0, 0, 0};
  std::vector<double> data_;
};

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  Matrix transposed() const;

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

// Raw row-major kernels. All accumulate (C += ...) with a fixed i-k-j loop
// nest so results are bit-reproducible. Leading dimensions are in elements.
namespace kernel {

// C[m x n] += A[m x k] * B[k x n]
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc);
// C[m x n] += A^T * B where A is stored [k x m]
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc);
// C[m x n] += A * B^T where B is stored [n x k]
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a, std::size_t lda,
             const double* b, std::size_t ldb, double* c, std::size_t ldc);

}  // namespace kernel

// Standard product with a deterministic summation order.
Matrix matmul(const Matrix& a, const Matrix& b);

// Cyclic rotation of every spatial plane: out[i][j] = in[i - shift_h][j - shift_w]
// (indices modulo h, w).
Tensor4 roll2d(const Tensor4& x, long shift_h, long shift_w);

// Flat binary format: four little-endian uint32 dims then n*c*h*w
// little-endian IEEE-754 doubles.
void write_tensor(const std::filesystem::path& path, const Tensor4& t);
Tensor4 read_tensor(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_tensor(const Tensor4& t);
Tensor4 decode_tensor(std::span<const std::uint8_t> bytes);

Tensor4 as_tensor(const Matrix& m);
Matrix as_matrix(const Tensor4& t);

double max_abs_diff(std::span<const double> a, std::span<const double> b);

}  // namespace neonext

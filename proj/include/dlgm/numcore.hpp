#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dlgm/errors.hpp"

namespace dlgm {

using Vector = std::vector<double>;

// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, Vector data);

  static Matrix identity(std::size_t n);
  static Matrix column(const Vector& v) { return Matrix(v.size(), 1, v); }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  Vector row_vector(std::size_t r) const;

  Vector& data() { return data_; }
  const Vector& data() const { return data_; }

  Matrix transpose() const;
  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vector data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
// a * x
Vector matvec(const Matrix& a, std::span<const double> x);
// a^T * x
Vector matvec_t(const Matrix& a, std::span<const double> x);
// a += alpha * x y^T
void add_outer(Matrix& a, std::span<const double> x, std::span<const double> y, double alpha = 1.0);

double dot(std::span<const double> a, std::span<const double> b);
double squared_norm(std::span<const double> a);
// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);
Vector add(const Vector& a, const Vector& b);
Vector sub(const Vector& a, const Vector& b);
Vector scaled(const Vector& a, double s);
double max_abs_diff(const Matrix& a, const Matrix& b);
bool all_finite(std::span<const double> a);

// Numerically stable log(1 + exp(x)).
double softplus(double x);
double sigmoid(double x);
double log_sum_exp(std::span<const double> xs);

// Deterministic stream of uniform and standard-normal draws. Normals come from
// the Marsaglia polar method on top of mt19937_64, so a replay with the same
// seed reproduces every draw bit-for-bit on any conforming platform.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }

  // Independent child stream; the sub-seed is a splitmix64 mix of (seed, tag).
  RngStream derive(std::uint64_t tag) const;

  double uniform();  // [0, 1)
  double normal();
  Vector standard_normal(std::size_t n);
  std::uint64_t next_u64() { return engine_(); }
  // Uniform integer in [0, n).
  std::size_t below(std::size_t n);
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag);

// Whole-string decimal parse; throws UsageError naming `what` on failure.
double parse_real(const std::string& text, const std::string& what);
// Shortest decimal text that parses back to exactly x.
std::string format_real(double x);

using ScalarFn = std::function<double(const Vector&)>;

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for each coordinate.
// Throws NumericError if f is not finite at a probe point.
Vector finite_diff_grad(const ScalarFn& f, const Vector& x, double h = 1e-5);

}  // namespace dlgm

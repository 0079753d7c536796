#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace fedrelu {

// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> entries);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix column(std::span<const double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  // "3x4"
  std::string shape_string() const;

  Matrix transpose() const;

  Matrix& operator+=(const Matrix& other);
  Matrix& operator-=(const Matrix& other);
  Matrix& operator*=(double s);

  // this += alpha * other
  Matrix& add_scaled(const Matrix& other, double alpha);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(double s, Matrix a);

// Standard product a*b. Every entry accumulates over k in ascending order.
Matrix matmul(const Matrix& a, const Matrix& b);
// a^T * b, same accumulation order as matmul(a.transpose(), b).
Matrix matmul_tn(const Matrix& a, const Matrix& b);
// a * b^T, same accumulation order as matmul(a, b.transpose()).
Matrix matmul_nt(const Matrix& a, const Matrix& b);

// y = a*x with ascending-index accumulation.
std::vector<double> matvec(const Matrix& a, std::span<const double> x);
// y = a^T*x
std::vector<double> matvec_t(const Matrix& a, std::span<const double> x);

double frobenius_norm(const Matrix& a);
double frobenius_norm_sq(const Matrix& a);
// ||a - b||_F^2 without materializing the difference; equals
// frobenius_norm_sq(a - b) exactly.
double squared_distance(const Matrix& a, const Matrix& b);
// Sum of entrywise products.
double inner(const Matrix& a, const Matrix& b);

inline constexpr std::size_t kDefaultPowerIters = 200;
inline constexpr double kDefaultPowerTol = 1e-10;

// Largest singular value by power iteration on a^T a, started from the
// normalized all-ones vector. Stops when two successive estimates differ by
// at most tol (relative to the current estimate) or after iters iterations.
double spectral_norm(const Matrix& a, std::size_t iters = kDefaultPowerIters,
                     double tol = kDefaultPowerTol);

bool all_finite(const Matrix& a);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);

}  // namespace fedrelu

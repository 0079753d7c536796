#include "fedrelu/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "fedrelu/error.hpp"

namespace fedrelu {

namespace {

[[noreturn]] void throw_mismatch(const char* op, const Matrix& a, const Matrix& b) {
  std::ostringstream msg;
  msg << op << ": dimension mismatch between " << a.shape_string() << " and "
      << b.shape_string();
  throw ShapeError(msg.str());
}

#if defined(__x86_64__) && defined(__GNUC__)
#define FEDRELU_CLONES __attribute__((target_clones("avx2", "default")))
#else
#define FEDRELU_CLONES
#endif

// Four doubles; element-wise arithmetic only, so every entry sees the same
// sequence of IEEE operations as the scalar loop.
typedef double v4 __attribute__((vector_size(32), aligned(8)));

inline v4 load4(const double* p) {
  v4 v;
  __builtin_memcpy(&v, p, sizeof v);
  return v;
}
inline void store4(double* p, v4 v) { __builtin_memcpy(p, &v, sizeof v); }
inline v4 splat(double x) { return v4{x, x, x, x}; }

// c (p x r) += A b with A(i,k) = a[i*a_row + k*a_col] and b row-major q x r.
// Each entry accumulates a(i,k) b(k,j) over ascending k. A 4x8 register block
// of c is kept live across the k loop; a ragged right edge goes through the
// same block on a zero-padded copy of b.
__attribute__((always_inline)) inline void block_4x8(const double* a0, std::size_t a_row,
                                                     std::size_t a_col, std::size_t q,
                                                     const double* b, std::size_t b_row,
                                                     double* c0, std::size_t c_row) {
  const double* a1 = a0 + a_row;
  const double* a2 = a1 + a_row;
  const double* a3 = a2 + a_row;
  double* c1 = c0 + c_row;
  double* c2 = c1 + c_row;
  double* c3 = c2 + c_row;
  v4 c00 = load4(c0), c01 = load4(c0 + 4), c10 = load4(c1), c11 = load4(c1 + 4);
  v4 c20 = load4(c2), c21 = load4(c2 + 4), c30 = load4(c3), c31 = load4(c3 + 4);
  for (std::size_t k = 0; k < q; ++k) {
    const double* brow = b + k * b_row;
    const v4 b0 = load4(brow);
    const v4 b1 = load4(brow + 4);
    const std::size_t ko = k * a_col;
    const v4 x0 = splat(a0[ko]), x1 = splat(a1[ko]), x2 = splat(a2[ko]), x3 = splat(a3[ko]);
    c00 += x0 * b0;
    c01 += x0 * b1;
    c10 += x1 * b0;
    c11 += x1 * b1;
    c20 += x2 * b0;
    c21 += x2 * b1;
    c30 += x3 * b0;
    c31 += x3 * b1;
  }
  store4(c0, c00);
  store4(c0 + 4, c01);
  store4(c1, c10);
  store4(c1 + 4, c11);
  store4(c2, c20);
  store4(c2 + 4, c21);
  store4(c3, c30);
  store4(c3 + 4, c31);
}

FEDRELU_CLONES void gemm_acc(std::size_t p, std::size_t q, std::size_t r, const double* a,
                             std::size_t a_row, std::size_t a_col, const double* b, double* c) {
  const std::size_t r_full = r - r % 8;
  const std::size_t tail = r - r_full;
  std::vector<double> b_pad;
  if (tail > 0 && p >= 4) {
    b_pad.assign(q * 8, 0.0);
    for (std::size_t k = 0; k < q; ++k)
      for (std::size_t jj = 0; jj < tail; ++jj) b_pad[k * 8 + jj] = b[k * r + r_full + jj];
  }
  std::size_t i = 0;
  for (; i + 4 <= p; i += 4) {
    const double* ai = a + i * a_row;
    for (std::size_t j = 0; j < r_full; j += 8) block_4x8(ai, a_row, a_col, q, b + j, r, c + i * r + j, r);
    if (tail > 0) {
      double tmp[32] = {};
      for (std::size_t ii = 0; ii < 4; ++ii)
        for (std::size_t jj = 0; jj < tail; ++jj) tmp[ii * 8 + jj] = c[(i + ii) * r + r_full + jj];
      block_4x8(ai, a_row, a_col, q, b_pad.data(), 8, tmp, 8);
      for (std::size_t ii = 0; ii < 4; ++ii)
        for (std::size_t jj = 0; jj < tail; ++jj) c[(i + ii) * r + r_full + jj] = tmp[ii * 8 + jj];
    }
  }
  for (; i < p; ++i) {
    const double* ai = a + i * a_row;
    double* ci = c + i * r;
    std::size_t j = 0;
    for (; j + 4 <= r; j += 4) {
      v4 acc = load4(ci + j);
      for (std::size_t k = 0; k < q; ++k) acc += splat(ai[k * a_col]) * load4(b + k * r + j);
      store4(ci + j, acc);
    }
    for (; j < r; ++j) {
      double s = ci[j];
      for (std::size_t k = 0; k < q; ++k) s += ai[k * a_col] * b[k * r + j];
      ci[j] = s;
    }
  }
}

// c (p x r) += a^T b for row-major a (q x p). k runs outermost in blocks of
// four so a is read row-wise; the four updates to an entry stay in k order.
FEDRELU_CLONES void gemm_tn_acc(std::size_t p, std::size_t q, std::size_t r, const double* a,
                                const double* b, double* c) {
  if (r % 4 != 0 && r > 4) {
    // Pad b and c with zero columns to a multiple of four; the padded
    // entries are discarded and the real ones see the same k order.
    const std::size_t w = r + (4 - r % 4);
    std::vector<double> b_pad(q * w, 0.0);
    std::vector<double> c_pad(p * w, 0.0);
    for (std::size_t k = 0; k < q; ++k) std::copy(b + k * r, b + (k + 1) * r, b_pad.data() + k * w);
    for (std::size_t i = 0; i < p; ++i) std::copy(c + i * r, c + (i + 1) * r, c_pad.data() + i * w);
    gemm_tn_acc(p, q, w, a, b_pad.data(), c_pad.data());
    for (std::size_t i = 0; i < p; ++i)
      std::copy(c_pad.data() + i * w, c_pad.data() + i * w + r, c + i * r);
    return;
  }
  std::size_t k = 0;
  for (; k + 4 <= q; k += 4) {
    const double* ar0 = a + k * p;
    const double* ar1 = ar0 + p;
    const double* ar2 = ar1 + p;
    const double* ar3 = ar2 + p;
    const double* b0 = b + k * r;
    const double* b1 = b0 + r;
    const double* b2 = b1 + r;
    const double* b3 = b2 + r;
    for (std::size_t i = 0; i < p; ++i) {
      const v4 x0 = splat(ar0[i]), x1 = splat(ar1[i]), x2 = splat(ar2[i]), x3 = splat(ar3[i]);
      double* crow = c + i * r;
      std::size_t j = 0;
      for (; j + 4 <= r; j += 4) {
        v4 acc = load4(crow + j);
        acc += x0 * load4(b0 + j);
        acc += x1 * load4(b1 + j);
        acc += x2 * load4(b2 + j);
        acc += x3 * load4(b3 + j);
        store4(crow + j, acc);
      }
      for (; j < r; ++j) {
        double s = crow[j];
        s += ar0[i] * b0[j];
        s += ar1[i] * b1[j];
        s += ar2[i] * b2[j];
        s += ar3[i] * b3[j];
        crow[j] = s;
      }
    }
  }
  for (; k < q; ++k) {
    const double* arow = a + k * p;
    const double* brow = b + k * r;
    for (std::size_t i = 0; i < p; ++i) {
      const double aki = arow[i];
      double* crow = c + i * r;
      for (std::size_t j = 0; j < r; ++j) crow[j] += aki * brow[j];
    }
  }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> entries)
    : rows_(rows), cols_(cols), data_(std::move(entries)) {
  if (data_.size() != rows * cols) {
    std::ostringstream msg;
    msg << "Matrix: " << data_.size() << " entries cannot fill " << rows << "x" << cols;
    throw ShapeError(msg.str());
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("Matrix: ragged initializer list");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::column(std::span<const double> values) {
  return Matrix(values.size(), 1, std::vector<double>(values.begin(), values.end()));
}

std::string Matrix::shape_string() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

Matrix Matrix::transpose() const {
  constexpr std::size_t kTile = 32;
  Matrix t(cols_, rows_);
  for (std::size_t i0 = 0; i0 < rows_; i0 += kTile) {
    const std::size_t i1 = std::min(rows_, i0 + kTile);
    for (std::size_t j0 = 0; j0 < cols_; j0 += kTile) {
      const std::size_t j1 = std::min(cols_, j0 + kTile);
      for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t j = j0; j < j1; ++j) t.data_[j * rows_ + i] = data_[i * cols_ + j];
    }
  }
  return t;
}

Matrix& Matrix::operator+=(const Matrix& other) {
  if (!same_shape(other)) throw_mismatch("operator+=", *this, other);
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
  if (!same_shape(other)) throw_mismatch("operator-=", *this, other);
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Matrix& Matrix::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

Matrix& Matrix::add_scaled(const Matrix& other, double alpha) {
  if (!same_shape(other)) throw_mismatch("add_scaled", *this, other);
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += alpha * other.data_[i];
  return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(double s, Matrix a) { return a *= s; }

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw_mismatch("matmul", a, b);
  Matrix c(a.rows(), b.cols());
  gemm_acc(a.rows(), a.cols(), b.cols(), a.data().data(), a.cols(), 1, b.data().data(),
           c.data().data());
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw_mismatch("matmul_tn", a, b);
  Matrix c(a.cols(), b.cols());
  gemm_tn_acc(a.cols(), a.rows(), b.cols(), a.data().data(), b.data().data(), c.data().data());
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw_mismatch("matmul_nt", a, b);
  return matmul(a, b.transpose());
}

std::vector<double> matvec(const Matrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) {
    throw ShapeError("matvec: dimension mismatch between " + a.shape_string() + " and " +
                     std::to_string(x.size()) + "x1");
  }
  const std::size_t n = a.cols();
  std::vector<double> y(a.rows(), 0.0);
  std::size_t i = 0;
  // Four independent row sums in flight; each is still accumulated in order.
  for (; i + 4 <= a.rows(); i += 4) {
    const double* r0 = a.row(i).data();
    const double* r1 = r0 + n;
    const double* r2 = r1 + n;
    const double* r3 = r2 + n;
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      s0 += r0[k] * x[k];
      s1 += r1[k] * x[k];
      s2 += r2[k] * x[k];
      s3 += r3[k] * x[k];
    }
    y[i] = s0;
    y[i + 1] = s1;
    y[i + 2] = s2;
    y[i + 3] = s3;
  }
  for (; i < a.rows(); ++i) {
    const auto row = a.row(i);
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += row[k] * x[k];
    y[i] = s;
  }
  return y;
}

namespace {

// y += a^T x over ascending rows of a; vectorizes along y.
FEDRELU_CLONES void matvec_t_acc(std::size_t rows, std::size_t cols, const double* a,
                                 const double* x, double* y) {
  for (std::size_t k = 0; k < rows; ++k) {
    const double* row = a + k * cols;
    const double xk = x[k];
    for (std::size_t j = 0; j < cols; ++j) y[j] += row[j] * xk;
  }
}

}  // namespace

std::vector<double> matvec_t(const Matrix& a, std::span<const double> x) {
  if (a.rows() != x.size()) {
    throw ShapeError("matvec_t: dimension mismatch between " + a.shape_string() +
                     "^T and " + std::to_string(x.size()) + "x1");
  }
  std::vector<double> y(a.cols(), 0.0);
  matvec_t_acc(a.rows(), a.cols(), a.data().data(), x.data(), y.data());
  return y;
}

double frobenius_norm_sq(const Matrix& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return s;
}

double frobenius_norm(const Matrix& a) { return std::sqrt(frobenius_norm_sq(a)); }

double squared_distance(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw_mismatch("squared_distance", a, b);
  const auto ad = a.data();
  const auto bd = b.data();
  double s = 0.0;
  for (std::size_t i = 0; i < ad.size(); ++i) {
    const double diff = ad[i] - bd[i];
    s += diff * diff;
  }
  return s;
}

double inner(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw_mismatch("inner", a, b);
  return dot(a.data(), b.data());
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

namespace {

double power_iterate(const Matrix& a, std::vector<double> v,
                     std::size_t iters, double tol) {
  double estimate = 0.0;
  for (std::size_t it = 0; it < iters; ++it) {
    const std::vector<double> av = matvec(a, v);
    const double next = norm2(av);
    if (next == 0.0) return 0.0;
    std::vector<double> w = matvec_t(a, av);
    const double wn = norm2(w);
    if (wn == 0.0) return next;
    for (double& x : w) x /= wn;
    v = std::move(w);
    const bool converged = it > 0 && std::abs(next - estimate) <= tol * next;
    estimate = next;
    if (converged) break;
  }
  // v was refined after the last estimate; one more product is cheap.
  return std::max(estimate, norm2(matvec(a, v)));
}

}  // namespace

double spectral_norm(const Matrix& a, std::size_t iters, double tol) {
  if (iters == 0) throw ArgumentError("spectral_norm: iters must be >= 1");
  if (a.size() == 0) return 0.0;
  const std::size_t n = a.cols();
  std::vector<double> start(n, 1.0 / std::sqrt(static_cast<double>(n)));
  double s = power_iterate(a, start, iters, tol);
  if (s > 0.0 || frobenius_norm_sq(a) == 0.0) return s;
  // The all-ones start lies in the null space; restart from the column of
  // largest norm.
  std::size_t best = 0;
  double best_norm = -1.0;
  for (std::size_t j = 0; j < n; ++j) {
    double cn = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) cn += a(i, j) * a(i, j);
    if (cn > best_norm) {
      best_norm = cn;
      best = j;
    }
  }
  std::vector<double> e(n, 0.0);
  e[best] = 1.0;
  return power_iterate(a, e, iters, tol);
}

bool all_finite(const Matrix& a) {
  for (double v : a.data())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace fedrelu

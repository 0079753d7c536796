#include "fedrelu/linalg.hpp"

#include <algorithm>
#include <cmath>

#include "fedrelu/error.hpp"

namespace fedrelu {

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double std, RngStream& rng) {
  if (!(std >= 0.0)) throw ArgumentError("gaussian_matrix: std must be >= 0");
  Matrix m(rows, cols);
  for (double& v : m.data()) v = std * rng.normal();
  return m;
}

namespace {

void check_tuple_shapes(const char* op, std::span<const Matrix> a, std::span<const Matrix> b) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(op) + ": tuple lengths differ (" + std::to_string(a.size()) +
                     " vs " + std::to_string(b.size()) + ")");
  }
  for (std::size_t l = 0; l < a.size(); ++l) {
    if (!a[l].same_shape(b[l])) {
      throw ShapeError(std::string(op) + ": layer " + std::to_string(l) + " shapes differ (" +
                       a[l].shape_string() + " vs " + b[l].shape_string() + ")");
    }
  }
}

}  // namespace

BallDistance tuple_ball_distance(std::span<const Matrix> a, std::span<const Matrix> b,
                                 std::size_t iters, double tol) {
  check_tuple_shapes("tuple_ball_distance", a, b);
  BallDistance out;
  out.per_layer.reserve(a.size());
  for (std::size_t l = 0; l < a.size(); ++l) {
    const double s = spectral_norm(a[l] - b[l], iters, tol);
    out.per_layer.push_back(s);
    out.max = std::max(out.max, s);
  }
  return out;
}

double tuple_frobenius_distance(std::span<const Matrix> a, std::span<const Matrix> b) {
  check_tuple_shapes("tuple_frobenius_distance", a, b);
  double s = 0.0;
  for (std::size_t l = 0; l < a.size(); ++l) s += squared_distance(a[l], b[l]);
  return std::sqrt(s);
}

}  // namespace fedrelu

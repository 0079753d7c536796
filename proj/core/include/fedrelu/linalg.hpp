#pragma once

#include <span>
#include <vector>

#include "fedrelu/matrix.hpp"
#include "fedrelu/rng.hpp"

namespace fedrelu {

// Matrix with i.i.d. N(0, std^2) entries drawn row-major from `rng`.
Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double std, RngStream& rng);

// Per-layer spectral distances between two tuples of matrices.
struct BallDistance {
  std::vector<double> per_layer;
  double max = 0.0;

  bool within(double radius) const { return max <= radius; }
};

BallDistance tuple_ball_distance(std::span<const Matrix> a, std::span<const Matrix> b,
                                 std::size_t iters = kDefaultPowerIters,
                                 double tol = kDefaultPowerTol);

// sqrt(sum_l ||a_l - b_l||_F^2)
double tuple_frobenius_distance(std::span<const Matrix> a, std::span<const Matrix> b);

}  // namespace fedrelu

#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "fedrelu/data.hpp"
#include "fedrelu/matrix.hpp"
#include "fedrelu/rng.hpp"

namespace fedrelu::network {

// Fully connected ReLU regression network f(x) = V s(W_L ... s(W_1 x)) with a
// fixed output layer V and L trainable hidden layers of width m.
struct NetConfig {
  std::size_t L = 1;
  std::size_t m = 1;
  std::size_t d = 1;
  std::size_t o = 1;
  // Defaults sqrt(2/m) and sqrt(1/o) when unset.
  std::optional<double> init_hidden_std;
  std::optional<double> init_output_std;

  double hidden_std() const;
  double output_std() const;
  // Throws ArgumentError naming the offending field.
  void validate() const;
  std::size_t num_trainable() const;
};

// Hidden weights W_1 (m x d), W_l (m x m) for l >= 2, and the output layer V
// (o x m). V is shared, immutable, and never trained.
struct Params {
  std::vector<Matrix> W;
  std::shared_ptr<const Matrix> V;

  std::size_t num_layers() const { return W.size(); }
};

// Gradient with respect to each hidden layer; shapes mirror Params::W.
struct ParamGrad {
  std::vector<Matrix> layers;
};

Params init_params(const NetConfig& cfg, RngStream& rng);

// s(z) = z for z >= 0, else 0. The derivative at 0 is taken as 1, i.e. a
// unit with zero pre-activation counts as active.
inline double relu(double z) { return z >= 0.0 ? z : 0.0; }

// Single-example trace. activations[0] is the input x.
struct ForwardTrace {
  std::vector<std::vector<double>> preactivations;  // z_l, l = 1..L
  std::vector<std::vector<double>> activations;     // f_l, l = 0..L
  std::vector<std::vector<bool>> patterns;          // D_l, l = 1..L
  std::vector<double> output;                       // f
};

ForwardTrace forward(const Params& p, std::span<const double> x);

// Output recomputed as V diag(D_L) W_L ... diag(D_1) W_1 x from the trace's
// masks. Matches trace.output bit for bit.
std::vector<double> output_from_patterns(const Params& p, const ForwardTrace& trace,
                                         std::span<const double> x);

// Batch trace with one column per example.
struct BatchTrace {
  std::vector<Matrix> preactivations;  // m x n, l = 1..L
  std::vector<Matrix> activations;     // l = 0..L; [0] is the input batch
  Matrix output;                       // o x n
};

BatchTrace forward_batch(const Params& p, const Matrix& inputs);

// Smallest |z_l[r]| over a batch; the distance to the nearest ReLU kink.
double min_abs_preactivation(const BatchTrace& trace);

// (1/n) sum_j 1/2 ||f(x_j) - y_j||^2
double loss(const Params& p, const data::Shard& shard);
double loss(const Params& p, const Matrix& inputs, const Matrix& targets);

struct LossAndGrad {
  double loss = 0.0;
  ParamGrad grad;
};

// Analytic gradient
//   grad_{W_l} = (1/n) sum_j D_{j,l} B_{j,l+1}^T (f_j - y_j) f_{j,l-1}^T,
//   B_{j,l+1} = V D_{j,L} W_L ... D_{j,l+1} W_{l+1},
// evaluated by back-propagating through the captured patterns.
ParamGrad gradient(const Params& p, const data::Shard& shard);
LossAndGrad loss_and_gradient(const Params& p, const data::Shard& shard);
LossAndGrad loss_and_gradient(const Params& p, const Matrix& inputs, const Matrix& targets);

// Gradient over the examples at `batch` (positions within the shard),
// averaged with weight 1/|batch|. Uniform batches give an unbiased estimate
// of gradient(p, shard).
ParamGrad stochastic_gradient(const Params& p, const data::Shard& shard,
                              std::span<const std::size_t> batch);

// Draws `size` distinct shard positions uniformly (without replacement).
std::vector<std::size_t> sample_batch(std::size_t shard_size, std::size_t size, RngStream& rng);

// --- tuple arithmetic ---------------------------------------------------

double frobenius_norm_sq(const ParamGrad& g);
double frobenius_norm_sq(std::span<const Matrix> layers);
// Sum over layers of entrywise products.
double inner(std::span<const Matrix> a, std::span<const Matrix> b);
// p.W -= eta * g
void apply_step(Params& p, const ParamGrad& g, double eta);
// a - b, layerwise
std::vector<Matrix> difference(std::span<const Matrix> a, std::span<const Matrix> b);

}  // namespace fedrelu::network

#include "fedrelu/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fedrelu/error.hpp"
#include "fedrelu/linalg.hpp"

namespace fedrelu::network {

double NetConfig::hidden_std() const {
  return init_hidden_std.value_or(std::sqrt(2.0 / static_cast<double>(m)));
}

double NetConfig::output_std() const {
  return init_output_std.value_or(std::sqrt(1.0 / static_cast<double>(o)));
}

void NetConfig::validate() const {
  if (L < 1) throw ArgumentError("net.L must be >= 1");
  if (m < 1) throw ArgumentError("net.m must be >= 1");
  if (d < 1) throw ArgumentError("net.d must be >= 1");
  if (o < 1) throw ArgumentError("net.o must be >= 1");
  if (init_hidden_std && !(*init_hidden_std >= 0.0))
    throw ArgumentError("net.init_hidden_std must be >= 0");
  if (init_output_std && !(*init_output_std >= 0.0))
    throw ArgumentError("net.init_output_std must be >= 0");
}

std::size_t NetConfig::num_trainable() const { return m * d + (L - 1) * m * m; }

Params init_params(const NetConfig& cfg, RngStream& rng) {
  cfg.validate();
  Params p;
  p.W.reserve(cfg.L);
  for (std::size_t l = 0; l < cfg.L; ++l) {
    p.W.push_back(gaussian_matrix(cfg.m, l == 0 ? cfg.d : cfg.m, cfg.hidden_std(), rng));
  }
  p.V = std::make_shared<const Matrix>(gaussian_matrix(cfg.o, cfg.m, cfg.output_std(), rng));
  return p;
}

namespace {

void check_input(const Params& p, std::size_t d) {
  if (p.W.empty()) throw ShapeError("network: params have no hidden layers");
  if (p.W.front().cols() != d) {
    throw ShapeError("network: input dimension " + std::to_string(d) + " does not match W_1 " +
                     p.W.front().shape_string());
  }
}

void apply_relu(Matrix& z) {
  for (double& v : z.data()) v = relu(v);
}

}  // namespace

ForwardTrace forward(const Params& p, std::span<const double> x) {
  check_input(p, x.size());
  ForwardTrace t;
  t.activations.emplace_back(x.begin(), x.end());
  for (const Matrix& w : p.W) {
    std::vector<double> z = matvec(w, t.activations.back());
    std::vector<bool> mask(z.size());
    std::vector<double> f(z.size());
    for (std::size_t r = 0; r < z.size(); ++r) {
      mask[r] = z[r] >= 0.0;
      f[r] = relu(z[r]);
    }
    t.preactivations.push_back(std::move(z));
    t.patterns.push_back(std::move(mask));
    t.activations.push_back(std::move(f));
  }
  t.output = matvec(*p.V, t.activations.back());
  return t;
}

std::vector<double> output_from_patterns(const Params& p, const ForwardTrace& trace,
                                         std::span<const double> x) {
  check_input(p, x.size());
  std::vector<double> h(x.begin(), x.end());
  for (std::size_t l = 0; l < p.W.size(); ++l) {
    std::vector<double> z = matvec(p.W[l], h);
    const auto& mask = trace.patterns.at(l);
    for (std::size_t r = 0; r < z.size(); ++r)
      if (!mask[r]) z[r] = 0.0;
    h = std::move(z);
  }
  return matvec(*p.V, h);
}

BatchTrace forward_batch(const Params& p, const Matrix& inputs) {
  check_input(p, inputs.rows());
  BatchTrace t;
  t.activations.reserve(p.W.size() + 1);
  t.preactivations.reserve(p.W.size());
  t.activations.push_back(inputs);
  for (const Matrix& w : p.W) {
    Matrix z = matmul(w, t.activations.back());
    Matrix f = z;
    apply_relu(f);
    t.preactivations.push_back(std::move(z));
    t.activations.push_back(std::move(f));
  }
  t.output = matmul(*p.V, t.activations.back());
  return t;
}

double min_abs_preactivation(const BatchTrace& trace) {
  double best = std::numeric_limits<double>::infinity();
  for (const Matrix& z : trace.preactivations)
    for (double v : z.data()) best = std::min(best, std::abs(v));
  return best;
}

namespace {

double batch_loss(const Matrix& output, const Matrix& targets) {
  const std::size_t n = output.cols();
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < output.rows(); ++k) {
      const double r = output(k, j) - targets(k, j);
      s += r * r;
    }
    total += 0.5 * s;
  }
  return total / static_cast<double>(n);
}

void check_targets(const Params& p, const Matrix& inputs, const Matrix& targets) {
  if (inputs.cols() == 0) throw ArgumentError("network: empty shard");
  if (targets.cols() != inputs.cols() || targets.rows() != p.V->rows()) {
    throw ShapeError("network: targets " + targets.shape_string() + " do not match output " +
                     std::to_string(p.V->rows()) + "x" + std::to_string(inputs.cols()));
  }
}

Matrix gather_columns(const Matrix& m, std::span<const std::size_t> cols) {
  Matrix out(m.rows(), cols.size());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t j = 0; j < cols.size(); ++j) out(r, j) = m(r, cols[j]);
  return out;
}

}  // namespace

double loss(const Params& p, const Matrix& inputs, const Matrix& targets) {
  check_input(p, inputs.rows());
  check_targets(p, inputs, targets);
  return batch_loss(forward_batch(p, inputs).output, targets);
}

double loss(const Params& p, const data::Shard& shard) {
  return loss(p, shard.inputs(), shard.targets());
}

LossAndGrad loss_and_gradient(const Params& p, const Matrix& inputs, const Matrix& targets) {
  check_input(p, inputs.rows());
  check_targets(p, inputs, targets);
  const BatchTrace trace = forward_batch(p, inputs);
  LossAndGrad out;
  out.loss = batch_loss(trace.output, targets);

  // Residual scaled by 1/n so the layer products below are already averages.
  Matrix residual = trace.output - targets;
  residual *= 1.0 / static_cast<double>(inputs.cols());

  const std::size_t L = p.W.size();
  out.grad.layers.resize(L);
  Matrix delta = matmul_tn(*p.V, residual);  // B_{L+1}^T r
  for (std::size_t l = L; l-- > 0;) {
    const Matrix& z = trace.preactivations[l];
    for (std::size_t i = 0; i < delta.size(); ++i)
      if (!(z.data()[i] >= 0.0)) delta.data()[i] = 0.0;
    out.grad.layers[l] = matmul_nt(delta, trace.activations[l]);
    if (l > 0) delta = matmul_tn(p.W[l], delta);
  }
  return out;
}

LossAndGrad loss_and_gradient(const Params& p, const data::Shard& shard) {
  return loss_and_gradient(p, shard.inputs(), shard.targets());
}

ParamGrad gradient(const Params& p, const data::Shard& shard) {
  return loss_and_gradient(p, shard).grad;
}

ParamGrad stochastic_gradient(const Params& p, const data::Shard& shard,
                              std::span<const std::size_t> batch) {
  if (batch.empty()) throw ArgumentError("stochastic_gradient: empty batch");
  for (std::size_t j : batch) {
    if (j >= shard.size()) {
      throw ArgumentError("stochastic_gradient: batch index " + std::to_string(j) +
                          " out of range for shard of " + std::to_string(shard.size()));
    }
  }
  return loss_and_gradient(p, gather_columns(shard.inputs(), batch),
                           gather_columns(shard.targets(), batch))
      .grad;
}

std::vector<std::size_t> sample_batch(std::size_t shard_size, std::size_t size, RngStream& rng) {
  if (size == 0 || size > shard_size) {
    throw ArgumentError("sample_batch: batch size " + std::to_string(size) +
                        " invalid for shard of " + std::to_string(shard_size));
  }
  // Partial Fisher-Yates over positions.
  std::vector<std::size_t> pool(shard_size);
  for (std::size_t i = 0; i < shard_size; ++i) pool[i] = i;
  for (std::size_t i = 0; i < size; ++i) {
    const std::size_t j = i + rng.uniform_index(shard_size - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(size);
  return pool;
}

double frobenius_norm_sq(std::span<const Matrix> layers) {
  double s = 0.0;
  for (const Matrix& m : layers) s += fedrelu::frobenius_norm_sq(m);
  return s;
}

double frobenius_norm_sq(const ParamGrad& g) { return frobenius_norm_sq(g.layers); }

double inner(std::span<const Matrix> a, std::span<const Matrix> b) {
  if (a.size() != b.size()) throw ShapeError("inner: tuple lengths differ");
  double s = 0.0;
  for (std::size_t l = 0; l < a.size(); ++l) s += fedrelu::inner(a[l], b[l]);
  return s;
}

void apply_step(Params& p, const ParamGrad& g, double eta) {
  if (g.layers.size() != p.W.size()) throw ShapeError("apply_step: layer count mismatch");
  for (std::size_t l = 0; l < p.W.size(); ++l) {
    if (!p.W[l].same_shape(g.layers[l])) {
      throw ShapeError("apply_step: layer " + std::to_string(l) + " " + p.W[l].shape_string() +
                       " vs gradient " + g.layers[l].shape_string());
    }
    auto w = p.W[l].data();
    const auto gd = g.layers[l].data();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= eta * gd[i];
  }
}

std::vector<Matrix> difference(std::span<const Matrix> a, std::span<const Matrix> b) {
  if (a.size() != b.size()) throw ShapeError("difference: tuple lengths differ");
  std::vector<Matrix> out;
  out.reserve(a.size());
  for (std::size_t l = 0; l < a.size(); ++l) out.push_back(a[l] - b[l]);
  return out;
}

}  // namespace fedrelu::network

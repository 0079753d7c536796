#include "fedrelu/probes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fedrelu/error.hpp"
#include "fedrelu/linalg.hpp"

namespace fedrelu::probes {

std::vector<std::pair<std::size_t, double>> MetricsLog::loss_per_round(std::size_t tau) const {
  std::vector<std::pair<std::size_t, double>> out;
  for (const auto& r : records)
    if (r.t % tau == 0) out.emplace_back(r.t / tau, r.global_loss);
  return out;
}

double global_loss(const network::Params& p, const data::Partition& partition) {
  double s = 0.0;
  for (const auto& shard : partition.shards) s += network::loss(p, shard);
  return s / static_cast<double>(partition.num_clients());
}

GlobalLossGrad global_loss_and_gradient(const network::Params& p,
                                        const data::Partition& partition) {
  GlobalLossGrad out;
  const double k = static_cast<double>(partition.num_clients());
  for (std::size_t i = 0; i < partition.num_clients(); ++i) {
    network::LossAndGrad lg = network::loss_and_gradient(p, partition.shards[i]);
    out.loss += lg.loss;
    if (i == 0) {
      out.grad = std::move(lg.grad);
    } else {
      for (std::size_t l = 0; l < out.grad.layers.size(); ++l) out.grad.layers[l] += lg.grad.layers[l];
    }
  }
  out.loss /= k;
  for (auto& g : out.grad.layers) g *= 1.0 / k;
  return out;
}

GradRatios grad_ratios(const network::Params& p, const data::Partition& partition,
                       const network::NetConfig& net, double phi) {
  const GlobalLossGrad lg = global_loss_and_gradient(p, partition);
  GradRatios r;
  r.loss = lg.loss;
  r.grad_norm_sq = network::frobenius_norm_sq(lg.grad);
  if (lg.loss <= kLossFloor) return r;
  const double d = static_cast<double>(net.d);
  const double m = static_cast<double>(net.m);
  const double n = static_cast<double>(partition.max_shard_size());
  r.upper = d * r.grad_norm_sq / (m * lg.loss);
  if (phi > 0.0) r.lower = d * n * n * r.grad_norm_sq / (m * phi * lg.loss);
  return r;
}

LipschitzSample lipschitz_sample(const network::Params& w, const network::Params& w_tilde,
                                 const data::Partition& partition) {
  LipschitzSample s;
  s.sq_dist = tuple_ball_distance(w.W, w_tilde.W).max;
  s.sq_dist *= s.sq_dist;
  double total_loss = 0.0;
  for (const auto& shard : partition.shards) {
    const network::ParamGrad g = network::gradient(w, shard);
    const network::LossAndGrad gt = network::loss_and_gradient(w_tilde, shard);
    s.lhs += network::frobenius_norm_sq(network::difference(g.layers, gt.grad.layers));
    total_loss += gt.loss;
  }
  const double k = static_cast<double>(partition.num_clients());
  s.lhs /= k;
  s.loss_tilde = total_loss / k;
  return s;
}

LipschitzScales lipschitz_scales(const network::NetConfig& net, double omega) {
  const double m = static_cast<double>(net.m);
  const double d = static_cast<double>(net.d);
  const double L = static_cast<double>(net.L);
  return {m * std::pow(L, 4) / d,
          std::cbrt(omega * omega) * std::pow(L, 5) * m * std::log(m) / d};
}

SemiSmoothnessTerms semi_smoothness_terms(const network::Params& w_hat,
                                          const network::Params& w_tilde,
                                          const data::Partition& partition,
                                          const network::NetConfig& net, double omega) {
  const GlobalLossGrad at_hat = global_loss_and_gradient(w_hat, partition);
  const double loss_tilde = global_loss(w_tilde, partition);
  const auto delta = network::difference(w_tilde.W, w_hat.W);

  SemiSmoothnessTerms t;
  t.dist = tuple_ball_distance(w_tilde.W, w_hat.W).max;
  t.excess = loss_tilde - at_hat.loss - network::inner(at_hat.grad.layers, delta);
  const double m = static_cast<double>(net.m);
  const double d = static_cast<double>(net.d);
  t.linear = std::sqrt(at_hat.loss) * std::cbrt(omega) * std::sqrt(m * std::log(m)) /
             std::sqrt(d) * t.dist;
  t.quadratic = m / d * t.dist * t.dist;
  return t;
}

double semi_smoothness_residual(const network::Params& w_hat, const network::Params& w_tilde,
                                const data::Partition& partition, const network::NetConfig& net,
                                double omega, double c_prime, double c_double_prime) {
  return semi_smoothness_terms(w_hat, w_tilde, partition, net, omega)
      .residual(c_prime, c_double_prime);
}

TwoTermFit calibrate_two_term(std::span<const TwoTermSample> samples, double safety) {
  TwoTermFit fit;
  for (const auto& s : samples) {
    if (s.excess <= 0.0) continue;
    if (s.a > 0.0) fit.c1 = std::max(fit.c1, 0.5 * s.excess / s.a);
    if (s.b > 0.0) fit.c2 = std::max(fit.c2, 0.5 * s.excess / s.b);
    if (s.a <= 0.0 && s.b <= 0.0) {
      throw ArgumentError("calibrate_two_term: positive excess with both scales zero");
    }
    // One scale vanishing leaves the other to cover the whole excess.
    if (s.a <= 0.0) fit.c2 = std::max(fit.c2, s.excess / s.b);
    if (s.b <= 0.0) fit.c1 = std::max(fit.c1, s.excess / s.a);
  }
  fit.c1 *= safety;
  fit.c2 *= safety;
  return fit;
}

DeviationCheck deviation_check(const federated::FedState& state,
                               const data::Partition& partition, const network::NetConfig& net,
                               double eta, std::size_t tau) {
  DeviationCheck out;
  for (const auto& c : state.clients) {
    for (std::size_t l = 0; l < c.W.size(); ++l)
      out.measured += squared_distance(c.W[l], state.w_sync.W[l]);
  }
  out.measured /= static_cast<double>(state.num_clients());

  // Once the window has started, every client has already evaluated its loss
  // at W(t_c); the same values in the same order give L(W(t_c)) exactly.
  const bool recorded = std::all_of(state.window_losses.begin(), state.window_losses.end(),
                                    [](const auto& h) { return !h.empty(); });
  if (recorded) {
    for (const auto& h : state.window_losses) out.loss_at_sync += h.front();
    out.loss_at_sync /= static_cast<double>(state.num_clients());
  } else {
    out.loss_at_sync = global_loss(state.w_sync, partition);
  }
  const double t = static_cast<double>(tau);
  const double n = static_cast<double>(partition.max_shard_size());
  out.bound_rhs = (eta * eta * t * t + eta * eta * t) *
                  (static_cast<double>(net.m) * n / static_cast<double>(net.d)) *
                  out.loss_at_sync;
  return out;
}

double sgd_shrinkage_factor(double phi, std::size_t m, std::size_t n) {
  const double lnm = std::log(static_cast<double>(m));
  return std::exp(phi / (static_cast<double>(m) * std::pow(static_cast<double>(n), 2.5) *
                         lnm * lnm));
}

double shrinkage_check(std::span<const double> history, federated::Algo algo, double tol_rel,
                       double sgd_bound_factor) {
  if (history.empty()) throw ArgumentError("shrinkage_check: empty history");
  if (algo == federated::Algo::kLocalGD) {
    if (history.size() == 1) return 0.0;
    double worst = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 1; s < history.size(); ++s) {
      double rel = (history[s] - history[s - 1]) / std::max(history[s - 1], kLossFloor);
      if (rel > 0.0 && rel <= tol_rel) rel = 0.0;
      worst = std::max(worst, rel);
    }
    return worst;
  }
  const double base = std::max(history.front(), kLossFloor);
  double worst = -std::numeric_limits<double>::infinity();
  for (double v : history) worst = std::max(worst, v / base - sgd_bound_factor);
  return worst;
}

RateFit linear_rate_fit(std::span<const double> loss_per_round, std::size_t first_index) {
  std::vector<double> xs;
  std::vector<double> ys;
  for (std::size_t k = 0; k < loss_per_round.size(); ++k) {
    if (!(loss_per_round[k] > kLossFloor)) break;
    xs.push_back(static_cast<double>(first_index + k));
    ys.push_back(std::log(loss_per_round[k]));
  }
  if (xs.size() < 3) {
    throw ArgumentError("linear_rate_fit: need at least 3 positive losses, got " +
                        std::to_string(xs.size()));
  }
  const double n = static_cast<double>(xs.size());
  double sx = 0.0;
  double sy = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    sx += xs[k];
    sy += ys[k];
  }
  const double mx = sx / n;
  const double my = sy / n;
  double sxx = 0.0;
  double sxy = 0.0;
  double syy = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const double dx = xs[k] - mx;
    const double dy = ys[k] - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  RateFit fit;
  fit.points = xs.size();
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.implied_rate = std::exp(fit.slope);
  if (syy > 0.0) {
    double ss_res = 0.0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      const double r = ys[k] - (fit.intercept + fit.slope * xs[k]);
      ss_res += r * r;
    }
    fit.r2 = std::clamp(1.0 - ss_res / syy, 0.0, 1.0);
  }
  return fit;
}

DriftReport drift_report(const federated::FedState& state, std::size_t iters, double tol) {
  DriftReport r;
  const network::Params avg = federated::virtual_average(state);
  r.drift_virtual = tuple_ball_distance(avg.W, state.w0.W, iters, tol).max;
  r.drift_virtual_fro = tuple_frobenius_distance(avg.W, state.w0.W);
  for (const auto& c : state.clients) {
    r.drift_client_max =
        std::max(r.drift_client_max, tuple_ball_distance(c.W, state.w0.W, iters, tol).max);
    r.drift_client_max_fro =
        std::max(r.drift_client_max_fro, tuple_frobenius_distance(c.W, state.w0.W));
  }
  return r;
}

double theory_omega(double phi, std::size_t n, std::size_t L, std::size_t m, double constant) {
  const double lnm = std::log(static_cast<double>(m));
  return constant * std::pow(phi, 1.5) * std::pow(static_cast<double>(n), -6.0) *
         std::pow(static_cast<double>(L), -6.0) * std::pow(lnm, -1.5);
}

}  // namespace fedrelu::probes

namespace fedrelu::probes {

ProbeRecord probe(const federated::FedState& state, const data::Partition& partition,
                  const network::NetConfig& net, const federated::FedConfig& cfg,
                  const ProbeSchedule& schedule) {
  ProbeRecord rec;
  rec.t = state.step;
  rec.c = state.round;

  const network::Params avg = federated::virtual_average(state);
  const GradRatios ratios = grad_ratios(avg, partition, net, schedule.phi);
  rec.global_loss = ratios.loss;
  rec.grad_upper_ratio = ratios.upper;
  rec.grad_lower_ratio = ratios.lower;

  const std::size_t n = partition.max_shard_size();
  const double sgd_factor =
      schedule.phi > 0.0 && net.m >= 2 ? sgd_shrinkage_factor(schedule.phi, net.m, n) : 1.0;
  rec.client_loss_min = std::numeric_limits<double>::infinity();
  rec.shrinkage_violation = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < state.num_clients(); ++i) {
    const double li = network::loss(state.clients[i], partition.shards[i]);
    rec.client_loss_min = std::min(rec.client_loss_min, li);
    rec.client_loss_max = std::max(rec.client_loss_max, li);
    rec.client_loss_mean += li;
    std::vector<double> history = state.window_losses[i];
    history.push_back(li);
    rec.shrinkage_violation =
        std::max(rec.shrinkage_violation,
                 shrinkage_check(history, cfg.algo, schedule.shrinkage_tol_rel, sgd_factor));
  }
  rec.client_loss_mean /= static_cast<double>(state.num_clients());

  const DriftReport drift = drift_report(state, schedule.spectral_iters, schedule.spectral_tol);
  rec.drift_virtual = drift.drift_virtual;
  rec.drift_client_max = drift.drift_client_max;
  rec.drift_virtual_fro = drift.drift_virtual_fro;
  rec.drift_client_max_fro = drift.drift_client_max_fro;

  const DeviationCheck dev = deviation_check(state, partition, net, cfg.eta, cfg.tau);
  rec.deviation_mean_sq = dev.measured;
  rec.deviation_bound_rhs = dev.bound_rhs;
  return rec;
}

}  // namespace fedrelu::probes

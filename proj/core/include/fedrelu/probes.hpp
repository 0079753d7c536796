#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedrelu/data.hpp"
#include "fedrelu/federated.hpp"
#include "fedrelu/matrix.hpp"
#include "fedrelu/network.hpp"

namespace fedrelu::probes {

// Losses at or below this are treated as an exact global minimum.
inline constexpr double kLossFloor = 1e-30;

// One instrumentation row. Ball and drift quantities use the max-layer
// spectral distance; deviation and gradient quantities use Frobenius norms.
struct ProbeRecord {
  std::size_t t = 0;
  std::size_t c = 0;
  double global_loss = 0.0;
  double client_loss_min = 0.0;
  double client_loss_mean = 0.0;
  double client_loss_max = 0.0;
  double drift_virtual = 0.0;
  double drift_client_max = 0.0;
  double drift_virtual_fro = 0.0;
  double drift_client_max_fro = 0.0;
  double deviation_mean_sq = 0.0;
  double deviation_bound_rhs = 0.0;
  double grad_upper_ratio = 0.0;
  double grad_lower_ratio = 0.0;
  double shrinkage_violation = 0.0;
};

// Ordered probe rows plus the run header.
struct MetricsLog {
  std::string version;
  std::uint64_t seed = 0;
  std::string config_json;  // fully resolved configuration
  std::vector<ProbeRecord> records;

  // Global loss at every probe taken on a synchronization step, indexed by
  // round (t / tau).
  std::vector<std::pair<std::size_t, double>> loss_per_round(std::size_t tau) const;
};

// L(W) = (1/K) sum_i L_i(W).
double global_loss(const network::Params& p, const data::Partition& partition);

struct GlobalLossGrad {
  double loss = 0.0;
  network::ParamGrad grad;  // (1/K) sum_i grad L_i
};
GlobalLossGrad global_loss_and_gradient(const network::Params& p,
                                        const data::Partition& partition);

// Gradient-bound ratios
//   upper = d ||grad L||_F^2 / (m L),  lower = d n^2 ||grad L||_F^2 / (m phi L)
// with n the per-client sample count. Both are 0 when L <= kLossFloor;
// lower is 0 when phi is not positive.
struct GradRatios {
  double upper = 0.0;
  double lower = 0.0;
  double loss = 0.0;
  double grad_norm_sq = 0.0;
};
GradRatios grad_ratios(const network::Params& p, const data::Partition& partition,
                       const network::NetConfig& net, double phi);

// Raw ingredients of the semi-gradient-Lipschitz inequality
//   lhs <= A sq_dist + B loss_tilde.
struct LipschitzSample {
  double lhs = 0.0;         // (1/K) sum_i ||grad L_i(W) - grad L_i(W~)||_F^2
  double sq_dist = 0.0;     // (max-layer spectral ||W - W~||)^2
  double loss_tilde = 0.0;  // L(W~)
};
LipschitzSample lipschitz_sample(const network::Params& w, const network::Params& w_tilde,
                                 const data::Partition& partition);

// Coefficients in front of the hidden constants:
//   A = C1 * m L^4 / d,  B = C2 * omega^{2/3} L^5 m ln m / d.
struct LipschitzScales {
  double a = 0.0;
  double b = 0.0;
};
LipschitzScales lipschitz_scales(const network::NetConfig& net, double omega);

// Semi-smoothness terms for a pair (W^, W~):
//   excess = L(W~) - L(W^) - <grad L(W^), W~ - W^>
//   linear = sqrt(L(W^)) omega^{1/3} sqrt(m ln m) / sqrt(d) * ||W~ - W^||
//   quadratic = m / d * ||W~ - W^||^2
// with ||.|| the max-layer spectral norm. The lemma states
// excess <= C' linear + C'' quadratic.
struct SemiSmoothnessTerms {
  double excess = 0.0;
  double linear = 0.0;
  double quadratic = 0.0;
  double dist = 0.0;

  double residual(double c_prime, double c_double_prime) const {
    return c_prime * linear + c_double_prime * quadratic - excess;
  }
};
SemiSmoothnessTerms semi_smoothness_terms(const network::Params& w_hat,
                                          const network::Params& w_tilde,
                                          const data::Partition& partition,
                                          const network::NetConfig& net, double omega);
// RHS - LHS of the semi-smoothness inequality; >= 0 when it holds.
double semi_smoothness_residual(const network::Params& w_hat, const network::Params& w_tilde,
                                const data::Partition& partition, const network::NetConfig& net,
                                double omega, double c_prime, double c_double_prime);

// Two hidden constants fitted so that excess_k <= c1 a_k + c2 b_k on every
// calibration sample. Each constant covers half of the worst excess on its
// own, then both are multiplied by `safety`.
struct TwoTermSample {
  double excess = 0.0;
  double a = 0.0;
  double b = 0.0;
};
struct TwoTermFit {
  double c1 = 0.0;
  double c2 = 0.0;
};
TwoTermFit calibrate_two_term(std::span<const TwoTermSample> samples, double safety = 4.0);

// Local model deviation since the last synchronization.
//   measured  = (1/K) sum_i ||W^(i)(t) - W(t_c)||_F^2
//   bound_rhs = (eta^2 tau^2 + eta^2 tau) (m n / d) L(W(t_c))
struct DeviationCheck {
  double measured = 0.0;
  double bound_rhs = 0.0;
  double loss_at_sync = 0.0;
};
DeviationCheck deviation_check(const federated::FedState& state,
                               const data::Partition& partition, const network::NetConfig& net,
                               double eta, std::size_t tau);

// exp(phi / (m n^2.5 ln^2 m)), the LocalSGD growth allowance over L_i(W(t_c)).
double sgd_shrinkage_factor(double phi, std::size_t m, std::size_t n);

// Worst violation of local-loss shrinkage over one inter-sync window
// (history[0] is the loss at the sync point).
//   LocalGD:  max_s (L(s) - L(s-1)) / max(L(s-1), kLossFloor)
//   LocalSGD: max_s L(s) / L(0) - sgd_bound_factor
// LocalGD relative increases no larger than tol_rel are reported as 0. A
// single-entry history yields 0 for LocalGD.
double shrinkage_check(std::span<const double> history, federated::Algo algo,
                       double tol_rel = 0.0, double sgd_bound_factor = 1.0);

// Ordinary least squares of ln(loss) on the round index.
struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  double implied_rate = 1.0;  // exp(slope)
  std::size_t points = 0;
};
// Index of values[k] is first_index + k. The fit window stops at the first
// entry <= kLossFloor. Throws ArgumentError with fewer than 3 usable points.
// r2 is 0 when the log-losses have no variance.
RateFit linear_rate_fit(std::span<const double> loss_per_round, std::size_t first_index = 0);

struct DriftReport {
  double drift_virtual = 0.0;     // max-layer spectral ||W(t) - W(0)||
  double drift_client_max = 0.0;  // max_i max-layer spectral ||W^(i)(t) - W(0)||
  double drift_virtual_fro = 0.0;
  double drift_client_max_fro = 0.0;
};
DriftReport drift_report(const federated::FedState& state,
                         std::size_t iters = kDefaultPowerIters, double tol = kDefaultPowerTol);

struct ProbeSchedule {
  std::size_t every = 0;  // probe period in steps; 0 probes only t = 0 and the last step
  double phi = 0.0;       // separation used by the lower gradient ratio and the SGD factor
  double shrinkage_tol_rel = 0.0;
  std::size_t spectral_iters = kDefaultPowerIters;
  double spectral_tol = kDefaultPowerTol;
};

// Full instrumentation row for the current state. On a synchronization step
// the caller takes it before averaging, so deviation and shrinkage cover the
// whole window. Reads the state only.
ProbeRecord probe(const federated::FedState& state, const data::Partition& partition,
                  const network::NetConfig& net, const federated::FedConfig& cfg,
                  const ProbeSchedule& schedule);

// phi^{3/2} n^{-6} L^{-6} (ln m)^{-3/2} times `constant`.
double theory_omega(double phi, std::size_t n, std::size_t L, std::size_t m,
                    double constant = 1.0);

}  // namespace fedrelu::probes

#include "fedrelu/federated.hpp"

#include <cmath>

#include "fedrelu/error.hpp"

namespace fedrelu::federated {

std::string to_string(Algo a) { return a == Algo::kLocalGD ? "local_gd" : "local_sgd"; }

Algo parse_algo(const std::string& s) {
  if (s == "local_gd") return Algo::kLocalGD;
  if (s == "local_sgd") return Algo::kLocalSGD;
  throw ArgumentError("unknown algorithm '" + s + "' (expected local_gd or local_sgd)");
}

void FedConfig::validate() const {
  if (K < 1) throw ArgumentError("fed.K must be >= 1");
  if (tau < 1) throw ArgumentError("fed.tau must be >= 1");
  if (!(eta > 0.0) || !std::isfinite(eta)) throw ArgumentError("fed.eta must be > 0");
  if (rounds < 1) throw ArgumentError("fed.rounds must be >= 1");
  if (algo == Algo::kLocalSGD && batch < 1) throw ArgumentError("fed.batch must be >= 1");
}

FedState make_state(const network::Params& init, const FedConfig& cfg) {
  FedState s;
  s.clients.assign(cfg.K, init);
  s.w0 = init;
  s.w_sync = init;
  s.client_rngs.reserve(cfg.K);
  for (std::size_t i = 0; i < cfg.K; ++i)
    s.client_rngs.emplace_back(cfg.seed, streams::kClientBase + i);
  s.window_losses.assign(cfg.K, {});
  return s;
}

void local_step(FedState& state, const FedConfig& cfg, const data::Partition& partition,
                std::size_t client) {
  if (client >= state.num_clients()) {
    throw ArgumentError("local_step: client " + std::to_string(client) + " of " +
                        std::to_string(state.num_clients()));
  }
  if (partition.num_clients() != state.num_clients()) {
    throw ShapeError("local_step: partition has " + std::to_string(partition.num_clients()) +
                     " shards for " + std::to_string(state.num_clients()) + " clients");
  }
  const data::Shard& shard = partition.shards[client];
  network::Params& w = state.clients[client];
  if (cfg.algo == Algo::kLocalGD) {
    network::LossAndGrad lg = network::loss_and_gradient(w, shard);
    state.window_losses[client].push_back(lg.loss);
    network::apply_step(w, lg.grad, cfg.eta);
  } else {
    state.window_losses[client].push_back(network::loss(w, shard));
    const auto batch =
        network::sample_batch(shard.size(), std::min(cfg.batch, shard.size()),
                              state.client_rngs[client]);
    network::apply_step(w, network::stochastic_gradient(w, shard, batch), cfg.eta);
  }
}

void advance(FedState& state, const FedConfig& cfg, const data::Partition& partition) {
  for (std::size_t i = 0; i < state.num_clients(); ++i) local_step(state, cfg, partition, i);
  ++state.step;
}

network::Params virtual_average(const FedState& state) {
  if (state.clients.empty()) throw ArgumentError("virtual_average: no clients");
  network::Params avg = state.clients.front();
  const double k = static_cast<double>(state.clients.size());
  for (std::size_t l = 0; l < avg.W.size(); ++l) {
    auto acc = avg.W[l].data();
    for (std::size_t i = 1; i < state.clients.size(); ++i) {
      const auto src = state.clients[i].W[l].data();
      for (std::size_t e = 0; e < acc.size(); ++e) acc[e] += src[e];
    }
    for (double& v : acc) v /= k;
  }
  return avg;
}

void synchronize(FedState& state, const FedConfig& cfg) {
  if (state.step % cfg.tau != 0 || state.step == state.sync_step_) {
    throw ProtocolError("synchronize called at step " + std::to_string(state.step) +
                        " (tau=" + std::to_string(cfg.tau) + ", last sync at step " +
                        std::to_string(state.sync_step_) + ")");
  }
  network::Params avg = virtual_average(state);
  for (auto& c : state.clients) c = avg;
  state.w_sync = std::move(avg);
  state.sync_step_ = state.step;
  ++state.round;
  for (auto& h : state.window_losses) h.clear();
}

double default_lr(Algo algo, const network::NetConfig& net, std::size_t n, double phi,
                  std::size_t tau, double c_eta) {
  if (n == 0 || !(phi > 0.0) || tau == 0 || net.m == 0 || net.d == 0)
    throw ArgumentError("default_lr: all arguments must be positive");
  if (c_eta < 0.0) throw ArgumentError("default_lr: c_eta must be nonnegative");
  const double d = static_cast<double>(net.d);
  const double m = static_cast<double>(net.m);
  const double nn = static_cast<double>(n);
  const double t = static_cast<double>(tau);
  if (algo == Algo::kLocalGD) return c_eta * d * nn * nn / (m * phi * t);
  if (net.m < 2) throw ArgumentError("default_lr: LocalSGD needs m >= 2 (ln m > 0)");
  const double lnm = std::log(m);
  return c_eta * d * phi / (m * t * nn * nn * nn * lnm * lnm);
}

}  // namespace fedrelu::federated

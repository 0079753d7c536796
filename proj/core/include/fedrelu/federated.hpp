#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fedrelu/data.hpp"
#include "fedrelu/network.hpp"
#include "fedrelu/rng.hpp"

namespace fedrelu::federated {

enum class Algo { kLocalGD, kLocalSGD };

std::string to_string(Algo a);
// "local_gd" / "local_sgd"; throws ArgumentError otherwise.
Algo parse_algo(const std::string& s);

struct FedConfig {
  std::size_t K = 1;
  std::size_t tau = 1;
  double eta = 0.0;
  std::size_t rounds = 1;
  Algo algo = Algo::kLocalGD;
  std::size_t batch = 1;  // LocalSGD only
  std::uint64_t seed = 0;
  double c_eta = 1.0;

  std::size_t total_steps() const { return rounds * tau; }
  void validate() const;
};

// Per-client models plus the snapshots the probes measure against.
struct FedState {
  std::vector<network::Params> clients;
  network::Params w0;      // W(0), never mutated
  network::Params w_sync;  // W(t_c), the model broadcast at the latest sync
  std::size_t round = 0;   // c: number of completed synchronizations
  std::size_t step = 0;    // t: local steps taken by every client
  std::vector<RngStream> client_rngs;
  // L_i(W^(i)(s)) for s = t_c .. t-1, recorded before each local step.
  std::vector<std::vector<double>> window_losses;

  std::size_t num_clients() const { return clients.size(); }
  std::size_t last_sync_step() const { return sync_step_; }

 private:
  friend FedState make_state(const network::Params&, const FedConfig&);
  friend void synchronize(FedState&, const FedConfig&);
  std::size_t sync_step_ = 0;
};

// All K clients start from `init`; client i samples from stream
// (cfg.seed, kClientBase + i).
FedState make_state(const network::Params& init, const FedConfig& cfg);

// One local update of `client` on its own shard:
//   LocalGD:  W <- W - eta * grad L_i(W)
//   LocalSGD: W <- W - eta * G_i, G_i over a fresh uniform batch.
// Does not advance state.step; see advance().
void local_step(FedState& state, const FedConfig& cfg, const data::Partition& partition,
                std::size_t client);

// local_step for every client in ascending order, then ++step.
void advance(FedState& state, const FedConfig& cfg, const data::Partition& partition);

// Entrywise mean of the client models, summed in ascending client order.
network::Params virtual_average(const FedState& state);

// Broadcasts one averaged copy to every client, records it as W(t_c) and
// increments the round. Throws ProtocolError unless step is a multiple of
// tau not yet synchronized.
void synchronize(FedState& state, const FedConfig& cfg);

// Step size from the convergence theorems with hidden constant c_eta:
//   LocalGD:  c_eta d n^2 / (m phi tau)
//   LocalSGD: c_eta d phi / (m tau n^3 ln^2 m)
// n is the per-client sample count.
double default_lr(Algo algo, const network::NetConfig& net, std::size_t n, double phi,
                  std::size_t tau, double c_eta);

}  // namespace fedrelu::federated

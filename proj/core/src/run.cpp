#include "fedrelu/run.hpp"

#include "fedrelu/error.hpp"

namespace fedrelu::federated {

probes::MetricsLog run_from(const network::Params& init, const FedConfig& cfg,
                            const data::Partition& partition, const network::NetConfig& net,
                            const probes::ProbeSchedule& schedule, RunObserver* observer,
                            FedState* final_state) {
  cfg.validate();
  if (partition.num_clients() != cfg.K) {
    throw ArgumentError("run: partition has " + std::to_string(partition.num_clients()) +
                        " shards but fed.K=" + std::to_string(cfg.K));
  }
  FedState state = make_state(init, cfg);
  probes::MetricsLog log;
  log.seed = cfg.seed;

  auto take = [&] {
    log.records.push_back(probes::probe(state, partition, net, cfg, schedule));
    if (observer) observer->on_probe(state, log.records.back());
  };

  take();
  const std::size_t total = cfg.total_steps();
  for (std::size_t r = 0; r < cfg.rounds; ++r) {
    for (std::size_t s = 0; s < cfg.tau; ++s) {
      advance(state, cfg, partition);
      if (observer) observer->on_step(state);
      const bool scheduled = schedule.every > 0 && state.step % schedule.every == 0;
      if (scheduled || state.step == total) take();
    }
    synchronize(state, cfg);
    if (observer) observer->on_sync(state);
  }
  if (final_state) *final_state = std::move(state);
  return log;
}

probes::MetricsLog run(const FedConfig& cfg, const data::Partition& partition,
                       const network::NetConfig& net, const probes::ProbeSchedule& schedule,
                       RunObserver* observer) {
  RngStream init_rng(cfg.seed, streams::kInit);
  return run_from(network::init_params(net, init_rng), cfg, partition, net, schedule, observer);
}

}  // namespace fedrelu::federated

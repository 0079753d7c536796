#pragma once

#include "fedrelu/data.hpp"
#include "fedrelu/federated.hpp"
#include "fedrelu/network.hpp"
#include "fedrelu/probes.hpp"

namespace fedrelu::federated {

// Hooks into the training loop. Callbacks see the state read-only.
class RunObserver {
 public:
  virtual ~RunObserver() = default;
  // After every client has taken local step `state.step`, before any sync.
  virtual void on_step(const FedState&) {}
  // Right after synchronize().
  virtual void on_sync(const FedState&) {}
  virtual void on_probe(const FedState&, const probes::ProbeRecord&) {}
};

// R rounds of (tau local steps on every client, then synchronize). Params are
// initialized from stream (cfg.seed, kInit). Probes run at t = 0, at every
// multiple of schedule.every and at the final step; on a sync step the probe
// precedes averaging. Bit-deterministic for a fixed configuration.
probes::MetricsLog run(const FedConfig& cfg, const data::Partition& partition,
                       const network::NetConfig& net, const probes::ProbeSchedule& schedule,
                       RunObserver* observer = nullptr);

// Same loop from explicit initial parameters; `final_state` receives the
// state after the last synchronization when non-null.
probes::MetricsLog run_from(const network::Params& init, const FedConfig& cfg,
                            const data::Partition& partition, const network::NetConfig& net,
                            const probes::ProbeSchedule& schedule,
                            RunObserver* observer = nullptr, FedState* final_state = nullptr);

}  // namespace fedrelu::federated

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedrelu/data.hpp"
#include "fedrelu/error.hpp"
#include "fedrelu/federated.hpp"
#include "fedrelu/network.hpp"
#include "fedrelu/probes.hpp"

namespace fedrelu::experiment {

// Environment variable that, when set, prefixes every relative out_dir.
inline constexpr const char* kOutRootEnv = "FEDRELU_OUT_ROOT";

inline constexpr const char* kMetricsFile = "metrics.csv";
inline constexpr const char* kConfigFile = "config.json";
inline constexpr const char* kSummaryFile = "summary.json";
inline constexpr const char* kSweepSummaryFile = "sweep_summary.csv";

// Every validation problem found, each prefixed by its field path.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

struct SyntheticSource {
  std::size_t n_total = 0;
  double phi = 0.0;
  double teacher_std = 1.0;
  std::optional<std::uint64_t> seed;  // defaults to fed.seed
};

struct IdxSource {
  std::string images;
  std::string labels;
  std::optional<double> phi;  // computed from the loaded inputs when absent
  double target_scale = 1.0;
  std::size_t limit = 0;
  std::optional<std::string> test_images;
  std::optional<std::string> test_labels;
};

struct PartitionSpec {
  data::Scheme scheme = data::Scheme::kIid;
  std::size_t classes_per_client = 1;
};

struct ProbeSpec {
  std::size_t every = 0;
  std::size_t spectral_iters = kDefaultPowerIters;
  double spectral_tol = kDefaultPowerTol;
  double shrinkage_tol_rel = 0.0;
  double omega_constant = 1.0;  // scales theory_omega for the drift/omega report
};

struct SweepSpec {
  std::string param;  // m, L, tau, K, eta, c_eta, batch, n_total, classes_per_client
  std::vector<double> values;
  std::vector<std::uint64_t> seeds;
  // When set, rounds = total_steps / tau in every cell (equal local work).
  std::optional<std::size_t> total_steps;
};

struct ExperimentConfig {
  network::NetConfig net;
  federated::FedConfig fed;
  bool eta_explicit = false;  // otherwise fed.eta comes from default_lr(c_eta)
  std::optional<SyntheticSource> synthetic;
  std::optional<IdxSource> idx;
  PartitionSpec partition;
  ProbeSpec probe;
  std::string out_dir = "runs/default";
  std::optional<SweepSpec> sweep;
};

// Structural and range validation with all problems reported at once.
// For IDX data net.d and net.o may be omitted (left 0) and are then taken
// from the images; for synthetic data net.o defaults to 1. Relative IDX paths resolve against `base_dir`.
ExperimentConfig validate_config(const nlohmann::json& raw,
                                 const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

// Range and consistency problems of an already typed configuration.
std::vector<std::string> check(const ExperimentConfig& cfg);

// Resolved configuration with every default filled in. Parsing the result
// again yields the same configuration.
nlohmann::json to_json(const ExperimentConfig& cfg);

// Data, partition and resolved step size for one run.
struct Prepared {
  data::Dataset dataset;
  data::Partition partition;
  std::optional<data::Dataset> test_set;
  std::optional<data::IdxLoadReport> idx_report;
  double phi = 0.0;
  ExperimentConfig resolved;  // net.d, net.o and fed.eta filled in
  bool eta_derived = false;   // fed.eta came from default_lr
};
Prepared prepare(const ExperimentConfig& cfg);

struct RunOutcome {
  probes::MetricsLog log;
  std::vector<double> loss_per_round;  // L(W(t_c)) for c = 0..R
  std::optional<probes::RateFit> rate;
  std::optional<double> test_accuracy;
  std::filesystem::path dir;
};

// out_dir with the output-root override applied.
std::filesystem::path resolve_out_dir(const std::string& out_dir);

// Runs one configuration (ignoring any sweep block) and writes metrics.csv,
// config.json and summary.json into `dir`, overwriting earlier runs.
RunOutcome run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& dir);
RunOutcome run_experiment(const ExperimentConfig& cfg);

// Fixed CSV schema of the metrics file.
std::string metrics_header();
std::string metrics_csv(const probes::MetricsLog& log);

struct SweepRow {
  double value = 0.0;
  std::size_t seeds = 0;
  double final_loss_mean = 0.0;
  double final_loss_min = 0.0;
  double final_loss_max = 0.0;
  double rate_slope_mean = 0.0;  // NaN when no cell had enough rounds
  double rate_r2_mean = 0.0;
};

struct SweepOutcome {
  std::vector<SweepRow> rows;  // in the order of sweep.values
  std::vector<std::filesystem::path> cell_dirs;
};

// Copy of `base` with sweep parameter `param` set to `value`.
ExperimentConfig apply_sweep_value(const ExperimentConfig& base, const std::string& param,
                                   double value);
// Cell directory name, for example "m-64_seed-1".
std::string cell_name(const std::string& param, double value, std::uint64_t seed);

// Runs every (value, seed) cell under out_dir and writes sweep_summary.csv.
SweepOutcome sweep(const ExperimentConfig& cfg);

std::string version();

}  // namespace fedrelu::experiment

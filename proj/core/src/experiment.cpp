#include "fedrelu/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "fedrelu/run.hpp"

#ifndef FEDRELU_VERSION
#define FEDRELU_VERSION "unknown"
#endif

namespace fedrelu::experiment {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string join_problems(const std::vector<std::string>& problems) {
  std::string out = "invalid configuration:";
  for (const auto& p : problems) out += "\n  " + p;
  return out;
}

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

bool is_integral_value(double v) { return std::isfinite(v) && v == std::floor(v); }

// Integer JSON values built in code are signed even when non-negative.
std::optional<std::uint64_t> as_unsigned(const json& v) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0)
    return static_cast<std::uint64_t>(v.get<std::int64_t>());
  return std::nullopt;
}

// --- typed reads from JSON ------------------------------------------------

class Reader {
 public:
  explicit Reader(std::vector<std::string>& problems) : problems_(problems) {}

  void problem(std::string msg) { problems_.push_back(std::move(msg)); }

  // Reports keys of `obj` outside `known`.
  void unknown_keys(const json& obj, const std::string& path,
                    std::initializer_list<const char*> known) {
    for (const auto& [key, _] : obj.items()) {
      const bool ok =
          std::any_of(known.begin(), known.end(), [&](const char* k) { return key == k; });
      if (!ok) problem("unknown field " + path + "." + key);
    }
  }

  bool object(const json& obj, const std::string& path) {
    if (obj.is_object()) return true;
    problem(path + " must be an object");
    return false;
  }

  std::optional<std::size_t> count(const json& obj, const char* key, const std::string& path) {
    if (!obj.contains(key)) return std::nullopt;
    const json& v = obj.at(key);
    if (const auto u = as_unsigned(v)) return static_cast<std::size_t>(*u);
    if (v.is_number_integer()) {
      problem(path + "." + key + " must be ≥ 0");
    } else {
      problem(path + "." + key + " must be a non-negative integer");
    }
    return std::nullopt;
  }

  std::optional<std::uint64_t> seed(const json& obj, const char* key, const std::string& path) {
    if (!obj.contains(key)) return std::nullopt;
    const json& v = obj.at(key);
    if (const auto u = as_unsigned(v)) return *u;
    problem(path + "." + key + " must be a non-negative integer");
    return std::nullopt;
  }

  std::optional<double> number(const json& obj, const char* key, const std::string& path) {
    if (!obj.contains(key)) return std::nullopt;
    const json& v = obj.at(key);
    if (v.is_number()) return v.get<double>();
    problem(path + "." + key + " must be a number");
    return std::nullopt;
  }

  std::optional<std::string> string(const json& obj, const char* key, const std::string& path) {
    if (!obj.contains(key)) return std::nullopt;
    const json& v = obj.at(key);
    if (v.is_string()) return v.get<std::string>();
    problem(path + "." + key + " must be a string");
    return std::nullopt;
  }

 private:
  std::vector<std::string>& problems_;
};

template <class T>
void assign(T& dst, const std::optional<T>& src) {
  if (src) dst = *src;
}

std::string resolve_path(const std::string& p, const fs::path& base) {
  if (p.empty() || base.empty() || fs::path(p).is_absolute()) return p;
  return (base / p).lexically_normal().string();
}

const std::set<std::string>& sweep_params() {
  static const std::set<std::string> params = {"m", "L", "tau", "K", "eta", "c_eta",
                                               "batch", "n_total", "classes_per_client"};
  return params;
}

bool integer_param(const std::string& p) { return p != "eta" && p != "c_eta"; }

void parse_net(Reader& rd, const json& j, ExperimentConfig& cfg) {
  if (!rd.object(j, "net")) return;
  rd.unknown_keys(j, "net", {"L", "m", "d", "o", "init_hidden_std", "init_output_std"});
  auto L = rd.count(j, "L", "net");
  auto m = rd.count(j, "m", "net");
  if (!j.contains("L")) rd.problem("net.L is required");
  if (!j.contains("m")) rd.problem("net.m is required");
  assign(cfg.net.L, L);
  assign(cfg.net.m, m);
  cfg.net.d = rd.count(j, "d", "net").value_or(0);
  cfg.net.o = rd.count(j, "o", "net").value_or(0);
  cfg.net.init_hidden_std = rd.number(j, "init_hidden_std", "net");
  cfg.net.init_output_std = rd.number(j, "init_output_std", "net");
}

void parse_fed(Reader& rd, const json& j, ExperimentConfig& cfg) {
  if (!rd.object(j, "fed")) return;
  rd.unknown_keys(j, "fed", {"K", "tau", "rounds", "algo", "eta", "c_eta", "batch", "seed"});
  for (const char* key : {"K", "tau", "rounds"})
    if (!j.contains(key)) rd.problem(std::string("fed.") + key + " is required");
  assign(cfg.fed.K, rd.count(j, "K", "fed"));
  assign(cfg.fed.tau, rd.count(j, "tau", "fed"));
  assign(cfg.fed.rounds, rd.count(j, "rounds", "fed"));
  assign(cfg.fed.batch, rd.count(j, "batch", "fed"));
  assign(cfg.fed.seed, rd.seed(j, "seed", "fed"));
  if (auto algo = rd.string(j, "algo", "fed")) {
    try {
      cfg.fed.algo = federated::parse_algo(*algo);
    } catch (const ArgumentError&) {
      rd.problem("fed.algo must be \"local_gd\" or \"local_sgd\"");
    }
  }
  if (auto eta = rd.number(j, "eta", "fed")) {
    cfg.fed.eta = *eta;
    cfg.eta_explicit = true;
  }
  assign(cfg.fed.c_eta, rd.number(j, "c_eta", "fed"));
}

void parse_data(Reader& rd, const json& j, ExperimentConfig& cfg, const fs::path& base) {
  if (!rd.object(j, "data")) return;
  rd.unknown_keys(j, "data", {"synthetic", "idx"});
  if (j.contains("synthetic") == j.contains("idx")) {
    rd.problem("data: exactly one data source (synthetic or idx) must be given");
  }
  if (j.contains("synthetic")) {
    const json& s = j.at("synthetic");
    if (rd.object(s, "data.synthetic")) {
      rd.unknown_keys(s, "data.synthetic", {"n_total", "phi", "teacher_std", "seed"});
      SyntheticSource src;
      if (!s.contains("n_total")) rd.problem("data.synthetic.n_total is required");
      if (!s.contains("phi")) rd.problem("data.synthetic.phi is required");
      assign(src.n_total, rd.count(s, "n_total", "data.synthetic"));
      assign(src.phi, rd.number(s, "phi", "data.synthetic"));
      assign(src.teacher_std, rd.number(s, "teacher_std", "data.synthetic"));
      src.seed = rd.seed(s, "seed", "data.synthetic");
      cfg.synthetic = src;
    }
  }
  if (j.contains("idx")) {
    const json& s = j.at("idx");
    if (rd.object(s, "data.idx")) {
      rd.unknown_keys(s, "data.idx", {"images", "labels", "phi", "target_scale", "limit",
                                      "test_images", "test_labels"});
      IdxSource src;
      if (!s.contains("images")) rd.problem("data.idx.images is required");
      if (!s.contains("labels")) rd.problem("data.idx.labels is required");
      src.images = resolve_path(rd.string(s, "images", "data.idx").value_or(""), base);
      src.labels = resolve_path(rd.string(s, "labels", "data.idx").value_or(""), base);
      src.phi = rd.number(s, "phi", "data.idx");
      assign(src.target_scale, rd.number(s, "target_scale", "data.idx"));
      assign(src.limit, rd.count(s, "limit", "data.idx"));
      if (auto t = rd.string(s, "test_images", "data.idx")) src.test_images = resolve_path(*t, base);
      if (auto t = rd.string(s, "test_labels", "data.idx")) src.test_labels = resolve_path(*t, base);
      cfg.idx = src;
    }
  }
}

void parse_partition(Reader& rd, const json& j, ExperimentConfig& cfg) {
  if (!rd.object(j, "partition")) return;
  rd.unknown_keys(j, "partition", {"scheme", "classes_per_client"});
  if (auto scheme = rd.string(j, "scheme", "partition")) {
    if (*scheme == "iid") {
      cfg.partition.scheme = data::Scheme::kIid;
    } else if (*scheme == "label_shards") {
      cfg.partition.scheme = data::Scheme::kLabelShards;
    } else {
      rd.problem("partition.scheme must be \"iid\" or \"label_shards\"");
    }
  }
  assign(cfg.partition.classes_per_client, rd.count(j, "classes_per_client", "partition"));
}

void parse_probe(Reader& rd, const json& j, ExperimentConfig& cfg) {
  if (!rd.object(j, "probe")) return;
  rd.unknown_keys(j, "probe", {"every", "spectral_iters", "spectral_tol", "shrinkage_tol_rel",
                               "omega_constant"});
  assign(cfg.probe.every, rd.count(j, "every", "probe"));
  assign(cfg.probe.spectral_iters, rd.count(j, "spectral_iters", "probe"));
  assign(cfg.probe.spectral_tol, rd.number(j, "spectral_tol", "probe"));
  assign(cfg.probe.shrinkage_tol_rel, rd.number(j, "shrinkage_tol_rel", "probe"));
  assign(cfg.probe.omega_constant, rd.number(j, "omega_constant", "probe"));
}

void parse_sweep(Reader& rd, const json& j, ExperimentConfig& cfg) {
  if (!rd.object(j, "sweep")) return;
  rd.unknown_keys(j, "sweep", {"param", "values", "seeds", "total_steps"});
  SweepSpec sw;
  if (!j.contains("param")) rd.problem("sweep.param is required");
  sw.param = rd.string(j, "param", "sweep").value_or("");
  if (!j.contains("values")) {
    rd.problem("sweep.values is required");
  } else if (!j.at("values").is_array()) {
    rd.problem("sweep.values must be an array");
  } else {
    for (const auto& v : j.at("values")) {
      if (v.is_number()) {
        sw.values.push_back(v.get<double>());
      } else {
        rd.problem("sweep.values entries must be numbers");
      }
    }
  }
  if (j.contains("seeds")) {
    if (!j.at("seeds").is_array()) {
      rd.problem("sweep.seeds must be an array");
    } else {
      for (const auto& v : j.at("seeds")) {
        if (const auto u = as_unsigned(v)) {
          sw.seeds.push_back(*u);
        } else {
          rd.problem("sweep.seeds entries must be non-negative integers");
        }
      }
      if (sw.seeds.empty()) rd.problem("sweep.seeds must be nonempty");
    }
  } else {
    sw.seeds.push_back(cfg.fed.seed);
  }
  sw.total_steps = rd.count(j, "total_steps", "sweep");
  cfg.sweep = sw;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : Error(join_problems(problems)), problems_(std::move(problems)) {}

std::string version() { return FEDRELU_VERSION; }

std::vector<std::string> check(const ExperimentConfig& cfg) {
  std::vector<std::string> pr;
  auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
  auto nonneg = [](double v) { return std::isfinite(v) && v >= 0.0; };

  if (cfg.net.L < 1) pr.push_back("net.L must be ≥ 1");
  if (cfg.net.m < 1) pr.push_back("net.m must be ≥ 1");
  if (cfg.synthetic && cfg.net.d < 1) pr.push_back("net.d must be ≥ 1 for synthetic data");
  if (cfg.net.init_hidden_std && !nonneg(*cfg.net.init_hidden_std))
    pr.push_back("net.init_hidden_std must be ≥ 0");
  if (cfg.net.init_output_std && !nonneg(*cfg.net.init_output_std))
    pr.push_back("net.init_output_std must be ≥ 0");

  if (cfg.fed.K < 1) pr.push_back("fed.K must be ≥ 1");
  if (cfg.fed.tau < 1) pr.push_back("fed.tau must be ≥ 1");
  if (cfg.fed.rounds < 1) pr.push_back("fed.rounds must be ≥ 1");
  if (cfg.fed.batch < 1) pr.push_back("fed.batch must be ≥ 1");
  if (cfg.eta_explicit) {
    if (!positive(cfg.fed.eta)) pr.push_back("fed.eta must be > 0");
  } else if (!positive(cfg.fed.c_eta)) {
    pr.push_back("fed.c_eta must be > 0");
  }

  if (cfg.synthetic.has_value() == cfg.idx.has_value()) {
    pr.push_back("data: exactly one data source (synthetic or idx) must be given");
  }
  if (cfg.synthetic) {
    const auto& s = *cfg.synthetic;
    if (s.n_total < 1) pr.push_back("data.synthetic.n_total must be ≥ 1");
    if (s.n_total < cfg.fed.K) pr.push_back("data.synthetic.n_total must be ≥ fed.K");
    if (!nonneg(s.phi)) pr.push_back("data.synthetic.phi must be ≥ 0");
    if (s.phi == 0.0 && !cfg.eta_explicit && cfg.fed.algo == federated::Algo::kLocalGD)
      pr.push_back("data.synthetic.phi must be > 0 when fed.eta is derived from fed.c_eta");
    if (s.phi > 2.0) pr.push_back("data.synthetic.phi must be ≤ 2");
    if (!nonneg(s.teacher_std)) pr.push_back("data.synthetic.teacher_std must be ≥ 0");
  }
  if (cfg.idx) {
    const auto& s = *cfg.idx;
    if (s.images.empty()) pr.push_back("data.idx.images must be a nonempty path");
    if (s.labels.empty()) pr.push_back("data.idx.labels must be a nonempty path");
    if (s.phi && !positive(*s.phi)) pr.push_back("data.idx.phi must be > 0");
    if (!positive(s.target_scale)) pr.push_back("data.idx.target_scale must be > 0");
    if (s.test_images.has_value() != s.test_labels.has_value())
      pr.push_back("data.idx.test_images and data.idx.test_labels must be given together");
  }

  if (cfg.partition.scheme == data::Scheme::kLabelShards && cfg.partition.classes_per_client < 1)
    pr.push_back("partition.classes_per_client must be ≥ 1");

  if (cfg.probe.spectral_iters < 1) pr.push_back("probe.spectral_iters must be ≥ 1");
  if (!nonneg(cfg.probe.spectral_tol)) pr.push_back("probe.spectral_tol must be ≥ 0");
  if (!nonneg(cfg.probe.shrinkage_tol_rel)) pr.push_back("probe.shrinkage_tol_rel must be ≥ 0");
  if (!positive(cfg.probe.omega_constant)) pr.push_back("probe.omega_constant must be > 0");
  if (cfg.out_dir.empty()) pr.push_back("out_dir must be nonempty");

  if (cfg.sweep) {
    const auto& sw = *cfg.sweep;
    if (!sweep_params().count(sw.param)) {
      pr.push_back("sweep.param must be one of m, L, tau, K, eta, c_eta, batch, n_total, "
                   "classes_per_client");
    }
    if (sw.values.empty()) pr.push_back("sweep.values must be nonempty");
    if (sw.seeds.empty()) pr.push_back("sweep.seeds must be nonempty");
    for (double v : sw.values) {
      if (integer_param(sw.param) ? !(is_integral_value(v) && v >= 1.0) : !positive(v)) {
        pr.push_back("sweep.values entry " + format_number(v) + " is not valid for " + sw.param);
      }
    }
    if (sw.param == "c_eta" && cfg.eta_explicit)
      pr.push_back("sweep.param c_eta has no effect when fed.eta is given");
    if (sw.param == "n_total" && !cfg.synthetic)
      pr.push_back("sweep.param n_total requires synthetic data");
    if (sw.total_steps) {
      if (*sw.total_steps < 1) pr.push_back("sweep.total_steps must be ≥ 1");
      std::vector<double> taus;
      if (sw.param == "tau") {
        taus = sw.values;
      } else {
        taus.push_back(static_cast<double>(cfg.fed.tau));
      }
      for (double t : taus) {
        if (t >= 1.0 && is_integral_value(t) &&
            *sw.total_steps % static_cast<std::size_t>(t) != 0) {
          pr.push_back("sweep.total_steps must be a multiple of tau=" + format_number(t));
        }
      }
    }
  }
  return pr;
}

ExperimentConfig validate_config(const json& raw, const fs::path& base_dir) {
  std::vector<std::string> problems;
  Reader rd(problems);
  ExperimentConfig cfg;
  if (!raw.is_object()) throw ConfigError({"configuration must be a JSON object"});
  rd.unknown_keys(raw, "config",
                  {"net", "fed", "data", "partition", "probe", "probe_every", "out_dir", "sweep"});

  if (raw.contains("net")) {
    parse_net(rd, raw.at("net"), cfg);
  } else {
    rd.problem("net is required");
  }
  if (raw.contains("fed")) {
    parse_fed(rd, raw.at("fed"), cfg);
  } else {
    rd.problem("fed is required");
  }
  if (raw.contains("data")) {
    parse_data(rd, raw.at("data"), cfg, base_dir);
  } else {
    rd.problem("data: exactly one data source (synthetic or idx) must be given");
  }
  if (raw.contains("partition")) parse_partition(rd, raw.at("partition"), cfg);
  if (raw.contains("probe")) parse_probe(rd, raw.at("probe"), cfg);
  if (raw.contains("probe_every")) {
    if (raw.contains("probe") && raw.at("probe").is_object() && raw.at("probe").contains("every")) {
      rd.problem("probe_every conflicts with probe.every");
    }
    assign(cfg.probe.every, rd.count(raw, "probe_every", "config"));
  }
  assign(cfg.out_dir, rd.string(raw, "out_dir", "config"));
  if (raw.contains("sweep")) parse_sweep(rd, raw.at("sweep"), cfg);

  // Typed checks only make sense on fields that parsed; the parse errors
  // above already explain the rest.
  if (problems.empty()) {
    if (cfg.synthetic && cfg.net.o == 0) cfg.net.o = 1;
    problems = check(cfg);
  }
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError({path.string() + ": cannot open"});
  json raw;
  try {
    raw = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError({path.string() + ": " + e.what()});
  }
  return validate_config(raw, path.parent_path());
}

json to_json(const ExperimentConfig& cfg) {
  json j;
  json& net = j["net"];
  net["L"] = cfg.net.L;
  net["m"] = cfg.net.m;
  if (cfg.net.d) net["d"] = cfg.net.d;
  if (cfg.net.o) net["o"] = cfg.net.o;
  if (cfg.net.init_hidden_std) net["init_hidden_std"] = *cfg.net.init_hidden_std;
  if (cfg.net.init_output_std) net["init_output_std"] = *cfg.net.init_output_std;

  json& fed = j["fed"];
  fed["K"] = cfg.fed.K;
  fed["tau"] = cfg.fed.tau;
  fed["rounds"] = cfg.fed.rounds;
  fed["algo"] = federated::to_string(cfg.fed.algo);
  if (cfg.eta_explicit) fed["eta"] = cfg.fed.eta;
  fed["c_eta"] = cfg.fed.c_eta;
  fed["batch"] = cfg.fed.batch;
  fed["seed"] = cfg.fed.seed;

  if (cfg.synthetic) {
    json& s = j["data"]["synthetic"];
    s["n_total"] = cfg.synthetic->n_total;
    s["phi"] = cfg.synthetic->phi;
    s["teacher_std"] = cfg.synthetic->teacher_std;
    if (cfg.synthetic->seed) s["seed"] = *cfg.synthetic->seed;
  }
  if (cfg.idx) {
    json& s = j["data"]["idx"];
    s["images"] = cfg.idx->images;
    s["labels"] = cfg.idx->labels;
    if (cfg.idx->phi) s["phi"] = *cfg.idx->phi;
    s["target_scale"] = cfg.idx->target_scale;
    s["limit"] = cfg.idx->limit;
    if (cfg.idx->test_images) s["test_images"] = *cfg.idx->test_images;
    if (cfg.idx->test_labels) s["test_labels"] = *cfg.idx->test_labels;
  }

  j["partition"]["scheme"] = data::to_string(cfg.partition.scheme);
  j["partition"]["classes_per_client"] = cfg.partition.classes_per_client;

  json& probe = j["probe"];
  probe["every"] = cfg.probe.every;
  probe["spectral_iters"] = cfg.probe.spectral_iters;
  probe["spectral_tol"] = cfg.probe.spectral_tol;
  probe["shrinkage_tol_rel"] = cfg.probe.shrinkage_tol_rel;
  probe["omega_constant"] = cfg.probe.omega_constant;

  j["out_dir"] = cfg.out_dir;
  if (cfg.sweep) {
    json& sw = j["sweep"];
    sw["param"] = cfg.sweep->param;
    sw["values"] = cfg.sweep->values;
    sw["seeds"] = cfg.sweep->seeds;
    if (cfg.sweep->total_steps) sw["total_steps"] = *cfg.sweep->total_steps;
  }
  return j;
}

// --- preparation -------------------------------------------------------------

Prepared prepare(const ExperimentConfig& cfg) {
  if (auto problems = check(cfg); !problems.empty()) throw ConfigError(std::move(problems));
  Prepared out;
  out.resolved = cfg;
  network::NetConfig& net = out.resolved.net;
  federated::FedConfig& fed = out.resolved.fed;

  if (cfg.synthetic) {
    const SyntheticSource& s = *cfg.synthetic;
    const std::uint64_t data_seed = s.seed.value_or(fed.seed);
    RngStream rng(data_seed, streams::kData);
    RngStream teacher(data_seed, streams::kTeacher);
    if (net.o == 0) net.o = 1;
    out.dataset = data::gen_separable({s.n_total, net.d, net.o, s.phi, s.teacher_std}, rng, teacher);
    out.phi = s.phi;
  } else {
    const IdxSource& s = *cfg.idx;
    data::IdxLoadOptions opts;
    opts.target_scale = s.target_scale;
    opts.limit = s.limit;
    data::IdxLoadReport report;
    out.dataset = data::load_idx(s.images, s.labels, opts, &report);
    out.idx_report = report;
    if (net.d == 0) net.d = out.dataset.d;
    if (net.o == 0) net.o = out.dataset.o;
    if (net.d != out.dataset.d || net.o != out.dataset.o) {
      throw ArgumentError("net.d/net.o (" + std::to_string(net.d) + "/" + std::to_string(net.o) +
                          ") do not match the IDX data (" + std::to_string(out.dataset.d) + "/" +
                          std::to_string(out.dataset.o) + ")");
    }
    out.phi = s.phi ? *s.phi : data::min_pairwise_distance(out.dataset);
    out.dataset.phi = out.phi;
    if (s.test_images) {
      data::IdxLoadOptions topts = opts;
      topts.limit = 0;
      out.test_set = data::load_idx(*s.test_images, *s.test_labels, topts);
      if (out.test_set->d != net.d) throw ArgumentError("IDX test images differ in size");
    }
  }

  RngStream prng(fed.seed, streams::kPartition);
  if (cfg.partition.scheme == data::Scheme::kIid) {
    out.partition = data::partition_iid(out.dataset, fed.K, prng);
  } else {
    out.partition = data::partition_label_shards(out.dataset, fed.K,
                                                 cfg.partition.classes_per_client, prng);
  }

  if (!cfg.eta_explicit) {
    fed.eta = federated::default_lr(fed.algo, net, out.partition.max_shard_size(), out.phi,
                                    fed.tau, fed.c_eta);
    out.resolved.eta_explicit = true;
    out.eta_derived = true;
  }
  return out;
}

fs::path resolve_out_dir(const std::string& out_dir) {
  fs::path p(out_dir);
  const char* root = std::getenv(kOutRootEnv);
  if (p.is_relative() && root && *root) return fs::path(root) / p;
  return p;
}

// --- output -------------------------------------------------------------------

std::string metrics_header() {
  return "t,c,global_loss,client_loss_min,client_loss_mean,client_loss_max,drift_virtual,"
         "drift_client_max,deviation_mean_sq,deviation_bound_rhs,grad_upper_ratio,"
         "grad_lower_ratio,shrinkage_violation";
}

std::string metrics_csv(const probes::MetricsLog& log) {
  std::string out = metrics_header() + "\n";
  for (const auto& r : log.records) {
    out += std::to_string(r.t) + "," + std::to_string(r.c);
    for (double v : {r.global_loss, r.client_loss_min, r.client_loss_mean, r.client_loss_max,
                     r.drift_virtual, r.drift_client_max, r.deviation_mean_sq,
                     r.deviation_bound_rhs, r.grad_upper_ratio, r.grad_lower_ratio,
                     r.shrinkage_violation}) {
      out += "," + format_number(v);
    }
    out += "\n";
  }
  return out;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << text;
  out.close();
  if (!out) throw Error("failed writing " + path.string());
}

json record_json(const probes::ProbeRecord& r) {
  return json{{"t", r.t},
              {"c", r.c},
              {"global_loss", r.global_loss},
              {"client_loss_min", r.client_loss_min},
              {"client_loss_mean", r.client_loss_mean},
              {"client_loss_max", r.client_loss_max},
              {"drift_virtual", r.drift_virtual},
              {"drift_client_max", r.drift_client_max},
              {"drift_virtual_fro", r.drift_virtual_fro},
              {"drift_client_max_fro", r.drift_client_max_fro},
              {"deviation_mean_sq", r.deviation_mean_sq},
              {"deviation_bound_rhs", r.deviation_bound_rhs},
              {"grad_upper_ratio", r.grad_upper_ratio},
              {"grad_lower_ratio", r.grad_lower_ratio},
              {"shrinkage_violation", r.shrinkage_violation}};
}

class SyncLosses : public federated::RunObserver {
 public:
  explicit SyncLosses(const data::Partition& partition) : partition_(partition) {}
  void on_sync(const federated::FedState& s) override {
    losses.push_back(probes::global_loss(s.w_sync, partition_));
  }
  std::vector<double> losses;

 private:
  const data::Partition& partition_;
};

double accuracy(const network::Params& p, const data::Dataset& ds) {
  if (ds.size() == 0 || !ds.has_labels()) return std::numeric_limits<double>::quiet_NaN();
  std::vector<std::size_t> all(ds.size());
  for (std::size_t j = 0; j < all.size(); ++j) all[j] = j;
  const data::Shard batch(ds, all, 0);
  const Matrix out = network::forward_batch(p, batch.inputs()).output;
  std::size_t hits = 0;
  for (std::size_t j = 0; j < ds.size(); ++j) {
    int pred = 0;
    if (out.rows() == 1) {
      pred = out(0, j) >= 0.0 ? 1 : 0;
    } else {
      for (std::size_t k = 1; k < out.rows(); ++k)
        if (out(k, j) > out(static_cast<std::size_t>(pred), j)) pred = static_cast<int>(k);
    }
    if (pred == *ds.examples[j].label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(ds.size());
}

}  // namespace

RunOutcome run_experiment(const ExperimentConfig& cfg, const fs::path& dir) {
  Prepared prep = prepare(cfg);
  const ExperimentConfig& rc = prep.resolved;

  probes::ProbeSchedule schedule;
  schedule.every = rc.probe.every;
  schedule.phi = prep.phi;
  schedule.shrinkage_tol_rel = rc.probe.shrinkage_tol_rel;
  schedule.spectral_iters = rc.probe.spectral_iters;
  schedule.spectral_tol = rc.probe.spectral_tol;

  SyncLosses sync(prep.partition);
  federated::FedState final_state;
  RngStream init_rng(rc.fed.seed, streams::kInit);
  RunOutcome out;
  out.log = federated::run_from(network::init_params(rc.net, init_rng), rc.fed, prep.partition,
                                rc.net, schedule, &sync, &final_state);
  out.log.version = version();
  out.log.config_json = to_json(rc).dump(2);
  out.dir = dir;

  out.loss_per_round.push_back(out.log.records.front().global_loss);
  out.loss_per_round.insert(out.loss_per_round.end(), sync.losses.begin(), sync.losses.end());
  try {
    out.rate = probes::linear_rate_fit(out.loss_per_round, 0);
  } catch (const ArgumentError&) {
    out.rate.reset();
  }
  if (prep.test_set) out.test_accuracy = accuracy(final_state.w_sync, *prep.test_set);

  const std::size_t n = prep.partition.max_shard_size();
  const double omega =
      probes::theory_omega(prep.phi, n, rc.net.L, rc.net.m, rc.probe.omega_constant);
  const probes::ProbeRecord& last = out.log.records.back();

  json summary;
  summary["version"] = out.log.version;
  summary["seed"] = rc.fed.seed;
  summary["algo"] = federated::to_string(rc.fed.algo);
  summary["eta"] = rc.fed.eta;
  summary["eta_source"] = prep.eta_derived ? "c_eta" : "explicit";
  summary["phi"] = prep.phi;
  summary["num_examples"] = prep.dataset.size();
  summary["n_per_client"] = n;
  summary["rounds"] = rc.fed.rounds;
  summary["total_steps"] = rc.fed.total_steps();
  summary["initial_loss"] = out.log.records.front().global_loss;
  summary["final_loss"] = last.global_loss;
  summary["loss_per_round"] = out.loss_per_round;
  summary["final_record"] = record_json(last);
  if (out.rate) {
    summary["rate_fit"] = {{"slope", out.rate->slope},
                           {"intercept", out.rate->intercept},
                           {"r2", out.rate->r2},
                           {"implied_rate", out.rate->implied_rate},
                           {"points", out.rate->points}};
  } else {
    summary["rate_fit"] = nullptr;
  }
  summary["omega"] = omega;
  summary["drift_virtual_over_omega"] = omega > 0.0 ? last.drift_virtual / omega : 0.0;
  summary["drift_client_max_over_omega"] = omega > 0.0 ? last.drift_client_max / omega : 0.0;
  summary["test_accuracy"] = out.test_accuracy ? json(*out.test_accuracy) : json(nullptr);
  if (prep.idx_report) {
    summary["idx"] = {{"parsed", prep.idx_report->parsed},
                      {"dropped_zero", prep.idx_report->dropped_zero},
                      {"dropped_duplicate", prep.idx_report->dropped_duplicate}};
  }

  fs::create_directories(dir);
  write_text(dir / kMetricsFile, metrics_csv(out.log));
  write_text(dir / kConfigFile, out.log.config_json + "\n");
  write_text(dir / kSummaryFile, summary.dump(2) + "\n");
  return out;
}

RunOutcome run_experiment(const ExperimentConfig& cfg) {
  return run_experiment(cfg, resolve_out_dir(cfg.out_dir));
}

// --- sweeps ------------------------------------------------------------------

ExperimentConfig apply_sweep_value(const ExperimentConfig& base, const std::string& param,
                                   double value) {
  ExperimentConfig cfg = base;
  const auto count = static_cast<std::size_t>(value);
  if (param == "m") {
    cfg.net.m = count;
  } else if (param == "L") {
    cfg.net.L = count;
  } else if (param == "tau") {
    cfg.fed.tau = count;
  } else if (param == "K") {
    cfg.fed.K = count;
  } else if (param == "batch") {
    cfg.fed.batch = count;
  } else if (param == "eta") {
    cfg.fed.eta = value;
    cfg.eta_explicit = true;
  } else if (param == "c_eta") {
    cfg.fed.c_eta = value;
  } else if (param == "n_total") {
    if (!cfg.synthetic) throw ArgumentError("sweep over n_total needs synthetic data");
    cfg.synthetic->n_total = count;
  } else if (param == "classes_per_client") {
    cfg.partition.classes_per_client = count;
  } else {
    throw ArgumentError("unknown sweep parameter '" + param + "'");
  }
  if (base.sweep && base.sweep->total_steps && cfg.fed.tau > 0)
    cfg.fed.rounds = *base.sweep->total_steps / cfg.fed.tau;
  return cfg;
}

std::string cell_name(const std::string& param, double value, std::uint64_t seed) {
  return param + "-" + format_number(value) + "_seed-" + std::to_string(seed);
}

SweepOutcome sweep(const ExperimentConfig& cfg) {
  if (!cfg.sweep) throw ConfigError({"sweep: block is required"});
  if (auto problems = check(cfg); !problems.empty()) throw ConfigError(std::move(problems));
  const SweepSpec& sw = *cfg.sweep;
  const fs::path root = resolve_out_dir(cfg.out_dir);

  struct Cell {
    ExperimentConfig cfg;
    fs::path dir;
  };
  std::vector<Cell> cells;
  std::vector<std::string> problems;
  for (double v : sw.values) {
    for (std::uint64_t seed : sw.seeds) {
      Cell cell{apply_sweep_value(cfg, sw.param, v), root / cell_name(sw.param, v, seed)};
      cell.cfg.fed.seed = seed;
      cell.cfg.sweep.reset();
      cell.cfg.out_dir = cell.dir.string();
      for (auto& p : check(cell.cfg)) problems.push_back(cell.dir.filename().string() + ": " + p);
      cells.push_back(std::move(cell));
    }
  }
  if (!problems.empty()) throw ConfigError(std::move(problems));

  SweepOutcome out;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::size_t next = 0;
  for (double v : sw.values) {
    SweepRow row;
    row.value = v;
    row.final_loss_min = std::numeric_limits<double>::infinity();
    row.final_loss_max = -std::numeric_limits<double>::infinity();
    double slope_sum = 0.0;
    double r2_sum = 0.0;
    std::size_t fits = 0;
    for (std::size_t s = 0; s < sw.seeds.size(); ++s) {
      const Cell& cell = cells[next++];
      const RunOutcome run = run_experiment(cell.cfg, cell.dir);
      out.cell_dirs.push_back(cell.dir);
      const double final_loss = run.log.records.back().global_loss;
      row.final_loss_mean += final_loss;
      row.final_loss_min = std::min(row.final_loss_min, final_loss);
      row.final_loss_max = std::max(row.final_loss_max, final_loss);
      if (run.rate) {
        slope_sum += run.rate->slope;
        r2_sum += run.rate->r2;
        ++fits;
      }
    }
    row.seeds = sw.seeds.size();
    row.final_loss_mean /= static_cast<double>(row.seeds);
    row.rate_slope_mean = fits ? slope_sum / static_cast<double>(fits) : nan;
    row.rate_r2_mean = fits ? r2_sum / static_cast<double>(fits) : nan;
    out.rows.push_back(row);
  }

  std::string csv =
      "param,value,seeds,final_loss_mean,final_loss_min,final_loss_max,rate_slope_mean,"
      "rate_r2_mean\n";
  for (const auto& r : out.rows) {
    csv += sw.param + "," + format_number(r.value) + "," + std::to_string(r.seeds);
    for (double v : {r.final_loss_mean, r.final_loss_min, r.final_loss_max, r.rate_slope_mean,
                     r.rate_r2_mean}) {
      csv += "," + format_number(v);
    }
    csv += "\n";
  }
  fs::create_directories(root);
  write_text(root / kSweepSummaryFile, csv);
  return out;
}

}  // namespace fedrelu::experiment

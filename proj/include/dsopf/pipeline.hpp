#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dsopf/acopf.hpp"
#include "dsopf/admm.hpp"
#include "dsopf/case_model.hpp"
#include "dsopf/io.hpp"
#include "dsopf/reliability.hpp"
#include "dsopf/scenarios.hpp"

namespace dsopf {

inline constexpr const char* kVersion = "0.1.0";

struct RunConfig {
  std::string case_path;
  std::optional<std::string> partition_path;
  std::uint64_t seed = 1;
  int num_scenarios = 100;
  double sigma_frac = 0.1;
  int k_clusters = 5;
  int per_cluster_target = 2;
  double rho = 1e6;
  double admm_tolerance = 1e-4;
  int max_iter = 500;
  std::optional<double> shed_penalty;  // $/MWh; automatic when absent
  std::string output_dir = "dsopf_out";
};

inline void validate(const RunConfig& c) {
  if (c.case_path.empty()) throw ValidationError("case path is required");
  if (c.num_scenarios < 1) throw ValidationError("scenario count must be positive");
  if (!(c.sigma_frac >= 0.0)) throw ValidationError("sigma must be nonnegative");
  if (c.k_clusters < 1 || c.per_cluster_target < 1) throw ValidationError("cluster sizes must be positive");
  if (static_cast<long>(c.k_clusters) * c.per_cluster_target > c.num_scenarios)
    throw ValidationError("clusters * per-cluster target exceeds the scenario count");
  if (!(c.rho > 0.0)) throw ValidationError("rho must be positive");
  if (!(c.admm_tolerance > 0.0)) throw ValidationError("tolerance must be positive");
  if (c.max_iter < 1) throw ValidationError("max iterations must be positive");
  if (c.shed_penalty && !(*c.shed_penalty > 0.0)) throw ValidationError("shed penalty must be positive");
}

inline Json to_json(const RunConfig& c) {
  Json j;
  j["case"] = c.case_path;
  j["partition"] = c.partition_path ? Json(*c.partition_path) : Json(nullptr);
  j["seed"] = c.seed;
  j["scenarios"] = c.num_scenarios;
  j["sigma"] = c.sigma_frac;
  j["clusters"] = c.k_clusters;
  j["per_cluster"] = c.per_cluster_target;
  j["rho"] = c.rho;
  j["tol"] = c.admm_tolerance;
  j["max_iter"] = c.max_iter;
  j["penalty"] = c.shed_penalty ? Json(*c.shed_penalty) : Json("auto");
  j["out"] = c.output_dir;
  return j;
}

/// Overlays the keys present in `j` (same names as to_json) onto `base`.
inline RunConfig config_from_json(const Json& j, RunConfig base = {}) {
  if (!j.is_object()) throw ParseError("config must be a JSON object", 0);
  static const std::vector<std::string> known{"case", "partition", "seed", "scenarios", "sigma", "clusters",
                                              "per_cluster", "rho", "tol", "max_iter", "penalty", "out"};
  for (const auto& [key, value] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ParseError("unknown config key '" + key + "'", 0);
  try {
    if (j.contains("case")) base.case_path = j["case"].get<std::string>();
    if (j.contains("partition"))
      base.partition_path = j["partition"].is_null() ? std::nullopt
                                                     : std::optional(j["partition"].get<std::string>());
    if (j.contains("seed")) base.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("scenarios")) base.num_scenarios = j["scenarios"].get<int>();
    if (j.contains("sigma")) base.sigma_frac = j["sigma"].get<double>();
    if (j.contains("clusters")) base.k_clusters = j["clusters"].get<int>();
    if (j.contains("per_cluster")) base.per_cluster_target = j["per_cluster"].get<int>();
    if (j.contains("rho")) base.rho = j["rho"].get<double>();
    if (j.contains("tol")) base.admm_tolerance = j["tol"].get<double>();
    if (j.contains("max_iter")) base.max_iter = j["max_iter"].get<int>();
    if (j.contains("penalty")) {
      const Json& p = j["penalty"];
      if (p.is_string() && p.get<std::string>() == "auto") base.shed_penalty.reset();
      else base.shed_penalty = p.get<double>();
    }
    if (j.contains("out")) base.output_dir = j["out"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("config: ") + e.what(), 0);
  }
  return base;
}

enum class Mode { baseline, admm, baseline_stochastic, admm_stochastic };

inline const char* to_string(Mode m) {
  switch (m) {
    case Mode::baseline: return "baseline";
    case Mode::admm: return "admm";
    case Mode::baseline_stochastic: return "baseline-stochastic";
    case Mode::admm_stochastic: return "admm-stochastic";
  }
  return "unknown";
}

inline const char* table_label(Mode m) {
  switch (m) {
    case Mode::baseline: return "Baseline";
    case Mode::admm: return "ADMM";
    case Mode::baseline_stochastic: return "Baseline (Stochastic)";
    case Mode::admm_stochastic: return "ADMM (Stochastic)";
  }
  return "unknown";
}

inline Mode mode_from_string(const std::string& s) {
  for (Mode m : {Mode::baseline, Mode::admm, Mode::baseline_stochastic, Mode::admm_stochastic})
    if (s == to_string(m)) return m;
  throw ValidationError("unknown mode '" + s + "'");
}

inline bool is_stochastic(Mode m) { return m == Mode::baseline_stochastic || m == Mode::admm_stochastic; }
inline bool is_admm(Mode m) { return m == Mode::admm || m == Mode::admm_stochastic; }

/// Loaded inputs shared by every mode of one run.
struct Pipeline {
  RunConfig config;
  NetworkCase net;
  std::optional<RegionPartition> partition;
  ScenarioSet original;
  ScenarioSet reduced;
  ShedPenalty penalty;
};

inline Pipeline prepare(const RunConfig& config) {
  validate(config);
  Pipeline p;
  p.config = config;
  p.net = load_case_file(config.case_path);
  if (config.partition_path) p.partition = build_partition(p.net, load_region_assignment(*config.partition_path));
  p.original = sample_gaussian(p.net, config.num_scenarios, config.sigma_frac, config.seed);
  p.reduced = reduce(p.original, config.k_clusters, config.per_cluster_target, config.seed);
  p.penalty = config.shed_penalty ? ShedPenalty{*config.shed_penalty} : ShedPenalty::automatic(p.net);
  return p;
}

struct ModeResult {
  Mode mode = Mode::baseline;
  OpfSolution solution;
  double total_cost = 0.0;                    // $/h, the comparison-table figure
  std::optional<double> cost_on_original;     // admm-stochastic under the unreduced set
  std::optional<LospReport> losp;             // stochastic modes
  std::optional<ConsensusState> consensus;    // ADMM modes
  int inexact_region_solves = 0;
  double seconds = 0.0;

  bool converged() const { return solution.status == "optimal"; }
};

struct ModeStreams {
  std::ostream* telemetry = nullptr;
  std::ostream* messages = nullptr;
};

/// Runs one mode. `baseline` lets baseline-stochastic reuse an earlier
/// baseline solve.
inline ModeResult run_mode(const Pipeline& p, Mode mode, ModeStreams streams = {},
                           const OpfSolution* baseline = nullptr) {
  const auto start = std::chrono::steady_clock::now();
  ModeResult r;
  r.mode = mode;
  if (is_admm(mode)) {
    if (!p.partition) throw ValidationError(std::string("mode ") + to_string(mode) + " needs a partition");
    AdmmOptions opt;
    opt.rho = p.config.rho;
    opt.tolerance = p.config.admm_tolerance;
    opt.max_iter = p.config.max_iter;
    opt.telemetry = streams.telemetry;
    opt.message_log = streams.messages;
    std::optional<ScenarioSet> scenarios;
    if (mode == Mode::admm_stochastic) scenarios = p.reduced;
    AdmmResult a = run_consensus(p.net, *p.partition, scenarios, p.penalty, opt);
    r.solution = std::move(a.solution);
    r.consensus = std::move(a.state);
    r.inexact_region_solves = a.inexact_region_solves;
    r.total_cost = r.solution.objective_value;
  } else if (mode == Mode::baseline || !baseline) {
    auto [sol, raw] = solve_opf(build_standard(p.net));
    r.solution = std::move(sol);
    r.total_cost = r.solution.objective_value;
  } else {
    r.solution = *baseline;
  }
  if (mode == Mode::baseline_stochastic) {
    r.total_cost = evaluate_stochastic_cost(p.net, r.solution, p.original, p.penalty);
  }
  if (mode == Mode::admm_stochastic)
    r.cost_on_original = evaluate_stochastic_cost(p.net, r.solution, p.original, p.penalty);
  if (is_stochastic(mode)) r.losp = evaluate_losp(p.net, r.solution, p.original);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

inline ComparisonColumn comparison_column(const ModeResult& r) {
  return {table_label(r.mode), r.total_cost, r.losp ? std::optional(r.losp->losp) : std::nullopt, r.solution.gen_p,
          r.solution.gen_q};
}

}  // namespace dsopf

// Command-line driver: sample and reduce scenarios, solve the four
// comparison modes, evaluate LOSP and write artifacts.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "dsopf/dsopf.hpp"
#include "dsopf/pipeline.hpp"

namespace fs = std::filesystem;
using namespace dsopf;

namespace {

enum ExitCode { kOk = 0, kOther = 1, kUsage = 2, kInfeasible = 3, kNonconvergence = 4 };

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FileError("cannot write '" + path.string() + "'");
  return out;
}

void write_json(const fs::path& path, const Json& j) { open_output(path) << j.dump(2) << '\n'; }

Json manifest(const RunConfig& c, const std::vector<Mode>& modes) {
  Json j;
  j["tool"] = "dsopf";
  j["version"] = kVersion;
  j["compiler"] = __VERSION__;
  j["config"] = to_json(c);
  Json m = Json::array();
  for (Mode mode : modes) m.push_back(to_string(mode));
  j["modes"] = m;
  j["seeds"] = {{"sampling", c.seed}, {"clustering", c.seed}};
  return j;
}

struct SolveFlags {
  std::string config_file, case_path, partition_path, mode = "all", penalty, out;
  std::uint64_t seed = 0;
  int scenarios = 0, clusters = 0, per_cluster = 0, max_iter = 0;
  double sigma = 0, rho = 0, tol = 0;
};

RunConfig resolve_config(const CLI::App& cmd, const SolveFlags& f) {
  RunConfig c;
  if (!f.config_file.empty()) {
    auto in = open_input(f.config_file);
    Json j;
    try {
      in >> j;
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(f.config_file + ": " + e.what(), 0);
    }
    c = config_from_json(j);
  }
  bool out_given = !f.config_file.empty() && c.output_dir != RunConfig{}.output_dir;
  if (cmd.count("--case")) c.case_path = f.case_path;
  if (cmd.count("--partition")) c.partition_path = f.partition_path;
  if (cmd.count("--seed")) c.seed = f.seed;
  if (cmd.count("--scenarios")) c.num_scenarios = f.scenarios;
  if (cmd.count("--sigma")) c.sigma_frac = f.sigma;
  if (cmd.count("--clusters")) c.k_clusters = f.clusters;
  if (cmd.count("--per-cluster")) c.per_cluster_target = f.per_cluster;
  if (cmd.count("--rho")) c.rho = f.rho;
  if (cmd.count("--tol")) c.admm_tolerance = f.tol;
  if (cmd.count("--max-iter")) c.max_iter = f.max_iter;
  if (cmd.count("--penalty")) {
    if (f.penalty == "auto") c.shed_penalty.reset();
    else {
      try {
        c.shed_penalty = std::stod(f.penalty);
      } catch (const std::exception&) {
        throw ValidationError("--penalty must be 'auto' or a number");
      }
    }
  }
  if (cmd.count("--out")) {
    c.output_dir = f.out;
    out_given = true;
  }
  if (!out_given)
    if (const char* env = std::getenv("DSOPF_OUT"); env && *env) c.output_dir = env;
  return c;
}

int cmd_solve(const CLI::App& cmd, const SolveFlags& f) {
  const RunConfig config = resolve_config(cmd, f);
  std::vector<Mode> modes;
  if (f.mode == "all")
    modes = {Mode::baseline, Mode::admm, Mode::baseline_stochastic, Mode::admm_stochastic};
  else
    modes = {mode_from_string(f.mode)};
  const Pipeline p = prepare(config);
  for (Mode m : modes)
    if (is_admm(m) && !p.partition) throw ValidationError(std::string("mode ") + to_string(m) + " needs --partition");

  const fs::path out = config.output_dir;
  fs::create_directories(out);
  write_json(out / "manifest.json", manifest(config, modes));
  if (std::any_of(modes.begin(), modes.end(), is_stochastic)) {
    write_json(out / "scenarios_original.json", to_json(p.original));
    write_json(out / "scenarios_reduced.json", to_json(p.reduced));
    auto original_csv = open_output(out / "scenarios_original.csv");
    write_scenarios_csv(original_csv, p.original, p.net);
    auto reduced_csv = open_output(out / "scenarios_reduced.csv");
    write_scenarios_csv(reduced_csv, p.reduced, p.net);
  }

  int code = kOk;
  std::optional<OpfSolution> baseline;
  std::vector<ComparisonColumn> columns;
  for (Mode m : modes) {
    const std::string stem = to_string(m);
    std::optional<std::ofstream> tele, msgs;
    ModeStreams streams;
    if (is_admm(m)) {
      tele = open_output(out / (stem + "_telemetry.jsonl"));
      msgs = open_output(out / (stem + "_messages.jsonl"));
      streams = {&*tele, &*msgs};
    }
    ModeResult r;
    try {
      r = run_mode(p, m, streams, baseline ? &*baseline : nullptr);
    } catch (const RegionSolveError& e) {
      std::cerr << stem << ": " << e.what() << '\n';
      code = kInfeasible;
      continue;
    }
    if (m == Mode::baseline) baseline = r.solution;
    Json sol = to_json(r.solution, p.net);
    sol["mode"] = stem;
    sol["total_cost"] = r.total_cost;
    if (r.cost_on_original) sol["cost_on_original_scenarios"] = *r.cost_on_original;
    if (r.consensus) {
      sol["admm"] = {{"converged", r.consensus->converged},
                     {"iterations", r.consensus->iteration},
                     {"final_error", r.consensus->error_history.empty() ? 0.0 : r.consensus->error_history.back()},
                     {"rho", r.consensus->rho},
                     {"inexact_region_solves", r.inexact_region_solves}};
    }
    sol["seconds"] = r.seconds;
    write_json(out / (stem + "_solution.json"), sol);
    if (r.losp) write_json(out / (stem + "_losp.json"), to_json(*r.losp));
    std::cerr << stem << ": " << r.solution.status << ", total cost " << r.total_cost << " $/h";
    if (r.losp) std::cerr << ", LOSP " << r.losp->losp;
    std::cerr << " (" << r.seconds << " s)\n";
    if (r.solution.status == "infeasible_detected") code = kInfeasible;
    else if (!r.converged() && code == kOk) code = kNonconvergence;
    columns.push_back(comparison_column(r));
  }
  if (!columns.empty()) {
    write_comparison_table(std::cout, p.net, columns);
    auto table = open_output(out / "comparison.txt");
    write_comparison_table(table, p.net, columns);
    write_json(out / "comparison.json", to_json(columns, p.net));
  }
  return code;
}

int cmd_sample(const std::string& case_path, int m, double sigma, std::uint64_t seed, const std::string& out,
               const std::string& csv) {
  NetworkCase net = load_case_file(case_path);
  ScenarioSet s = sample_gaussian(net, m, sigma, seed);
  write_json(out, to_json(s));
  if (!csv.empty()) {
    auto file = open_output(csv);
    write_scenarios_csv(file, s, net);
  }
  return kOk;
}

int cmd_reduce(const std::string& in, int k, int per_cluster, std::uint64_t seed, const std::string& out,
               std::string report) {
  ScenarioSet s = load_scenarios(in);
  ScenarioSet r = reduce(s, k, per_cluster, seed);
  write_json(out, to_json(r));
  if (report.empty()) report = (fs::path(out).replace_extension("").string() + ".report.json");
  Json rep;
  rep["original_scenarios"] = s.size();
  rep["reduced_scenarios"] = r.size();
  rep["clusters"] = k;
  rep["per_cluster"] = per_cluster;
  rep["seed"] = seed;
  rep["probability_sum"] = r.probabilities.sum();
  rep["kantorovich_distance"] = kantorovich_distance(s, r);
  write_json(report, rep);
  std::cout << s.size() << " -> " << r.size() << " scenarios, Kantorovich distance "
            << rep["kantorovich_distance"].get<double>() << '\n';
  return kOk;
}

int cmd_inspect(const std::string& in) {
  ScenarioSet s = load_scenarios(in);
  const Eigen::VectorXd mean = s.probabilities.transpose() * s.loads;
  Eigen::VectorXd var = Eigen::VectorXd::Zero(s.num_buses());
  for (int k = 0; k < s.size(); ++k) var += s.probabilities[k] * (s.loads.row(k).transpose() - mean).array().square().matrix();
  std::cout << "scenarios " << s.size() << ", buses " << s.num_buses() << ", probability sum "
            << std::setprecision(12) << s.probabilities.sum() << '\n';
  if (s.source_seed) std::cout << "seed " << *s.source_seed << '\n';
  std::cout << std::setw(6) << "column" << std::setw(14) << "mean_mw" << std::setw(14) << "stddev_mw" << '\n'
            << std::fixed << std::setprecision(4);
  for (int i = 0; i < s.num_buses(); ++i)
    std::cout << std::setw(6) << i << std::setw(14) << mean[i] << std::setw(14) << std::sqrt(var[i]) << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributed stochastic ACOPF toolkit"};
  app.require_subcommand(1);

  SolveFlags f;
  CLI::App* solve = app.add_subcommand("solve", "Solve one or all comparison modes");
  solve->add_option("--config", f.config_file, "JSON config; flags override it");
  solve->add_option("--case", f.case_path, "MATPOWER case file");
  solve->add_option("--partition", f.partition_path, "region assignment JSON");
  solve->add_option("--mode", f.mode, "baseline | admm | baseline-stochastic | admm-stochastic | all")
      ->check(CLI::IsMember({"baseline", "admm", "baseline-stochastic", "admm-stochastic", "all"}));
  solve->add_option("--seed", f.seed, "sampling and clustering seed (default 1)");
  solve->add_option("--scenarios", f.scenarios, "sampled scenario count (default 100)");
  solve->add_option("--sigma", f.sigma, "load standard deviation as a fraction of base (default 0.1)");
  solve->add_option("--clusters", f.clusters, "K-means clusters (default 5)");
  solve->add_option("--per-cluster", f.per_cluster, "scenarios kept per cluster (default 2)");
  solve->add_option("--rho", f.rho, "ADMM penalty (default 1e6)");
  solve->add_option("--tol", f.tol, "ADMM consensus tolerance (default 1e-4)");
  solve->add_option("--max-iter", f.max_iter, "ADMM iteration limit (default 500)");
  solve->add_option("--penalty", f.penalty, "shed penalty $/MWh or 'auto'");
  solve->add_option("--out", f.out, "output directory (else $DSOPF_OUT, else ./dsopf_out)");

  CLI::App* scen = app.add_subcommand("scenarios", "Sample, reduce or inspect scenario sets");
  scen->require_subcommand(1);
  std::string case_path, in, out, csv, report;
  int m = 100, k = 5, per_cluster = 2;
  double sigma = 0.1;
  std::uint64_t seed = 1;
  CLI::App* sample = scen->add_subcommand("sample", "Draw Gaussian load scenarios");
  sample->add_option("--case", case_path, "MATPOWER case file")->required();
  sample->add_option("--scenarios", m, "scenario count");
  sample->add_option("--sigma", sigma, "standard deviation fraction");
  sample->add_option("--seed", seed, "random seed");
  sample->add_option("--out", out, "output JSON")->required();
  sample->add_option("--csv", csv, "optional CSV export");
  CLI::App* red = scen->add_subcommand("reduce", "K-means + SBR reduction of a sampled set");
  red->add_option("--in", in, "sampled set JSON")->required();
  red->add_option("--clusters", k, "cluster count");
  red->add_option("--per-cluster", per_cluster, "scenarios kept per cluster");
  red->add_option("--seed", seed, "tie-break seed");
  red->add_option("--out", out, "reduced set JSON")->required();
  red->add_option("--report", report, "reduction report JSON");
  CLI::App* inspect = scen->add_subcommand("inspect", "Summary statistics of a set");
  inspect->add_option("--in", in, "scenario set JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*solve) return cmd_solve(*solve, f);
    if (*sample) return cmd_sample(case_path, m, sigma, seed, out, csv);
    if (*red) return cmd_reduce(in, k, per_cluster, seed, out, report);
    if (*inspect) return cmd_inspect(in);
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const FileError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const RegionSolveError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInfeasible;
  } catch (const NonconvergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNonconvergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOther;
  }
  return kOther;
}

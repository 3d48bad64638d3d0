#pragma once

#include <algorithm>
#include <limits>
#include <future>
#include <thread>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dsopf/acopf.hpp"
#include "dsopf/case_model.hpp"
#include "dsopf/powerflow.hpp"
#include "dsopf/scenarios.hpp"

namespace dsopf {

struct LospReport {
  double losp = 0.0;
  double slack_opf = 0.0;                  // MW
  Eigen::VectorXd slack_per_scenario;      // MW; NaN where the PF failed
  std::vector<int> shortfall_scenarios;
  std::vector<int> failed_scenarios;       // PF did not converge (counted as shortfall)
  std::vector<std::string> warnings;
};

/// PV setpoints (P_G, V_G) and slack voltage taken from an OPF solution.
inline PfSetpoints setpoints_from_solution(const NetworkCase& net, const OpfSolution& sol) {
  PfSetpoints sp;
  const int slack = net.slack_index();
  sp.slack_v = sol.point.v[slack];
  for (int g = 0; g < static_cast<int>(net.generators.size()); ++g) {
    const int b = net.bus_index(net.generators[g].bus_id);
    if (b == slack) continue;
    auto& entry = sp.pv[net.generators[g].bus_id];
    entry.p_mw += sol.gen_p[g];
    entry.v = sol.point.v[b];
  }
  return sp;
}

/// Differences in slack power below this are solver roundoff, not shortfall.
constexpr double kSlackTieToleranceMw = 1e-6;

/// Fraction of scenarios whose power flow, run at the solution's generator
/// setpoints, needs more slack power than the solution schedules
/// (slack_opf < slack_pf - tie_tolerance_mw).
inline LospReport evaluate_losp(const NetworkCase& net, const OpfSolution& solution,
                                const ScenarioSet& original, const PfOptions& options = {},
                                double tie_tolerance_mw = kSlackTieToleranceMw) {
  validate(original);
  if (original.num_buses() != net.num_buses())
    throw DimensionError("scenario loads do not match the case's bus count");
  LospReport rep;
  rep.slack_opf = solution.slack_p(net);
  const PfSetpoints sp = setpoints_from_solution(net, solution);
  const int m = original.size();

  struct Outcome {
    double slack = 0.0;
    bool ok = true;
    std::string why;
  };
  std::vector<Outcome> outcomes(m);
  const int workers = std::max(1, std::min<int>(m, std::thread::hardware_concurrency()));
  std::vector<std::future<void>> jobs;
  for (int w = 0; w < workers; ++w) {
    jobs.push_back(std::async(std::launch::async, [&, w] {
      for (int s = w; s < m; s += workers) {
        Outcome& out = outcomes[s];
        try {
          Eigen::VectorXd loads = original.loads.row(s).transpose();
          out.slack = solve_powerflow(net, sp, loads, options).slack_p;
        } catch (const std::exception& e) {
          out.ok = false;
          out.why = e.what();
        }
      }
    }));
  }
  for (auto& j : jobs) j.get();
  rep.slack_per_scenario.resize(m);
  for (int s = 0; s < m; ++s) {
    const Outcome& out = outcomes[s];
    if (!out.ok) {
      rep.slack_per_scenario[s] = std::numeric_limits<double>::quiet_NaN();
      rep.failed_scenarios.push_back(s);
      rep.shortfall_scenarios.push_back(s);
      rep.warnings.push_back("scenario " + std::to_string(s) + ": " + out.why);
      continue;
    }
    rep.slack_per_scenario[s] = out.slack;
    if (rep.slack_opf < out.slack - tie_tolerance_mw) rep.shortfall_scenarios.push_back(s);
  }
  rep.losp = static_cast<double>(rep.shortfall_scenarios.size()) / m;
  return rep;
}

}  // namespace dsopf

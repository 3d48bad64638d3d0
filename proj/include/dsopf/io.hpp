#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsopf/acopf.hpp"
#include "dsopf/case_model.hpp"
#include "dsopf/error.hpp"
#include "dsopf/reliability.hpp"
#include "dsopf/scenarios.hpp"

namespace dsopf {

using Json = nlohmann::ordered_json;

class FileError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open '" + path + "'");
  return in;
}

inline NetworkCase load_case_file(const std::string& path) {
  auto in = open_input(path);
  return parse_case(in);
}

/// {"region": [bus ids...], ...}
inline RegionAssignment parse_region_assignment(const Json& j) {
  if (!j.is_object()) throw ParseError("region spec must be a JSON object", 0);
  RegionAssignment spec;
  for (const auto& [name, ids] : j.items()) {
    if (!ids.is_array()) throw ParseError("region '" + name + "' must map to an array of bus ids", 0);
    for (const auto& id : ids) {
      if (!id.is_number_integer()) throw ParseError("region '" + name + "' has a non-integer bus id", 0);
      spec[name].push_back(id.get<int>());
    }
  }
  return spec;
}

inline RegionAssignment load_region_assignment(const std::string& path) {
  auto in = open_input(path);
  Json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what(), 0);
  }
  return parse_region_assignment(j);
}

namespace detail {

inline Json vector_json(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (int k = 0; k < v.size(); ++k) a.push_back(std::isfinite(v[k]) ? Json(v[k]) : Json(nullptr));
  return a;
}

inline Eigen::VectorXd vector_from(const Json& a, const char* field) {
  if (!a.is_array()) throw ParseError(std::string("field '") + field + "' must be an array", 0);
  Eigen::VectorXd v(static_cast<int>(a.size()));
  for (int k = 0; k < v.size(); ++k)
    v[k] = a[k].is_null() ? std::numeric_limits<double>::quiet_NaN() : a[k].get<double>();
  return v;
}

inline Json matrix_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (int r = 0; r < m.rows(); ++r) rows.push_back(vector_json(m.row(r).transpose()));
  return rows;
}

inline Eigen::MatrixXd matrix_from(const Json& rows, const char* field, int cols_if_empty = 0) {
  if (!rows.is_array()) throw ParseError(std::string("field '") + field + "' must be an array", 0);
  if (rows.empty()) return Eigen::MatrixXd(0, cols_if_empty);
  const int cols = static_cast<int>(rows[0].size());
  Eigen::MatrixXd m(static_cast<int>(rows.size()), cols);
  for (int r = 0; r < m.rows(); ++r) {
    if (!rows[r].is_array() || static_cast<int>(rows[r].size()) != cols)
      throw ParseError(std::string("field '") + field + "' is not a rectangular matrix", 0);
    m.row(r) = vector_from(rows[r], field).transpose();
  }
  return m;
}

inline const Json& require(const Json& j, const char* field) {
  if (!j.is_object() || !j.contains(field))
    throw ParseError(std::string("missing field '") + field + "'", 0);
  return j.at(field);
}

}  // namespace detail

inline Json to_json(const ScenarioSet& s) {
  Json j;
  j["loads"] = detail::matrix_json(s.loads);
  j["probabilities"] = detail::vector_json(s.probabilities);
  j["seed"] = s.source_seed ? Json(*s.source_seed) : Json(nullptr);
  j["source_indices"] = s.source_indices;
  return j;
}

inline ScenarioSet scenarios_from_json(const Json& j) {
  ScenarioSet s;
  try {
    s.probabilities = detail::vector_from(detail::require(j, "probabilities"), "probabilities");
    s.loads = detail::matrix_from(detail::require(j, "loads"), "loads");
    if (j.contains("seed") && !j["seed"].is_null()) s.source_seed = j["seed"].get<std::uint64_t>();
    if (j.contains("source_indices")) s.source_indices = j["source_indices"].get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("scenario set: ") + e.what(), 0);
  }
  if (s.source_indices.empty()) {
    s.source_indices.resize(s.size());
    for (int k = 0; k < s.size(); ++k) s.source_indices[k] = k;
  }
  validate(s);
  return s;
}

inline ScenarioSet load_scenarios(const std::string& path) {
  auto in = open_input(path);
  Json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what(), 0);
  }
  return scenarios_from_json(j);
}

/// One row per scenario: index, probability, then the load at each bus.
inline void write_scenarios_csv(std::ostream& out, const ScenarioSet& s, const NetworkCase& net) {
  out << std::setprecision(17) << "scenario,source_index,probability";
  for (const auto& bus : net.buses) out << ",bus_" << bus.id;
  out << '\n';
  for (int k = 0; k < s.size(); ++k) {
    out << k << ',' << (k < static_cast<int>(s.source_indices.size()) ? s.source_indices[k] : k) << ','
        << s.probabilities[k];
    for (int i = 0; i < s.num_buses(); ++i) out << ',' << s.loads(k, i);
    out << '\n';
  }
}

inline Json to_json(const OpfSolution& sol, const NetworkCase& net) {
  Json j;
  j["units"] = {{"v", "p.u."},         {"theta", "rad"},         {"gen_p", "MW"},
                {"gen_q", "MVar"},     {"load_shed", "MW"},      {"objective_value", "$/h"},
                {"generation_cost", "$/h"}, {"shed_cost", "$/h"}};
  Json ids = Json::array();
  for (const auto& b : net.buses) ids.push_back(b.id);
  Json gen_bus = Json::array();
  for (const auto& g : net.generators) gen_bus.push_back(g.bus_id);
  j["bus_ids"] = ids;
  j["generator_buses"] = gen_bus;
  j["point"] = {{"v", detail::vector_json(sol.point.v)}, {"theta", detail::vector_json(sol.point.theta)}};
  j["gen_p"] = detail::vector_json(sol.gen_p);
  j["gen_q"] = detail::vector_json(sol.gen_q);
  j["load_shed"] = detail::matrix_json(sol.load_shed);
  j["objective_value"] = sol.objective_value;
  j["generation_cost"] = sol.generation_cost;
  j["shed_cost"] = sol.shed_cost;
  j["status"] = sol.status;
  j["iterations"] = sol.iterations;
  j["kkt_residual"] = sol.kkt_residual;
  return j;
}

inline OpfSolution solution_from_json(const Json& j) {
  OpfSolution sol;
  try {
    const Json& point = detail::require(j, "point");
    sol.point.v = detail::vector_from(detail::require(point, "v"), "v");
    sol.point.theta = detail::vector_from(detail::require(point, "theta"), "theta");
    sol.gen_p = detail::vector_from(detail::require(j, "gen_p"), "gen_p");
    sol.gen_q = detail::vector_from(detail::require(j, "gen_q"), "gen_q");
    sol.load_shed = detail::matrix_from(detail::require(j, "load_shed"), "load_shed",
                                        0);
    if (sol.load_shed.rows() == 0) sol.load_shed.resize(sol.point.v.size(), 0);
    sol.objective_value = detail::require(j, "objective_value").get<double>();
    sol.generation_cost = j.value("generation_cost", sol.objective_value);
    sol.shed_cost = j.value("shed_cost", 0.0);
    sol.status = j.value("status", std::string("optimal"));
    sol.iterations = j.value("iterations", 0);
    sol.kkt_residual = j.value("kkt_residual", 0.0);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("OPF solution: ") + e.what(), 0);
  }
  return sol;
}

inline Json to_json(const LospReport& r) {
  Json j;
  j["units"] = {{"slack_opf", "MW"}, {"slack_per_scenario", "MW"}};
  j["losp"] = r.losp;
  j["scenarios"] = r.slack_per_scenario.size();
  j["slack_opf"] = r.slack_opf;
  j["slack_per_scenario"] = detail::vector_json(r.slack_per_scenario);
  j["shortfall_scenarios"] = r.shortfall_scenarios;
  j["failed_scenarios"] = r.failed_scenarios;
  j["warnings"] = r.warnings;
  return j;
}

inline LospReport losp_from_json(const Json& j) {
  LospReport r;
  try {
    r.losp = detail::require(j, "losp").get<double>();
    r.slack_opf = detail::require(j, "slack_opf").get<double>();
    r.slack_per_scenario = detail::vector_from(detail::require(j, "slack_per_scenario"), "slack_per_scenario");
    r.shortfall_scenarios = detail::require(j, "shortfall_scenarios").get<std::vector<int>>();
    r.failed_scenarios = j.value("failed_scenarios", std::vector<int>{});
    r.warnings = j.value("warnings", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("LOSP report: ") + e.what(), 0);
  }
  return r;
}

/// One column of the method comparison table.
struct ComparisonColumn {
  std::string label;
  double total_cost = 0.0;     // $/h
  std::optional<double> losp;  // fraction; absent for deterministic runs
  Eigen::VectorXd gen_p;       // MW per generator
  Eigen::VectorXd gen_q;       // MVar per generator
};

/// Methods across, total cost, LOSP and per-generator P/Q down.
inline void write_comparison_table(std::ostream& out, const NetworkCase& net,
                                   const std::vector<ComparisonColumn>& columns) {
  std::vector<std::vector<std::string>> rows;
  auto fixed = [](double v, int digits) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
  };
  std::vector<std::string> header{"Methods"};
  for (const auto& c : columns) header.push_back(c.label);
  rows.push_back(header);
  std::vector<std::string> cost{"Total cost ($/hr)"}, losp{"LOSP"};
  for (const auto& c : columns) {
    cost.push_back(fixed(c.total_cost, 2));
    losp.push_back(c.losp ? fixed(100.0 * *c.losp, 0) + "%" : "-");
  }
  rows.push_back(cost);
  rows.push_back(losp);
  for (int g = 0; g < static_cast<int>(net.generators.size()); ++g) {
    const std::string id = std::to_string(net.generators[g].bus_id);
    std::vector<std::string> p{"P_" + id + " (MW)"}, q{"Q_" + id + " (MVar)"};
    for (const auto& c : columns) {
      p.push_back(fixed(c.gen_p[g], 2));
      q.push_back(fixed(c.gen_q[g], 2));
    }
    rows.push_back(p);
    rows.push_back(q);
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& r : rows)
    for (std::size_t k = 0; k < r.size(); ++k) width[k] = std::max(width[k], r[k].size());
  for (const auto& r : rows) {
    out << std::left << std::setw(static_cast<int>(width[0])) << r[0];
    for (std::size_t k = 1; k < r.size(); ++k) out << "  " << std::right << std::setw(static_cast<int>(width[k])) << r[k];
    out << '\n';
  }
}

inline Json to_json(const std::vector<ComparisonColumn>& columns, const NetworkCase& net) {
  Json j = Json::array();
  for (const auto& c : columns) {
    Json col;
    col["method"] = c.label;
    col["total_cost"] = c.total_cost;
    col["losp"] = c.losp ? Json(*c.losp) : Json(nullptr);
    Json gens = Json::array();
    for (int g = 0; g < static_cast<int>(net.generators.size()); ++g)
      gens.push_back({{"bus", net.generators[g].bus_id}, {"p_mw", c.gen_p[g]}, {"q_mvar", c.gen_q[g]}});
    col["generators"] = gens;
    j.push_back(col);
  }
  return j;
}

}  // namespace dsopf

#pragma once

#include <algorithm>
#include <cmath>
#include <future>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "dsopf/acopf.hpp"
#include "dsopf/case_model.hpp"
#include "dsopf/error.hpp"
#include "dsopf/nlp.hpp"
#include "dsopf/scenarios.hpp"

namespace dsopf {

/// A region's copy of the consensus variables: V then θ at the consensus
/// buses, in partition order.
struct BoundaryMessage {
  std::string region;
  int iteration = 0;
  Eigen::VectorXd boundary_values;

  bool operator==(const BoundaryMessage& o) const {
    return region == o.region && iteration == o.iteration && boundary_values.size() == o.boundary_values.size() &&
           boundary_values == o.boundary_values;
  }
};

/// One JSON object per line: {"region", "iteration", "boundary_values"}.
inline std::string encode_message(const BoundaryMessage& m) {
  nlohmann::ordered_json j;
  j["region"] = m.region;
  j["iteration"] = m.iteration;
  j["boundary_values"] = std::vector<double>(m.boundary_values.data(),
                                             m.boundary_values.data() + m.boundary_values.size());
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::strict);
}

inline BoundaryMessage decode_message(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ProtocolError(std::string("malformed boundary message: ") + e.what());
  }
  if (!j.is_object() || j.size() != 3 || !j.contains("region") || !j.contains("iteration") ||
      !j.contains("boundary_values"))
    throw ProtocolError("boundary message must have exactly region, iteration, boundary_values");
  BoundaryMessage m;
  try {
    m.region = j["region"].get<std::string>();
    m.iteration = j["iteration"].get<int>();
    auto values = j["boundary_values"].get<std::vector<double>>();
    m.boundary_values = Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<int>(values.size()));
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("boundary message has wrong field types: ") + e.what());
  }
  return m;
}

/// Region → coordinator transport. The in-process channel can push every
/// message through the JSON-lines codec so the coordinator sees exactly
/// what a wire transport would carry; `log` receives each encoded line.
class MessageChannel {
public:
  explicit MessageChannel(bool through_codec = true, std::ostream* log = nullptr)
      : through_codec_(through_codec), log_(log) {}

  void send(const BoundaryMessage& m) {
    const std::string line = encode_message(m);
    if (log_) *log_ << line << '\n';
    pending_.push_back(through_codec_ ? decode_message(line) : m);
  }

  std::vector<BoundaryMessage> drain() { return std::exchange(pending_, {}); }

private:
  bool through_codec_;
  std::ostream* log_;
  std::vector<BoundaryMessage> pending_;
};

/// z as the elementwise mean of one message per region, summed in region
/// name order so the result does not depend on arrival order.
inline Eigen::VectorXd consensus_update(const std::vector<BoundaryMessage>& messages,
                                        const std::vector<std::string>& expected_regions) {
  if (messages.empty()) throw ProtocolError("no boundary messages");
  std::map<std::string, const BoundaryMessage*> by_region;
  const int iteration = messages.front().iteration;
  const auto length = messages.front().boundary_values.size();
  for (const auto& m : messages) {
    if (m.iteration != iteration)
      throw ProtocolError("iteration mismatch: " + std::to_string(m.iteration) + " vs " + std::to_string(iteration));
    if (m.boundary_values.size() != length) throw ProtocolError("boundary vectors differ in length");
    if (!by_region.emplace(m.region, &m).second) throw ProtocolError("duplicate message from region '" + m.region + "'");
  }
  for (const auto& r : expected_regions)
    if (!by_region.contains(r)) throw ProtocolError("missing message from region '" + r + "'");
  if (by_region.size() != expected_regions.size()) throw ProtocolError("message from an unknown region");
  Eigen::VectorXd z = Eigen::VectorXd::Zero(length);
  for (const auto& [name, m] : by_region) z += m->boundary_values;
  return z / static_cast<double>(by_region.size());
}

inline Eigen::VectorXd consensus_update(const std::vector<BoundaryMessage>& messages) {
  std::vector<std::string> regions;
  for (const auto& m : messages) regions.push_back(m.region);
  std::sort(regions.begin(), regions.end());
  regions.erase(std::unique(regions.begin(), regions.end()), regions.end());
  return consensus_update(messages, regions);
}

inline Eigen::VectorXd multiplier_update(const Eigen::VectorXd& lambda, const Eigen::VectorXd& boundary,
                                         const Eigen::VectorXd& z, double rho) {
  if (lambda.size() != boundary.size() || lambda.size() != z.size())
    throw DimensionError("multiplier update vectors differ in length");
  return lambda + rho * (boundary - z);
}

struct ConsensusState {
  Eigen::VectorXd z;
  std::map<std::string, Eigen::VectorXd> lambdas;
  int iteration = 0;
  std::vector<double> error_history;
  double rho = 1e6;
  bool converged = false;
};

/// One region's solver. Holds the region's private data (network, loads,
/// costs), its multiplier and warm start; exposes only boundary messages.
class RegionAgent {
public:
  RegionAgent(const NetworkCase& net, const RegionPartition& partition, std::string name,
              std::optional<ScenarioSet> scenarios, ShedPenalty penalty, double rho, NlpOptions options)
      : net_(net),
        partition_(partition),
        name_(std::move(name)),
        scenarios_(std::move(scenarios)),
        penalty_(penalty),
        rho_(rho),
        options_(options) {
    lambda_ = Eigen::VectorXd::Zero(2 * static_cast<int>(partition_.consensus_buses.size()));
  }

  const std::string& name() const { return name_; }
  const Eigen::VectorXd& lambda() const { return lambda_; }
  void set_lambda(Eigen::VectorXd lambda) { lambda_ = std::move(lambda); }

  BoundaryMessage solve(const Eigen::VectorXd& z, int iteration) {
    problem_ = build_region_subproblem(net_, partition_, name_, scenarios_, penalty_, z, lambda_, rho_);
    NlpOptions opt = options_;
    const bool warm = x_.size() == problem_.nlp.n;
    if (warm) opt.mu_init = std::min(opt.mu_init, 1e-4);
    NlpSolution raw = dsopf::solve(problem_.nlp, warm ? x_ : problem_.model->initial_point(), opt,
                                   warm ? &duals_ : nullptr);
    if (raw.status == NlpStatus::infeasible_detected || !raw.x.allFinite())
      throw RegionSolveError(name_, iteration, std::string("subproblem ") + to_string(raw.status));
    if (raw.status != NlpStatus::optimal) ++inexact_solves_;
    x_ = raw.x;
    duals_ = raw.duals;
    last_ = problem_.model->extract(x_);
    last_.status = to_string(raw.status);
    last_.iterations = raw.iterations;
    last_.kkt_residual = raw.kkt_residual;
    boundary_ = problem_.model->boundary(x_);
    return {name_, iteration, boundary_};
  }

  void update_multiplier(const Eigen::VectorXd& z) { lambda_ = multiplier_update(lambda_, boundary_, z, rho_); }

  const OpfSolution& last_solution() const { return last_; }
  const Eigen::VectorXd& boundary() const { return boundary_; }
  const std::vector<int>& owned_buses() const { return problem_.model->row_buses(); }
  const std::vector<int>& local_buses() const { return problem_.model->local_buses(); }
  const std::vector<int>& owned_generators() const { return problem_.model->generators(); }
  int inexact_solves() const { return inexact_solves_; }

private:
  NetworkCase net_;
  RegionPartition partition_;
  std::string name_;
  std::optional<ScenarioSet> scenarios_;
  ShedPenalty penalty_;
  double rho_;
  NlpOptions options_;
  Eigen::VectorXd lambda_;
  OpfProblem problem_;
  Eigen::VectorXd x_;
  NlpDuals duals_;
  OpfSolution last_;
  Eigen::VectorXd boundary_;
  int inexact_solves_ = 0;
};

struct AdmmOptions {
  double rho = 1e6;
  double tolerance = 1e-4;
  int max_iter = 500;
  NlpOptions nlp;
  bool parallel = true;
  bool reverse_solve_order = false;       // for order-independence checks
  std::optional<ConsensusState> initial;  // z and λ to start from
  std::ostream* telemetry = nullptr;      // JSON lines, one per iteration
  std::ostream* message_log = nullptr;    // encoded BoundaryMessages
};

struct AdmmResult {
  OpfSolution solution;
  ConsensusState state;
  int inexact_region_solves = 0;
};

namespace detail {

inline nlohmann::ordered_json vec(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline nlohmann::ordered_json region_record(const NetworkCase& net, const RegionAgent& agent,
                                            const Eigen::VectorXd& lambda_after) {
  const OpfSolution& s = agent.last_solution();
  nlohmann::ordered_json r;
  r["lambda"] = vec(lambda_after);
  r["boundary"] = vec(agent.boundary());
  r["objective"] = s.objective_value;
  r["augmented_terms"] = s.consensus_cost;
  nlohmann::ordered_json buses = nlohmann::ordered_json::array(), v = buses, th = buses;
  for (int b : agent.local_buses()) {
    buses.push_back(net.buses[b].id);
    v.push_back(s.point.v[b]);
    th.push_back(s.point.theta[b]);
  }
  nlohmann::ordered_json gens = nlohmann::ordered_json::array(), p = gens, q = gens;
  for (int g : agent.owned_generators()) {
    gens.push_back(g);
    p.push_back(s.gen_p[g]);
    q.push_back(s.gen_q[g]);
  }
  r["bus_ids"] = buses;
  r["v"] = v;
  r["theta"] = th;
  r["generators"] = gens;
  r["p_mw"] = p;
  r["q_mvar"] = q;
  r["status"] = s.status;
  return r;
}

}  // namespace detail

/// Consensus ADMM over the partition's regions. Each iteration: regions
/// solve their subproblems (concurrently, warm-started), the coordinator
/// averages the boundary messages into z, regions update λ, and the loop
/// stops once ‖z_new − z‖₂ < tolerance. Without scenarios the regions solve
/// the deterministic ACOPF. After max_iter the result has state.converged
/// false and status "max_iter".
inline AdmmResult run_consensus(const NetworkCase& net, const RegionPartition& partition,
                                const std::optional<ScenarioSet>& scenarios, ShedPenalty penalty,
                                const AdmmOptions& options = {}) {
  const std::vector<std::string> names = partition.region_names();
  if (names.empty()) throw ValidationError("partition has no regions");
  const int nc = static_cast<int>(partition.consensus_buses.size());

  std::vector<RegionAgent> agents;
  for (const auto& name : names)
    agents.emplace_back(net, partition, name, scenarios, penalty, options.rho, options.nlp);

  ConsensusState state;
  state.rho = options.rho;
  state.z = Eigen::VectorXd::Zero(2 * nc);
  state.z.head(nc).setOnes();
  if (options.initial) {
    if (options.initial->z.size() != 2 * nc) throw DimensionError("initial z has the wrong length");
    state.z = options.initial->z;
    for (auto& agent : agents) {
      auto it = options.initial->lambdas.find(agent.name());
      if (it != options.initial->lambdas.end()) agent.set_lambda(it->second);
    }
  }
  for (const auto& agent : agents) state.lambdas[agent.name()] = agent.lambda();

  MessageChannel channel(true, options.message_log);
  std::vector<int> order(agents.size());
  std::iota(order.begin(), order.end(), 0);
  if (options.reverse_solve_order) std::reverse(order.begin(), order.end());

  while (true) {
    const int k = state.iteration + 1;
    std::vector<BoundaryMessage> outbox(agents.size());
    if (options.parallel && agents.size() > 1) {
      std::vector<std::future<BoundaryMessage>> jobs;
      for (int a : order)
        jobs.push_back(std::async(std::launch::async, [&, a] { return agents[a].solve(state.z, k); }));
      for (std::size_t j = 0; j < jobs.size(); ++j) outbox[order[j]] = jobs[j].get();
    } else {
      for (int a : order) outbox[a] = agents[a].solve(state.z, k);
    }
    for (int a : order) channel.send(outbox[a]);

    const Eigen::VectorXd z_new = consensus_update(channel.drain(), names);
    for (auto& agent : agents) agent.update_multiplier(z_new);
    const double error = (z_new - state.z).norm();
    state.z = z_new;
    state.iteration = k;
    state.error_history.push_back(error);
    for (const auto& agent : agents) state.lambdas[agent.name()] = agent.lambda();

    if (options.telemetry) {
      nlohmann::ordered_json rec;
      rec["iteration"] = k;
      rec["error"] = error;
      rec["z"] = detail::vec(state.z);
      nlohmann::ordered_json regions;
      for (const auto& agent : agents) regions[agent.name()] = detail::region_record(net, agent, agent.lambda());
      rec["regions"] = regions;
      *options.telemetry << rec.dump() << '\n';
    }
    if (error < options.tolerance) {
      state.converged = true;
      break;
    }
    if (k >= options.max_iter) break;
  }

  AdmmResult result;
  const int n = net.num_buses();
  const int m = scenarios ? scenarios->size() : 0;
  OpfSolution& sol = result.solution;
  sol.point = OperatingPoint::flat(n);
  sol.gen_p = Eigen::VectorXd::Zero(static_cast<int>(net.generators.size()));
  sol.gen_q = sol.gen_p;
  sol.load_shed = Eigen::MatrixXd::Zero(n, m);
  sol.status = state.converged ? "optimal" : "max_iter";
  sol.iterations = state.iteration;
  for (const auto& agent : agents) {
    const OpfSolution& part = agent.last_solution();
    for (int b : agent.owned_buses()) {
      sol.point.v[b] = part.point.v[b];
      sol.point.theta[b] = part.point.theta[b];
      for (int s = 0; s < m; ++s) sol.load_shed(b, s) = part.load_shed(b, s);
    }
    for (int g : agent.owned_generators()) {
      sol.gen_p[g] = part.gen_p[g];
      sol.gen_q[g] = part.gen_q[g];
    }
    sol.generation_cost += part.generation_cost;
    sol.shed_cost += part.shed_cost;
    sol.kkt_residual = std::max(sol.kkt_residual, part.kkt_residual);
    result.inexact_region_solves += agent.inexact_solves();
  }
  auto index = net.bus_index_map();
  for (int c = 0; c < nc; ++c) {
    const int b = index.at(partition.consensus_buses[c]);
    sol.point.v[b] = state.z[c];
    sol.point.theta[b] = state.z[nc + c];
  }
  sol.objective_value = sol.generation_cost + sol.shed_cost;
  result.state = std::move(state);
  return result;
}

}  // namespace dsopf

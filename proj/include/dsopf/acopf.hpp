#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "dsopf/ac_balance.hpp"
#include "dsopf/case_model.hpp"
#include "dsopf/error.hpp"
#include "dsopf/nlp.hpp"
#include "dsopf/powerflow.hpp"
#include "dsopf/scenarios.hpp"

namespace dsopf {

/// Load-shedding cost in $/MWh.
struct ShedPenalty {
  double c = 0.0;

  /// Ten times the largest linear generation cost coefficient.
  static ShedPenalty automatic(const NetworkCase& net) {
    double b = 0.0;
    for (const auto& g : net.generators) b = std::max(b, g.cost.b);
    return ShedPenalty{10.0 * b};
  }
};

/// MW/MVar/$ per hour throughout. Entries a region does not own are NaN in
/// partial (per-region) solutions.
struct OpfSolution {
  OperatingPoint point;
  Eigen::VectorXd gen_p;      // per generator, case order
  Eigen::VectorXd gen_q;
  Eigen::MatrixXd load_shed;  // bus x scenario; 0 columns when deterministic
  double objective_value = 0.0;
  double generation_cost = 0.0;
  double shed_cost = 0.0;
  double consensus_cost = 0.0;  // augmented Lagrangian terms, region problems only
  std::string status = "optimal";
  int iterations = 0;
  double kkt_residual = 0.0;

  /// Active generation at the slack bus.
  double slack_p(const NetworkCase& net) const {
    const int slack_id = net.buses[net.slack_index()].id;
    double p = 0.0;
    for (int g = 0; g < static_cast<int>(net.generators.size()); ++g)
      if (net.generators[g].bus_id == slack_id) p += gen_p[g];
    return p;
  }
};

/// Augmented-Lagrangian coupling on x_C = [V(C); θ(C)], C in the given order.
struct ConsensusTerm {
  std::vector<int> buses;  // case bus positions
  Eigen::VectorXd z;
  Eigen::VectorXd lambda;
  double rho = 0.0;
};

/// ACOPF over a set of local buses with balance constraints on a subset of
/// them. Covers the full deterministic problem, the scenario problem with
/// load shedding, and region subproblems with consensus terms.
///
/// Variable layout (per unit): V(local), θ(local), P(gen), Q(gen),
/// shed(scenario s, balance row r) at offset s * rows + r. Generators are
/// those located at balance buses.
class OpfModel {
public:
  OpfModel(const NetworkCase& net, std::vector<int> local_buses, std::vector<int> row_buses,
           std::optional<ScenarioSet> scenarios, ShedPenalty penalty,
           std::optional<ConsensusTerm> consensus)
      : net_(net),
        y_(build_admittance(net)),
        local_(std::move(local_buses)),
        rows_(std::move(row_buses)),
        scenarios_(std::move(scenarios)),
        penalty_(penalty),
        consensus_(std::move(consensus)),
        balance_(y_, local_, rows_) {
    validate(net_);
    if (scenarios_) {
      validate(*scenarios_);
      if (scenarios_->num_buses() != net_.num_buses())
        throw DimensionError("scenario loads do not match the case's bus count");
      if (!(penalty_.c > 0.0)) throw ValidationError("shed penalty must be positive");
    }
    std::vector<int> local_of(net_.num_buses(), -1);
    for (int k = 0; k < nl(); ++k) local_of[local_[k]] = k;
    std::vector<bool> is_row(net_.num_buses(), false);
    for (int b : rows_) is_row[b] = true;
    auto index = net_.bus_index_map();
    for (int g = 0; g < static_cast<int>(net_.generators.size()); ++g) {
      const int b = index.at(net_.generators[g].bus_id);
      if (is_row[b]) {
        gens_.push_back(g);
        gen_row_.push_back(-1);
      }
    }
    for (int r = 0; r < nr(); ++r)
      for (std::size_t k = 0; k < gens_.size(); ++k)
        if (index.at(net_.generators[gens_[k]].bus_id) == rows_[r]) gen_row_[k] = r;
    if (consensus_) {
      const int nc = static_cast<int>(consensus_->buses.size());
      if (consensus_->z.size() != 2 * nc || consensus_->lambda.size() != 2 * nc)
        throw DimensionError("consensus vectors must have length 2 * |consensus buses|");
      for (int b : consensus_->buses) {
        if (local_of[b] < 0) throw DimensionError("consensus bus is not a local bus");
        consensus_local_.push_back(local_of[b]);
      }
    }
    if (scenarios_) {
      for (int r = 0; r < nr(); ++r) {
        bool any_load = false;
        for (int s = 0; s < num_scenarios(); ++s) any_load |= scenarios_->loads(s, rows_[r]) > 0.0;
        if (any_load)
          for (int s = 0; s < num_scenarios(); ++s) ineq_rows_.push_back({r, s});
        else
          ineq_rows_.push_back({r, -1});
      }
    }
  }

  int nl() const { return static_cast<int>(local_.size()); }
  int nr() const { return static_cast<int>(rows_.size()); }
  int ng() const { return static_cast<int>(gens_.size()); }
  bool stochastic() const { return scenarios_.has_value(); }
  int num_scenarios() const { return scenarios_ ? scenarios_->size() : 0; }

  int v_index(int k) const { return k; }
  int theta_index(int k) const { return nl() + k; }
  int p_index(int k) const { return 2 * nl() + k; }
  int q_index(int k) const { return 2 * nl() + ng() + k; }
  int shed_index(int s, int r) const { return 2 * nl() + 2 * ng() + s * nr() + r; }
  int num_variables() const { return 2 * nl() + 2 * ng() + num_scenarios() * nr(); }
  int num_eq() const { return stochastic() ? nr() : 2 * nr(); }
  int num_ineq() const { return static_cast<int>(ineq_rows_.size()); }

  const std::vector<int>& local_buses() const { return local_; }
  const std::vector<int>& row_buses() const { return rows_; }
  const std::vector<int>& generators() const { return gens_; }
  const NetworkCase& network() const { return net_; }

  Eigen::VectorXd lower() const { return bounds(true); }
  Eigen::VectorXd upper() const { return bounds(false); }

  /// Flat voltages, generator midpoints, zero shed.
  Eigen::VectorXd initial_point() const {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(num_variables());
    const double base = net_.base_mva;
    for (int k = 0; k < nl(); ++k) x[v_index(k)] = 1.0;
    for (int k = 0; k < ng(); ++k) {
      const auto& g = net_.generators[gens_[k]];
      x[p_index(k)] = 0.5 * (g.p_min + g.p_max) / base;
      x[q_index(k)] = 0.5 * (g.q_min + g.q_max) / base;
    }
    return x;
  }

  double generation_cost(const Eigen::VectorXd& x) const {
    double f = 0.0;
    for (int k = 0; k < ng(); ++k) f += net_.generators[gens_[k]].cost(net_.base_mva * x[p_index(k)]);
    return f;
  }

  double shed_cost(const Eigen::VectorXd& x) const {
    double f = 0.0;
    for (int s = 0; s < num_scenarios(); ++s) {
      double total = 0.0;
      for (int r = 0; r < nr(); ++r) total += x[shed_index(s, r)];
      f += scenarios_->probabilities[s] * total;
    }
    return penalty_.c * net_.base_mva * f;
  }

  double consensus_cost(const Eigen::VectorXd& x) const {
    if (!consensus_) return 0.0;
    const Eigen::VectorXd d = boundary(x) - consensus_->z;
    return consensus_->lambda.dot(d) + 0.5 * consensus_->rho * d.squaredNorm();
  }

  /// x_C: [V(C); θ(C)] read from a variable vector.
  Eigen::VectorXd boundary(const Eigen::VectorXd& x) const {
    const int nc = static_cast<int>(consensus_local_.size());
    Eigen::VectorXd b(2 * nc);
    for (int c = 0; c < nc; ++c) {
      b[c] = x[v_index(consensus_local_[c])];
      b[nc + c] = x[theta_index(consensus_local_[c])];
    }
    return b;
  }

  double objective(const Eigen::VectorXd& x) const {
    return generation_cost(x) + shed_cost(x) + consensus_cost(x);
  }

  Eigen::VectorXd gradient(const Eigen::VectorXd& x) const {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(num_variables());
    const double base = net_.base_mva;
    for (int k = 0; k < ng(); ++k)
      grad[p_index(k)] = base * net_.generators[gens_[k]].cost.derivative(base * x[p_index(k)]);
    for (int s = 0; s < num_scenarios(); ++s)
      for (int r = 0; r < nr(); ++r)
        grad[shed_index(s, r)] = penalty_.c * base * scenarios_->probabilities[s];
    if (consensus_) {
      const int nc = static_cast<int>(consensus_local_.size());
      const Eigen::VectorXd d = boundary(x) - consensus_->z;
      for (int c = 0; c < nc; ++c) {
        grad[v_index(consensus_local_[c])] += consensus_->lambda[c] + consensus_->rho * d[c];
        grad[theta_index(consensus_local_[c])] +=
            consensus_->lambda[nc + c] + consensus_->rho * d[nc + c];
      }
    }
    return grad;
  }

  /// Deterministic: [P rows; Q rows] with P_i(V,θ) − ΣP_g + Pd_i = 0 (p.u.).
  /// Stochastic: Q rows only.
  Eigen::VectorXd eq(const Eigen::VectorXd& x) const {
    Eigen::VectorXd p, q;
    balance_.evaluate(x.segment(0, nl()), x.segment(nl(), nl()), p, q);
    const double base = net_.base_mva;
    for (int r = 0; r < nr(); ++r) {
      p[r] += net_.buses[rows_[r]].p_load / base;
      q[r] += net_.buses[rows_[r]].q_load / base;
    }
    for (int k = 0; k < ng(); ++k) {
      p[gen_row_[k]] -= x[p_index(k)];
      q[gen_row_[k]] -= x[q_index(k)];
    }
    if (stochastic()) return q;
    Eigen::VectorXd out(2 * nr());
    out << p, q;
    return out;
  }

  /// Per scenario: ΔP_is + ΣP_g − Pd_is − P_i(V,θ) ≥ 0. Buses without load
  /// in any scenario get a single row and no shed.
  Eigen::VectorXd ineq(const Eigen::VectorXd& x) const {
    Eigen::VectorXd out(num_ineq());
    if (!stochastic()) return out;
    Eigen::VectorXd p, q;
    balance_.evaluate(x.segment(0, nl()), x.segment(nl(), nl()), p, q);
    Eigen::VectorXd surplus = -p;
    for (int k = 0; k < ng(); ++k) surplus[gen_row_[k]] += x[p_index(k)];
    const double base = net_.base_mva;
    for (int k = 0; k < num_ineq(); ++k) {
      const auto [r, s] = ineq_rows_[k];
      out[k] = surplus[r];
      if (s >= 0) out[k] += x[shed_index(s, r)] - scenarios_->loads(s, rows_[r]) / base;
    }
    return out;
  }

  SparseMatrix eq_jacobian(const Eigen::VectorXd& x) const {
    std::vector<Eigen::Triplet<double>> t;
    const int q_off = stochastic() ? 0 : nr();
    balance_.jacobian(x.segment(0, nl()), x.segment(nl(), nl()),
                      [&](int r, std::span<const AcBalance::Partial> parts) {
                        for (const auto& d : parts) {
                          if (!stochastic()) {
                            t.emplace_back(r, v_index(d.local), d.dp_dv);
                            t.emplace_back(r, theta_index(d.local), d.dp_dtheta);
                          }
                          t.emplace_back(q_off + r, v_index(d.local), d.dq_dv);
                          t.emplace_back(q_off + r, theta_index(d.local), d.dq_dtheta);
                        }
                      });
    for (int k = 0; k < ng(); ++k) {
      if (!stochastic()) t.emplace_back(gen_row_[k], p_index(k), -1.0);
      t.emplace_back(q_off + gen_row_[k], q_index(k), -1.0);
    }
    SparseMatrix j(num_eq(), num_variables());
    j.setFromTriplets(t.begin(), t.end());
    return j;
  }

  SparseMatrix ineq_jacobian(const Eigen::VectorXd& x) const {
    SparseMatrix j(num_ineq(), num_variables());
    if (!stochastic()) return j;
    std::vector<std::vector<std::pair<int, double>>> row_terms(nr());
    balance_.jacobian(x.segment(0, nl()), x.segment(nl(), nl()),
                      [&](int r, std::span<const AcBalance::Partial> parts) {
                        for (const auto& d : parts) {
                          row_terms[r].emplace_back(v_index(d.local), -d.dp_dv);
                          row_terms[r].emplace_back(theta_index(d.local), -d.dp_dtheta);
                        }
                      });
    for (int k = 0; k < ng(); ++k) row_terms[gen_row_[k]].emplace_back(p_index(k), 1.0);
    std::vector<Eigen::Triplet<double>> t;
    for (int k = 0; k < num_ineq(); ++k) {
      const auto [r, s] = ineq_rows_[k];
      for (const auto& [col, val] : row_terms[r]) t.emplace_back(k, col, val);
      if (s >= 0) t.emplace_back(k, shed_index(s, r), 1.0);
    }
    j.setFromTriplets(t.begin(), t.end());
    return j;
  }

  SparseMatrix hessian(const Eigen::VectorXd& x, double obj_factor, const Eigen::VectorXd& w_eq,
                       const Eigen::VectorXd& w_ineq) const {
    std::vector<Eigen::Triplet<double>> t;
    const double base = net_.base_mva;
    for (int k = 0; k < ng(); ++k) {
      const double a = net_.generators[gens_[k]].cost.a;
      if (a != 0.0) t.emplace_back(p_index(k), p_index(k), obj_factor * 2.0 * a * base * base);
    }
    if (consensus_) {
      for (int c : consensus_local_) {
        t.emplace_back(v_index(c), v_index(c), obj_factor * consensus_->rho);
        t.emplace_back(theta_index(c), theta_index(c), obj_factor * consensus_->rho);
      }
    }
    Eigen::VectorXd wp = Eigen::VectorXd::Zero(nr()), wq(nr());
    if (stochastic()) {
      wq = w_eq;
      for (int k = 0; k < num_ineq(); ++k) wp[ineq_rows_[k].first] -= w_ineq[k];
    } else {
      wp = w_eq.head(nr());
      wq = w_eq.tail(nr());
    }
    balance_.hessian(x.segment(0, nl()), x.segment(nl(), nl()), wp, wq, [&](int a, int b, double v) {
      t.emplace_back(a, b, v);
      if (a != b) t.emplace_back(b, a, v);
    });
    SparseMatrix h(num_variables(), num_variables());
    h.setFromTriplets(t.begin(), t.end());
    return h;
  }

  /// Maps a variable vector back to physical units. Buses, generators and
  /// shed rows outside this model are NaN.
  OpfSolution extract(const Eigen::VectorXd& x) const {
    const double base = net_.base_mva;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const int n = net_.num_buses();
    OpfSolution sol;
    sol.point.v = Eigen::VectorXd::Constant(n, nan);
    sol.point.theta = Eigen::VectorXd::Constant(n, nan);
    for (int k = 0; k < nl(); ++k) {
      sol.point.v[local_[k]] = x[v_index(k)];
      sol.point.theta[local_[k]] = x[theta_index(k)];
    }
    const int total_gens = static_cast<int>(net_.generators.size());
    sol.gen_p = Eigen::VectorXd::Constant(total_gens, nan);
    sol.gen_q = Eigen::VectorXd::Constant(total_gens, nan);
    for (int k = 0; k < ng(); ++k) {
      sol.gen_p[gens_[k]] = base * x[p_index(k)];
      sol.gen_q[gens_[k]] = base * x[q_index(k)];
    }
    sol.load_shed = Eigen::MatrixXd::Constant(n, num_scenarios(), nan);
    for (int s = 0; s < num_scenarios(); ++s)
      for (int r = 0; r < nr(); ++r) sol.load_shed(rows_[r], s) = std::max(0.0, base * x[shed_index(s, r)]);
    sol.generation_cost = generation_cost(x);
    sol.shed_cost = shed_cost(x);
    sol.consensus_cost = consensus_cost(x);
    sol.objective_value = sol.generation_cost + sol.shed_cost;
    return sol;
  }

private:
  Eigen::VectorXd bounds(bool lower_side) const {
    const double base = net_.base_mva;
    Eigen::VectorXd out(num_variables());
    const int slack = net_.slack_index();
    for (int k = 0; k < nl(); ++k) {
      const Bus& bus = net_.buses[local_[k]];
      out[v_index(k)] = lower_side ? bus.v_min : bus.v_max;
      out[theta_index(k)] = local_[k] == slack ? 0.0 : (lower_side ? bus.theta_min : bus.theta_max);
    }
    for (int k = 0; k < ng(); ++k) {
      const Generator& g = net_.generators[gens_[k]];
      out[p_index(k)] = (lower_side ? g.p_min : g.p_max) / base;
      out[q_index(k)] = (lower_side ? g.q_min : g.q_max) / base;
    }
    for (int s = 0; s < num_scenarios(); ++s)
      for (int r = 0; r < nr(); ++r)
        out[shed_index(s, r)] = lower_side ? 0.0 : scenarios_->loads(s, rows_[r]) / base;
    return out;
  }

  NetworkCase net_;
  AdmittanceMatrix y_;
  std::vector<int> local_;
  std::vector<int> rows_;
  std::optional<ScenarioSet> scenarios_;
  ShedPenalty penalty_;
  std::optional<ConsensusTerm> consensus_;
  AcBalance balance_;
  std::vector<int> gens_;
  std::vector<int> gen_row_;
  std::vector<int> consensus_local_;
  std::vector<std::pair<int, int>> ineq_rows_;  // (balance row, scenario or -1)
};

/// An NlpProblem bound to the model it was built from.
struct OpfProblem {
  std::shared_ptr<const OpfModel> model;
  NlpProblem nlp;
};

inline OpfProblem make_problem(std::shared_ptr<const OpfModel> model) {
  NlpProblem p;
  p.n = model->num_variables();
  p.num_eq = model->num_eq();
  p.num_ineq = model->num_ineq();
  p.lower = model->lower();
  p.upper = model->upper();
  p.objective = [model](const Vector& x) { return model->objective(x); };
  p.gradient = [model](const Vector& x) { return model->gradient(x); };
  p.eq = [model](const Vector& x) { return model->eq(x); };
  p.eq_jacobian = [model](const Vector& x) { return model->eq_jacobian(x); };
  p.ineq = [model](const Vector& x) { return model->ineq(x); };
  p.ineq_jacobian = [model](const Vector& x) { return model->ineq_jacobian(x); };
  p.hessian = [model](const Vector& x, double s, const Vector& we, const Vector& wi) {
    return model->hessian(x, s, we, wi);
  };
  return {std::move(model), std::move(p)};
}

namespace detail {

inline std::vector<int> all_buses(const NetworkCase& net) {
  std::vector<int> b(net.num_buses());
  for (int i = 0; i < net.num_buses(); ++i) b[i] = i;
  return b;
}

}  // namespace detail

/// Full-network deterministic ACOPF: 2 n_b + 2 n_g variables, 2 n_b equalities.
inline OpfProblem build_standard(const NetworkCase& net) {
  auto buses = detail::all_buses(net);
  return make_problem(std::make_shared<const OpfModel>(net, buses, buses, std::nullopt, ShedPenalty{},
                                                       std::nullopt));
}

/// Full-network scenario ACOPF with load shedding.
inline OpfProblem build_stochastic(const NetworkCase& net, const ScenarioSet& scenarios,
                                   ShedPenalty penalty) {
  auto buses = detail::all_buses(net);
  return make_problem(
      std::make_shared<const OpfModel>(net, buses, buses, scenarios, penalty, std::nullopt));
}

/// Region subproblem: variables on region ∪ consensus buses, balance at the
/// region's buses, augmented Lagrangian on the consensus buses. With no
/// scenarios the region problem is deterministic. `z` and `lambda` hold V
/// then θ in consensus_buses order.
inline OpfProblem build_region_subproblem(const NetworkCase& net, const RegionPartition& partition,
                                          const std::string& region,
                                          const std::optional<ScenarioSet>& scenarios,
                                          ShedPenalty penalty, const Eigen::VectorXd& z,
                                          const Eigen::VectorXd& lambda, double rho) {
  auto it = partition.regions.find(region);
  if (it == partition.regions.end()) throw ValidationError("unknown region '" + region + "'");
  auto index = net.bus_index_map();
  std::vector<int> rows, local;
  for (int id : it->second) rows.push_back(index.at(id));
  std::sort(rows.begin(), rows.end());
  local = rows;
  ConsensusTerm term;
  for (int id : partition.consensus_buses) {
    const int b = index.at(id);
    term.buses.push_back(b);
    if (!std::binary_search(rows.begin(), rows.end(), b)) local.push_back(b);
  }
  std::sort(local.begin(), local.end());
  term.z = z;
  term.lambda = lambda;
  term.rho = rho;
  return make_problem(std::make_shared<const OpfModel>(net, local, rows, scenarios, penalty, term));
}

/// Solves an OPF problem from `x0` (the model's flat start by default) and
/// returns the physical solution together with the raw NLP result.
inline std::pair<OpfSolution, NlpSolution> solve_opf(const OpfProblem& problem,
                                                     const NlpOptions& options = {},
                                                     const std::optional<Vector>& x0 = std::nullopt,
                                                     const NlpDuals* warm = nullptr) {
  NlpSolution raw = solve(problem.nlp, x0 ? *x0 : problem.model->initial_point(), options, warm);
  OpfSolution sol = problem.model->extract(raw.x);
  sol.status = to_string(raw.status);
  sol.iterations = raw.iterations;
  sol.kkt_residual = raw.kkt_residual;
  return {std::move(sol), std::move(raw)};
}

/// Expected generation plus shedding cost of a solution under `scenarios`.
/// Stored shed is used when it has one column per scenario; otherwise shed
/// is the minimal amount satisfying the scenario surplus constraint with
/// (V, θ, P) frozen: clamp(Pd_is − (ΣP_g,i − P_i(V,θ)), 0, Pd_is).
inline double evaluate_stochastic_cost(const NetworkCase& net, const OpfSolution& solution,
                                       const ScenarioSet& scenarios, ShedPenalty penalty) {
  validate(scenarios);
  double gen_cost = 0.0;
  for (int g = 0; g < static_cast<int>(net.generators.size()); ++g)
    gen_cost += net.generators[g].cost(solution.gen_p[g]);
  const int n = net.num_buses();
  Eigen::MatrixXd shed;
  if (solution.load_shed.rows() == n && solution.load_shed.cols() == scenarios.size()) {
    shed = solution.load_shed;
  } else {
    const auto [p_inj, q_inj] = injections(solution.point, build_admittance(net), net.base_mva);
    Eigen::VectorXd supply = -p_inj;
    auto index = net.bus_index_map();
    for (int g = 0; g < static_cast<int>(net.generators.size()); ++g)
      supply[index.at(net.generators[g].bus_id)] += solution.gen_p[g];
    shed.resize(n, scenarios.size());
    for (int s = 0; s < scenarios.size(); ++s)
      for (int i = 0; i < n; ++i)
        shed(i, s) = std::clamp(scenarios.loads(s, i) - supply[i], 0.0, scenarios.loads(s, i));
  }
  double expected_shed = 0.0;
  for (int s = 0; s < scenarios.size(); ++s) expected_shed += scenarios.probabilities[s] * shed.col(s).sum();
  return gen_cost + penalty.c * expected_shed;
}

}  // namespace dsopf

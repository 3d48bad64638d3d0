#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dsopf/ac_balance.hpp"
#include "dsopf/case_model.hpp"
#include "dsopf/error.hpp"

namespace dsopf {

/// Voltage magnitude (p.u.) and angle (rad) per bus, in case bus order.
struct OperatingPoint {
  Eigen::VectorXd v;
  Eigen::VectorXd theta;

  static OperatingPoint flat(int n) {
    return {Eigen::VectorXd::Ones(n), Eigen::VectorXd::Zero(n)};
  }
};

/// Net injections P_i, Q_i in MW/MVar:
///   P_i = base * sum_j V_i V_j (G_ij cos θ_ij + B_ij sin θ_ij)
///   Q_i = base * sum_j V_i V_j (G_ij sin θ_ij - B_ij cos θ_ij)
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> injections(const OperatingPoint& point,
                                                              const AdmittanceMatrix& y,
                                                              double base_mva) {
  const int n = y.size();
  if (point.v.size() != n || point.theta.size() != n || y.b.rows() != n || y.b.cols() != n)
    throw DimensionError("operating point and admittance dimensions differ");
  Eigen::VectorXd p = Eigen::VectorXd::Zero(n), q = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double ang = point.theta[i] - point.theta[j];
      const double vv = point.v[i] * point.v[j];
      p[i] += vv * (y.g(i, j) * std::cos(ang) + y.b(i, j) * std::sin(ang));
      q[i] += vv * (y.g(i, j) * std::sin(ang) - y.b(i, j) * std::cos(ang));
    }
  }
  return {p * base_mva, q * base_mva};
}

struct PvSetpoint {
  double p_mw = 0.0;
  double v = 1.0;
};

/// Generator-bus control for a power flow, keyed by bus id. The slack bus
/// takes its voltage from `slack_v` (or from its first generator's v_set).
struct PfSetpoints {
  std::optional<double> slack_v;
  std::map<int, PvSetpoint> pv;
};

struct PfOptions {
  double tolerance = 1e-8;  // max |mismatch|, p.u.
  int max_iter = 30;
};

struct PfSolution {
  OperatingPoint point;
  double slack_p = 0.0;          // MW generated at the slack bus
  double slack_q = 0.0;          // MVar generated at the slack bus
  std::map<int, double> gen_q;   // MVar generated at each PV bus, by bus id
  int iterations = 0;
  double max_mismatch = 0.0;     // p.u.
};

/// Newton-Raphson AC power flow from a flat start. `p_loads` (MW, case bus
/// order) overrides active loads; reactive loads stay at the case values.
/// Generator reactive limits are not enforced.
inline PfSolution solve_powerflow(const NetworkCase& net, const PfSetpoints& setpoints,
                                  const std::optional<Eigen::VectorXd>& p_loads = std::nullopt,
                                  const PfOptions& options = {}) {
  const int n = net.num_buses();
  const double base = net.base_mva;
  const int slack = net.slack_index();
  if (p_loads && p_loads->size() != n) throw DimensionError("load vector length differs from bus count");
  auto index = net.bus_index_map();

  enum class Kind { slack, pv, pq };
  std::vector<Kind> kind(n, Kind::pq);
  kind[slack] = Kind::slack;
  Eigen::VectorXd p_spec(n), q_spec(n);
  OperatingPoint point = OperatingPoint::flat(n);
  for (int i = 0; i < n; ++i) {
    p_spec[i] = -(p_loads ? (*p_loads)[i] : net.buses[i].p_load) / base;
    q_spec[i] = -net.buses[i].q_load / base;
  }
  for (const auto& [bus_id, sp] : setpoints.pv) {
    auto it = index.find(bus_id);
    if (it == index.end()) throw ValidationError("PV setpoint for unknown bus " + std::to_string(bus_id));
    if (it->second == slack) continue;
    kind[it->second] = Kind::pv;
    p_spec[it->second] += sp.p_mw / base;
    point.v[it->second] = sp.v;
  }
  for (const auto& g : net.generators) {
    int i = index.at(g.bus_id);
    if (i != slack && kind[i] != Kind::pv)
      throw ValidationError("no PV setpoint for generator bus " + std::to_string(g.bus_id));
  }
  if (setpoints.slack_v) {
    point.v[slack] = *setpoints.slack_v;
  } else {
    for (const auto& g : net.generators)
      if (index.at(g.bus_id) == slack) {
        point.v[slack] = g.v_set;
        break;
      }
  }

  // Unknowns: θ at non-slack buses, then V at PQ buses.
  std::vector<int> theta_pos(n, -1), v_pos(n, -1);
  int dim = 0;
  for (int i = 0; i < n; ++i)
    if (kind[i] != Kind::slack) theta_pos[i] = dim++;
  for (int i = 0; i < n; ++i)
    if (kind[i] == Kind::pq) v_pos[i] = dim++;

  std::vector<int> all(n);
  for (int i = 0; i < n; ++i) all[i] = i;
  const AdmittanceMatrix y = build_admittance(net);
  const AcBalance balance(y, all, all);

  Eigen::VectorXd p, q, mismatch(dim);
  auto compute_mismatch = [&] {
    balance.evaluate(point.v, point.theta, p, q);
    for (int i = 0; i < n; ++i) {
      if (theta_pos[i] >= 0) mismatch[theta_pos[i]] = p[i] - p_spec[i];
      if (v_pos[i] >= 0) mismatch[v_pos[i]] = q[i] - q_spec[i];
    }
    return dim == 0 ? 0.0 : mismatch.cwiseAbs().maxCoeff();
  };

  PfSolution out;
  double worst = compute_mismatch();
  int iter = 0;
  while (!(worst <= options.tolerance)) {
    if (iter >= options.max_iter || !std::isfinite(worst))
      throw NonconvergenceError("power flow did not converge in " + std::to_string(iter) +
                                    " iterations (mismatch " + std::to_string(worst) + " p.u.)",
                                worst);
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(dim, dim);
    balance.jacobian(point.v, point.theta, [&](int r, std::span<const AcBalance::Partial> parts) {
      for (const auto& d : parts) {
        if (theta_pos[r] >= 0) {
          if (theta_pos[d.local] >= 0) jac(theta_pos[r], theta_pos[d.local]) += d.dp_dtheta;
          if (v_pos[d.local] >= 0) jac(theta_pos[r], v_pos[d.local]) += d.dp_dv;
        }
        if (v_pos[r] >= 0) {
          if (theta_pos[d.local] >= 0) jac(v_pos[r], theta_pos[d.local]) += d.dq_dtheta;
          if (v_pos[d.local] >= 0) jac(v_pos[r], v_pos[d.local]) += d.dq_dv;
        }
      }
    });
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(jac);
    if (!(lu.rcond() > 1e-14)) throw SingularJacobianError("power flow Jacobian is singular");
    Eigen::VectorXd step = lu.solve(-mismatch);
    for (int i = 0; i < n; ++i) {
      if (theta_pos[i] >= 0) point.theta[i] += step[theta_pos[i]];
      if (v_pos[i] >= 0) point.v[i] += step[v_pos[i]];
    }
    ++iter;
    worst = compute_mismatch();
  }

  out.point = point;
  out.iterations = iter;
  out.max_mismatch = worst;
  out.slack_p = p[slack] * base + (p_loads ? (*p_loads)[slack] : net.buses[slack].p_load);
  out.slack_q = q[slack] * base + net.buses[slack].q_load;
  for (int i = 0; i < n; ++i)
    if (kind[i] == Kind::pv) out.gen_q[net.buses[i].id] = q[i] * base + net.buses[i].q_load;
  return out;
}

}  // namespace dsopf

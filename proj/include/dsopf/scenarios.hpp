#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dsopf/case_model.hpp"
#include "dsopf/error.hpp"

namespace dsopf {

/// M active-load vectors (rows, MW, case bus order) with probabilities.
/// `source_indices` maps each row to its position in the set it was
/// reduced from (identity for a freshly sampled set).
struct ScenarioSet {
  Eigen::MatrixXd loads;
  Eigen::VectorXd probabilities;
  std::optional<std::uint64_t> source_seed;
  std::vector<int> source_indices;

  int size() const { return static_cast<int>(loads.rows()); }
  int num_buses() const { return static_cast<int>(loads.cols()); }

  bool operator==(const ScenarioSet& o) const {
    return loads.rows() == o.loads.rows() && loads.cols() == o.loads.cols() && loads == o.loads &&
           probabilities == o.probabilities && source_seed == o.source_seed &&
           source_indices == o.source_indices;
  }
};

constexpr double kProbabilityTolerance = 1e-9;

inline void validate(const ScenarioSet& s) {
  if (s.probabilities.size() != s.size())
    throw DimensionError("scenario probabilities and loads disagree in length");
  if (s.size() == 0) throw ValidationError("scenario set is empty");
  if ((s.probabilities.array() < 0.0).any()) throw ValidationError("negative scenario probability");
  if (std::abs(s.probabilities.sum() - 1.0) > kProbabilityTolerance)
    throw ValidationError("scenario probabilities sum to " + std::to_string(s.probabilities.sum()));
  if ((s.loads.array() < 0.0).any()) throw ValidationError("negative scenario load");
}

/// Single scenario at the case's base loads.
inline ScenarioSet base_scenario(const NetworkCase& net) {
  ScenarioSet s;
  s.loads = net.active_loads().transpose();
  s.probabilities = Eigen::VectorXd::Ones(1);
  s.source_indices = {0};
  return s;
}

/// Independent N(base, (sigma_frac * base)^2) draws per bus, truncated at 0
/// by redrawing. Uniform probabilities.
inline ScenarioSet sample_gaussian(const NetworkCase& net, int m, double sigma_frac,
                                   std::uint64_t seed) {
  if (m < 1) throw ValidationError("scenario count must be at least 1");
  if (!(sigma_frac >= 0.0)) throw ValidationError("sigma fraction must be nonnegative");
  const int n = net.num_buses();
  for (const auto& bus : net.buses)
    if (bus.p_load < 0.0)
      throw ValidationError("bus " + std::to_string(bus.id) + " has negative base load");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  ScenarioSet s;
  s.loads.resize(m, n);
  for (int k = 0; k < m; ++k) {
    for (int i = 0; i < n; ++i) {
      const double base = net.buses[i].p_load;
      const double sd = sigma_frac * base;
      if (sd == 0.0) {
        s.loads(k, i) = base;
        continue;
      }
      double value;
      do value = base + sd * normal(rng);
      while (value < 0.0);
      s.loads(k, i) = value;
    }
  }
  s.probabilities = Eigen::VectorXd::Constant(m, 1.0 / m);
  s.source_seed = seed;
  s.source_indices.resize(m);
  std::iota(s.source_indices.begin(), s.source_indices.end(), 0);
  return s;
}

inline Eigen::MatrixXd pairwise_distances(const Eigen::MatrixXd& points) {
  const int m = static_cast<int>(points.rows());
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(m, m);
  for (int a = 0; a < m; ++a)
    for (int b = a + 1; b < m; ++b) d(a, b) = d(b, a) = (points.row(a) - points.row(b)).norm();
  return d;
}

struct ClusterAssignment {
  std::vector<int> labels;
  Eigen::MatrixXd centers;  // K x n_b
};

/// Density-seeded K-means. Density of a scenario is the number of scenarios
/// within the mean pairwise distance of it; the densest scenario is the first
/// center, each further center maximizes its distance to the nearest chosen
/// one, then Lloyd iterations run to a fixed assignment (at most 100). The
/// seed only breaks exact ties during seeding.
inline ClusterAssignment improved_kmeans(const ScenarioSet& s, int k, std::uint64_t seed) {
  const int m = s.size();
  if (k < 1 || k > m)
    throw ValidationError("cluster count " + std::to_string(k) + " outside [1, " + std::to_string(m) + "]");
  const Eigen::MatrixXd& x = s.loads;
  const Eigen::MatrixXd dist = pairwise_distances(x);
  std::mt19937_64 rng(seed);
  auto pick = [&](const std::vector<int>& tied) {
    if (tied.size() == 1) return tied.front();
    std::uniform_int_distribution<std::size_t> u(0, tied.size() - 1);
    return tied[u(rng)];
  };

  const double radius = m > 1 ? dist.sum() / (static_cast<double>(m) * (m - 1)) : 0.0;
  std::vector<int> density(m, 0);
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b)
      if (a != b && dist(a, b) <= radius) ++density[a];
  const int top = *std::max_element(density.begin(), density.end());
  std::vector<int> tied;
  for (int a = 0; a < m; ++a)
    if (density[a] == top) tied.push_back(a);
  std::vector<int> chosen{pick(tied)};
  std::vector<double> nearest(m);
  for (int a = 0; a < m; ++a) nearest[a] = dist(a, chosen[0]);
  while (static_cast<int>(chosen.size()) < k) {
    double far = -1.0;
    for (int a = 0; a < m; ++a)
      if (std::find(chosen.begin(), chosen.end(), a) == chosen.end()) far = std::max(far, nearest[a]);
    tied.clear();
    for (int a = 0; a < m; ++a)
      if (nearest[a] == far && std::find(chosen.begin(), chosen.end(), a) == chosen.end())
        tied.push_back(a);
    const int c = pick(tied);
    chosen.push_back(c);
    for (int a = 0; a < m; ++a) nearest[a] = std::min(nearest[a], dist(a, c));
  }

  ClusterAssignment out;
  out.centers.resize(k, x.cols());
  for (int c = 0; c < k; ++c) out.centers.row(c) = x.row(chosen[c]);
  out.labels.assign(m, -1);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (int a = 0; a < m; ++a) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = (x.row(a) - out.centers.row(c)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (out.labels[a] != best) {
        out.labels[a] = best;
        changed = true;
      }
    }
    // An emptied cluster takes the point farthest from its own center.
    for (int c = 0; c < k; ++c) {
      if (std::count(out.labels.begin(), out.labels.end(), c) > 0) continue;
      int far_pt = -1;
      double far_d = -1.0;
      for (int a = 0; a < m; ++a) {
        if (std::count(out.labels.begin(), out.labels.end(), out.labels[a]) < 2) continue;
        const double d = (x.row(a) - out.centers.row(out.labels[a])).squaredNorm();
        if (d > far_d) {
          far_d = d;
          far_pt = a;
        }
      }
      out.labels[far_pt] = c;
      changed = true;
    }
    out.centers.setZero();
    std::vector<int> count(k, 0);
    for (int a = 0; a < m; ++a) {
      out.centers.row(out.labels[a]) += x.row(a);
      ++count[out.labels[a]];
    }
    for (int c = 0; c < k; ++c) out.centers.row(c) /= count[c];
    if (!changed) break;
  }
  return out;
}

namespace detail {

inline ScenarioSet take_rows(const ScenarioSet& s, const std::vector<int>& rows,
                             const Eigen::VectorXd& probs) {
  ScenarioSet out;
  out.loads.resize(static_cast<int>(rows.size()), s.num_buses());
  out.probabilities = probs;
  out.source_seed = s.source_seed;
  for (int r = 0; r < static_cast<int>(rows.size()); ++r) {
    out.loads.row(r) = s.loads.row(rows[r]);
    out.source_indices.push_back(s.source_indices.empty() ? rows[r] : s.source_indices[rows[r]]);
  }
  return out;
}

}  // namespace detail

/// Simultaneous backward reduction: repeatedly removes the kept scenario
/// with the smallest probability × distance to its nearest kept neighbour
/// and moves its probability to that neighbour. Ties go to the scenario with
/// the smallest total distance to the kept set, then the higher index.
inline ScenarioSet sbr_reduce(const ScenarioSet& s, int target) {
  const int m = s.size();
  if (target < 1 || target > m)
    throw ValidationError("SBR target " + std::to_string(target) + " outside [1, " + std::to_string(m) + "]");
  const Eigen::MatrixXd dist = pairwise_distances(s.loads);
  Eigen::VectorXd prob = s.probabilities;
  std::vector<bool> kept(m, true);
  auto nearest_kept = [&](int a) {
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (int b = 0; b < m; ++b)
      if (b != a && kept[b] && dist(a, b) < best_d) {
        best_d = dist(a, b);
        best = b;
      }
    return std::pair{best, best_d};
  };
  for (int remaining = m; remaining > target; --remaining) {
    int victim = -1;
    double victim_cost = std::numeric_limits<double>::infinity(), victim_spread = 0.0;
    for (int a = 0; a < m; ++a) {
      if (!kept[a]) continue;
      const double cost = prob[a] * nearest_kept(a).second;
      double spread = 0.0;
      for (int b = 0; b < m; ++b)
        if (kept[b]) spread += dist(a, b);
      if (cost < victim_cost || (cost == victim_cost && spread <= victim_spread)) {
        victim = a;
        victim_cost = cost;
        victim_spread = spread;
      }
    }
    const int heir = nearest_kept(victim).first;
    prob[heir] += prob[victim];
    prob[victim] = 0.0;
    kept[victim] = false;
  }
  std::vector<int> rows;
  for (int a = 0; a < m; ++a)
    if (kept[a]) rows.push_back(a);
  Eigen::VectorXd p(static_cast<int>(rows.size()));
  for (int r = 0; r < p.size(); ++r) p[r] = prob[rows[r]];
  return detail::take_rows(s, rows, p / p.sum());
}

/// Clusters, reduces each cluster with SBR to `per_cluster_target` (or the
/// cluster size), and weights survivors by their cluster's mass.
inline ScenarioSet reduce(const ScenarioSet& s, int k, int per_cluster_target, std::uint64_t seed) {
  if (per_cluster_target < 1) throw ValidationError("per-cluster target must be at least 1");
  if (static_cast<long>(k) * per_cluster_target > s.size())
    throw ValidationError("k * per_cluster_target exceeds the scenario count");
  const ClusterAssignment clusters = improved_kmeans(s, k, seed);
  std::vector<int> rows;
  std::vector<double> probs;
  for (int c = 0; c < k; ++c) {
    std::vector<int> members;
    for (int a = 0; a < s.size(); ++a)
      if (clusters.labels[a] == c) members.push_back(a);
    Eigen::VectorXd p(static_cast<int>(members.size()));
    for (int r = 0; r < p.size(); ++r) p[r] = s.probabilities[members[r]];
    const double mass = p.sum();
    if (mass <= 0.0) continue;
    ScenarioSet local = detail::take_rows(s, members, p / mass);
    local.source_indices.clear();
    for (int r = 0; r < p.size(); ++r) local.source_indices.push_back(r);
    ScenarioSet kept = sbr_reduce(local, std::min<int>(per_cluster_target, local.size()));
    for (int r = 0; r < kept.size(); ++r) {
      rows.push_back(members[kept.source_indices[r]]);
      probs.push_back(mass * kept.probabilities[r]);
    }
  }
  std::vector<int> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return rows[a] < rows[b]; });
  std::vector<int> sorted_rows;
  Eigen::VectorXd p(static_cast<int>(rows.size()));
  for (int r = 0; r < static_cast<int>(order.size()); ++r) {
    sorted_rows.push_back(rows[order[r]]);
    p[r] = probs[order[r]];
  }
  return detail::take_rows(s, sorted_rows, p / p.sum());
}

/// Σ over original scenarios absent from `reduced` (compared by value) of
/// μ_s times the distance to the nearest reduced scenario.
inline double kantorovich_distance(const ScenarioSet& original, const ScenarioSet& reduced) {
  if (reduced.size() == 0) throw ValidationError("reduced scenario set is empty");
  if (original.num_buses() != reduced.num_buses())
    throw DimensionError("scenario sets have different bus counts");
  double total = 0.0;
  for (int a = 0; a < original.size(); ++a) {
    double best = std::numeric_limits<double>::infinity();
    for (int b = 0; b < reduced.size(); ++b)
      best = std::min(best, (original.loads.row(a) - reduced.loads.row(b)).norm());
    if (best > 0.0) total += original.probabilities[a] * best;
  }
  return total;
}

}  // namespace dsopf

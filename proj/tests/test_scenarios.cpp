#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "dsopf/scenarios.hpp"
#include "test_support.hpp"

using namespace dsopf;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

ScenarioSet make_set(const MatrixXd& loads, VectorXd probs = {}) {
  ScenarioSet s;
  s.loads = loads;
  const int m = static_cast<int>(loads.rows());
  s.probabilities = probs.size() ? probs : VectorXd::Constant(m, 1.0 / m);
  s.source_indices.resize(m);
  std::iota(s.source_indices.begin(), s.source_indices.end(), 0);
  return s;
}

ScenarioSet random_set(int m, int n, std::uint64_t seed, bool uniform) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  MatrixXd x(m, n);
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < n; ++c) x(r, c) = u(rng);
  VectorXd p(m);
  for (int r = 0; r < m; ++r) p[r] = uniform ? 1.0 : 0.1 + u(rng);
  return make_set(x, p / p.sum());
}

// Increase in Σ μ_s · d(s, nearest kept) caused by removing one scenario.
double removal_cost(const ScenarioSet& s, int victim) {
  double best = std::numeric_limits<double>::infinity();
  for (int b = 0; b < s.size(); ++b)
    if (b != victim) best = std::min(best, (s.loads.row(victim) - s.loads.row(b)).norm());
  return s.probabilities[victim] * best;
}

int removed_row(const ScenarioSet& before, const ScenarioSet& after) {
  std::set<int> kept(after.source_indices.begin(), after.source_indices.end());
  for (int r = 0; r < before.size(); ++r)
    if (!kept.count(before.source_indices[r])) return r;
  return -1;
}

}  // namespace

TEST(Sampling, ZeroSigmaReproducesBaseLoad) {
  NetworkCase net = test::load("case14");
  ScenarioSet s = sample_gaussian(net, 7, 0.0, 3);
  for (int k = 0; k < s.size(); ++k)
    for (int i = 0; i < net.num_buses(); ++i) EXPECT_EQ(s.loads(k, i), net.buses[i].p_load);
}

TEST(Sampling, MeanWithinThreeStandardErrors) {
  NetworkCase net = test::load("case14");
  const int m = 100;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    ScenarioSet s = sample_gaussian(net, m, 0.1, seed);
    EXPECT_NEAR(s.probabilities.sum(), 1.0, kProbabilityTolerance);
    const VectorXd mean = s.loads.colwise().mean().transpose();
    for (int i = 0; i < net.num_buses(); ++i) {
      const double base = net.buses[i].p_load;
      EXPECT_LE(std::abs(mean[i] - base), 3.0 * 0.1 * base / std::sqrt(m) + 1e-12) << "bus " << net.buses[i].id;
    }
  }
}

TEST(Sampling, ZeroLoadBusStaysZero) {
  NetworkCase net = test::load("case14");
  ScenarioSet s = sample_gaussian(net, 50, 0.3, 9);
  for (int i = 0; i < net.num_buses(); ++i)
    if (net.buses[i].p_load == 0.0) {
      EXPECT_TRUE((s.loads.col(i).array() == 0.0).all()) << "bus " << net.buses[i].id;
    }
  EXPECT_TRUE((s.loads.array() >= 0.0).all());
}

TEST(Sampling, DeterministicUnderSeed) {
  NetworkCase net = test::load("case30");
  EXPECT_TRUE(sample_gaussian(net, 100, 0.1, 42) == sample_gaussian(net, 100, 0.1, 42));
  EXPECT_FALSE(sample_gaussian(net, 100, 0.1, 42) == sample_gaussian(net, 100, 0.1, 43));
}

TEST(Sampling, RejectsBadArguments) {
  NetworkCase net = test::load("case14");
  EXPECT_THROW(sample_gaussian(net, 0, 0.1, 1), ValidationError);
  EXPECT_THROW(sample_gaussian(net, 5, -0.1, 1), ValidationError);
}

TEST(KMeans, SingleClusterCenterIsMean) {
  ScenarioSet s = random_set(15, 4, 5, true);
  ClusterAssignment c = improved_kmeans(s, 1, 0);
  EXPECT_TRUE(std::all_of(c.labels.begin(), c.labels.end(), [](int l) { return l == 0; }));
  EXPECT_LT((c.centers.row(0) - s.loads.colwise().mean()).norm(), 1e-12);
}

TEST(KMeans, SeparatesWellSeparatedClouds) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  MatrixXd x(20, 3);
  for (int r = 0; r < 20; ++r)
    for (int c = 0; c < 3; ++c) x(r, c) = u(rng) + (r < 12 ? 0.0 : 10.0 * std::sqrt(3.0));
  ClusterAssignment c = improved_kmeans(make_set(x), 2, 7);
  for (int r = 0; r < 20; ++r) EXPECT_EQ(c.labels[r] == c.labels[0], r < 12) << r;
}

TEST(KMeans, KEqualsMGivesSingletons) {
  ScenarioSet s = random_set(9, 2, 4, true);
  ClusterAssignment c = improved_kmeans(s, 9, 0);
  std::set<int> labels(c.labels.begin(), c.labels.end());
  EXPECT_EQ(labels.size(), 9u);
}

TEST(KMeans, EveryClusterNonEmpty) {
  NetworkCase net = test::load("case14");
  ScenarioSet s = sample_gaussian(net, 100, 0.1, 5);
  for (int k : {2, 5, 10, 30}) {
    ClusterAssignment c = improved_kmeans(s, k, 1);
    std::vector<int> count(k, 0);
    for (int l : c.labels) {
      ASSERT_GE(l, 0);
      ASSERT_LT(l, k);
      ++count[l];
    }
    EXPECT_TRUE(std::all_of(count.begin(), count.end(), [](int n) { return n > 0; })) << "k=" << k;
  }
}

TEST(KMeans, RejectsKOutsideRange) {
  ScenarioSet s = random_set(4, 2, 1, true);
  EXPECT_THROW(improved_kmeans(s, 5, 0), ValidationError);
  EXPECT_THROW(improved_kmeans(s, 0, 0), ValidationError);
}

TEST(Sbr, HandExampleRemovesMiddlePoint) {
  ScenarioSet s = make_set((MatrixXd(3, 1) << 0, 1, 10).finished());
  ScenarioSet r = sbr_reduce(s, 2);
  ASSERT_EQ(r.size(), 2);
  EXPECT_EQ(r.loads(0, 0), 0.0);
  EXPECT_EQ(r.loads(1, 0), 10.0);
  EXPECT_NEAR(r.probabilities[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(r.probabilities[1], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(kantorovich_distance(s, r), 1.0 / 3.0, 1e-15);
}

TEST(Sbr, TargetMIsIdentity) {
  ScenarioSet s = random_set(8, 3, 2, false);
  EXPECT_TRUE(sbr_reduce(s, 8) == s);
}

TEST(Sbr, IdenticalScenariosCollapseToOne) {
  ScenarioSet s = make_set(MatrixXd::Constant(6, 4, 2.5));
  ScenarioSet r = sbr_reduce(s, 1);
  ASSERT_EQ(r.size(), 1);
  EXPECT_DOUBLE_EQ(r.probabilities[0], 1.0);
}

TEST(Sbr, FirstRemovalIsBruteForceOptimal) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const int m = 3 + static_cast<int>(seed % 10);
    ScenarioSet s = random_set(m, 1 + static_cast<int>(seed % 4), seed, seed % 2 == 0);
    ScenarioSet r = sbr_reduce(s, m - 1);
    const int victim = removed_row(s, r);
    ASSERT_GE(victim, 0);
    double best = std::numeric_limits<double>::infinity();
    for (int a = 0; a < m; ++a) best = std::min(best, removal_cost(s, a));
    EXPECT_LE(removal_cost(s, victim), best + 1e-12) << "seed " << seed;
    EXPECT_NEAR(r.probabilities.sum(), 1.0, kProbabilityTolerance);
  }
}

TEST(Sbr, ProbabilityGoesToNearestSurvivor) {
  ScenarioSet s = make_set((MatrixXd(4, 1) << 0, 4, 5, 20).finished(), VectorXd{{0.4, 0.1, 0.3, 0.2}});
  ScenarioSet r = sbr_reduce(s, 3);
  ASSERT_EQ(r.source_indices, (std::vector<int>{0, 2, 3}));
  EXPECT_NEAR(r.probabilities[1], 0.4, 1e-15);
}

TEST(Reduce, IdentityWhenNothingRemoved) {
  ScenarioSet s = random_set(10, 3, 8, false);
  ScenarioSet r = reduce(s, 1, 10, 0);
  EXPECT_EQ(r.source_indices, s.source_indices);
  EXPECT_LT((r.probabilities - s.probabilities).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(kantorovich_distance(s, r), 0.0);
}

TEST(Reduce, ConservesProbabilityAndKeepsOriginalPoints) {
  NetworkCase net = test::load("case14");
  ScenarioSet s = sample_gaussian(net, 100, 0.1, 1);
  ScenarioSet r = reduce(s, 5, 2, 1);
  EXPECT_EQ(r.size(), 10);
  EXPECT_NEAR(r.probabilities.sum(), 1.0, kProbabilityTolerance);
  EXPECT_TRUE((r.probabilities.array() > 0.0).all());
  for (int k = 0; k < r.size(); ++k) EXPECT_EQ(r.loads.row(k), s.loads.row(r.source_indices[k]));
}

TEST(Reduce, BeatsRandomSubsets) {
  NetworkCase net = test::load("case14");
  ScenarioSet s = sample_gaussian(net, 100, 0.1, 2);
  ScenarioSet r = reduce(s, 5, 2, 2);
  const double ours = kantorovich_distance(s, r);
  std::mt19937_64 rng(99);
  std::vector<int> idx(100);
  std::iota(idx.begin(), idx.end(), 0);
  for (int trial = 0; trial < 20; ++trial) {
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<int> pick(idx.begin(), idx.begin() + r.size());
    ScenarioSet rand = detail::take_rows(s, pick, VectorXd::Constant(r.size(), 1.0 / r.size()));
    EXPECT_LE(ours, kantorovich_distance(s, rand)) << "trial " << trial;
  }
}

TEST(Reduce, DeterministicUnderSeed) {
  NetworkCase net = test::load("case30");
  ScenarioSet s = sample_gaussian(net, 100, 0.1, 7);
  EXPECT_TRUE(reduce(s, 5, 2, 7) == reduce(s, 5, 2, 7));
}

TEST(Reduce, RejectsOversizedTarget) {
  ScenarioSet s = random_set(6, 2, 3, true);
  EXPECT_THROW(reduce(s, 3, 3, 0), ValidationError);
}

TEST(Kantorovich, SingleSupportEqualsWeightedDistances) {
  ScenarioSet s = random_set(7, 3, 12, false);
  ScenarioSet one = detail::take_rows(s, {4}, VectorXd::Ones(1));
  double expect = 0.0;
  for (int a = 0; a < s.size(); ++a) expect += s.probabilities[a] * (s.loads.row(a) - s.loads.row(4)).norm();
  EXPECT_NEAR(kantorovich_distance(s, one), expect, 1e-12);
  EXPECT_EQ(kantorovich_distance(s, s), 0.0);
}

TEST(Kantorovich, EmptyReducedSetThrows) {
  ScenarioSet s = random_set(3, 2, 1, true);
  ScenarioSet empty;
  empty.loads.resize(0, 2);
  EXPECT_THROW(kantorovich_distance(s, empty), ValidationError);
}

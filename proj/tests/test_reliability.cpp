#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "dsopf/reliability.hpp"
#include "test_support.hpp"

using namespace dsopf;

namespace {

OpfSolution baseline(const NetworkCase& net) {
  auto [sol, raw] = solve_opf(build_standard(net));
  EXPECT_EQ(sol.status, "optimal");
  return sol;
}

}  // namespace

TEST(Losp, BaseLoadOnlyGivesZero) {
  for (const char* name : {"case2", "case14", "case30"}) {
    NetworkCase net = test::load(name);
    LospReport r = evaluate_losp(net, baseline(net), base_scenario(net));
    EXPECT_EQ(r.losp, 0.0) << name << " slack OPF " << r.slack_opf << " PF " << r.slack_per_scenario[0];
    EXPECT_NEAR(r.slack_per_scenario[0], r.slack_opf, 1e-3) << name;
  }
}

TEST(Losp, CountingIdentity) {
  NetworkCase net = test::load("case14");
  ScenarioSet s = sample_gaussian(net, 60, 0.1, 4);
  LospReport r = evaluate_losp(net, baseline(net), s);
  EXPECT_EQ(r.losp * s.size(), static_cast<double>(r.shortfall_scenarios.size()));
  EXPECT_GE(r.losp, 0.0);
  EXPECT_LE(r.losp, 1.0);
  EXPECT_EQ(r.slack_per_scenario.size(), s.size());
  for (int k = 0; k < s.size(); ++k) {
    const bool fired = std::find(r.shortfall_scenarios.begin(), r.shortfall_scenarios.end(), k) !=
                       r.shortfall_scenarios.end();
    EXPECT_EQ(fired, r.slack_opf < r.slack_per_scenario[k] - kSlackTieToleranceMw) << k;
  }
}

TEST(Losp, InvariantUnderReordering) {
  NetworkCase net = test::load("case14");
  OpfSolution sol = baseline(net);
  ScenarioSet s = sample_gaussian(net, 40, 0.1, 6);
  std::vector<int> perm(s.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(3));
  ScenarioSet shuffled = detail::take_rows(s, perm, s.probabilities);
  LospReport a = evaluate_losp(net, sol, s);
  LospReport b = evaluate_losp(net, sol, shuffled);
  EXPECT_EQ(a.losp, b.losp);
  std::vector<int> mapped;
  for (int k : b.shortfall_scenarios) mapped.push_back(perm[k]);
  std::sort(mapped.begin(), mapped.end());
  EXPECT_EQ(mapped, a.shortfall_scenarios);
}

TEST(Losp, MonotoneInUniformLoadScaling) {
  NetworkCase net = test::load("case2");
  OpfSolution sol = baseline(net);
  ScenarioSet s = sample_gaussian(net, 50, 0.1, 2);
  double previous = 0.0;
  for (double gamma : {0.9, 1.0, 1.02, 1.05, 1.1, 1.3, 2.0}) {
    ScenarioSet scaled = s;
    scaled.loads *= gamma;
    const double losp = evaluate_losp(net, sol, scaled).losp;
    EXPECT_GE(losp, previous) << gamma;
    previous = losp;
  }
  EXPECT_EQ(previous, 1.0);
}

TEST(Losp, DivergentPowerFlowCountsAsShortfall) {
  NetworkCase net = test::load("case2");
  OpfSolution sol = baseline(net);
  ScenarioSet s = base_scenario(net);
  s.loads(0, 1) = 5000.0;
  LospReport r = evaluate_losp(net, sol, s);
  EXPECT_EQ(r.losp, 1.0);
  ASSERT_EQ(r.failed_scenarios, std::vector<int>{0});
  EXPECT_EQ(r.warnings.size(), 1u);
}

TEST(Losp, RejectsMismatchedScenarios) {
  NetworkCase net = test::load("case14");
  EXPECT_THROW(evaluate_losp(net, baseline(net), base_scenario(test::load("case2"))), DimensionError);
}

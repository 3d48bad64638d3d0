#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "dsopf/admm.hpp"
#include "test_support.hpp"

using namespace dsopf;
using Eigen::VectorXd;

namespace {

struct LoggedRun {
  NetworkCase net;
  RegionPartition part;
  AdmmResult result;
  std::string telemetry;
  std::string messages;
};

AdmmOptions fast_options() {
  AdmmOptions opt;
  opt.rho = 1e5;
  return opt;
}

// One logged case14 run shared by the audit tests.
const LoggedRun& logged_case14() {
  static const LoggedRun run = [] {
    LoggedRun r{test::load("case14"), {}, {}, {}, {}};
    r.part = test::default_partition(r.net, "case14");
    std::ostringstream tele, msgs;
    AdmmOptions opt = fast_options();
    opt.telemetry = &tele;
    opt.message_log = &msgs;
    r.result = run_consensus(r.net, r.part, std::nullopt, {}, opt);
    r.telemetry = tele.str();
    r.messages = msgs.str();
    return r;
  }();
  return run;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

VectorXd to_vector(const nlohmann::json& a) {
  auto v = a.get<std::vector<double>>();
  return Eigen::Map<VectorXd>(v.data(), static_cast<int>(v.size()));
}

}  // namespace

TEST(Codec, RoundTrip) {
  BoundaryMessage m{"B", 17, VectorXd{{1.0123456789012345, -0.25, 3e-17}}};
  EXPECT_EQ(decode_message(encode_message(m)), m);
  EXPECT_EQ(encode_message(m).find('\n'), std::string::npos);
}

TEST(Codec, RejectsExtraOrMissingFields) {
  EXPECT_THROW(decode_message(R"({"region":"A","iteration":1})"), ProtocolError);
  EXPECT_THROW(decode_message(R"({"region":"A","iteration":1,"boundary_values":[1],"load":[2]})"),
               ProtocolError);
  EXPECT_THROW(decode_message(R"({"region":"A","iteration":"x","boundary_values":[1]})"), ProtocolError);
  EXPECT_THROW(decode_message("not json"), ProtocolError);
}

TEST(ConsensusUpdate, MeanExamples) {
  VectorXd v{{0.3, -1.2}};
  EXPECT_EQ(consensus_update({{"A", 1, v}, {"B", 1, v}}), v);
  EXPECT_EQ(consensus_update({{"A", 1, v}, {"B", 1, -v}}), VectorXd::Zero(2));
  EXPECT_DOUBLE_EQ(consensus_update({{"A", 4, VectorXd{{1.0}}}, {"B", 4, VectorXd{{2.0}}}, {"C", 4, VectorXd{{3.0}}}})[0],
                   2.0);
}

TEST(ConsensusUpdate, ArrivalOrderIrrelevant) {
  BoundaryMessage a{"A", 2, VectorXd{{0.1, 0.7, 1e-9}}};
  BoundaryMessage b{"B", 2, VectorXd{{0.2, 0.3, 1.0}}};
  BoundaryMessage c{"C", 2, VectorXd{{0.3, 0.1, -1.0}}};
  EXPECT_EQ(consensus_update({a, b, c}), consensus_update({c, a, b}));
}

TEST(ConsensusUpdate, ProtocolErrors) {
  BoundaryMessage a{"A", 2, VectorXd{{1.0}}};
  BoundaryMessage b{"B", 3, VectorXd{{1.0}}};
  EXPECT_THROW(consensus_update({a, b}), ProtocolError);
  EXPECT_THROW(consensus_update({a}, {"A", "B"}), ProtocolError);
  EXPECT_THROW(consensus_update({a, a}, {"A"}), ProtocolError);
  EXPECT_THROW(consensus_update({}), ProtocolError);
}

TEST(MultiplierUpdate, Examples) {
  VectorXd lambda{{1.5, -2.0}};
  VectorXd z{{1.0, 0.0}};
  EXPECT_EQ(multiplier_update(lambda, z, z, 1e6), lambda);
  EXPECT_DOUBLE_EQ(multiplier_update(VectorXd::Zero(2), VectorXd{{1.5, 0.0}}, z, 2.0)[0], 1.0);
  VectorXd l = lambda;
  const VectorXd r{{0.25, -0.5}};
  for (int k = 0; k < 8; ++k) l = multiplier_update(l, z + r, z, 3.0);
  EXPECT_LT((l - (lambda + 8 * 3.0 * r)).norm(), 1e-12);
  EXPECT_THROW(multiplier_update(lambda, VectorXd::Zero(3), z, 1.0), DimensionError);
}

TEST(Admm, Case14DeterministicNearCentralized) {
  const LoggedRun& run = logged_case14();
  auto [central, raw] = solve_opf(build_standard(run.net));
  ASSERT_TRUE(run.result.state.converged);
  EXPECT_NEAR(run.result.solution.objective_value, central.objective_value, 0.02 * central.objective_value);
}

TEST(Admm, TerminatesOnFirstSmallError) {
  const auto& h = logged_case14().result.state.error_history;
  ASSERT_FALSE(h.empty());
  EXPECT_LT(h.back(), 1e-4);
  for (std::size_t k = 0; k + 1 < h.size(); ++k) EXPECT_GE(h[k], 1e-4) << k;
  EXPECT_EQ(static_cast<int>(h.size()), logged_case14().result.state.iteration);
}

TEST(Admm, MessageLogCarriesOnlyBoundaryValues) {
  const LoggedRun& run = logged_case14();
  const int nc = static_cast<int>(run.part.consensus_buses.size());
  const auto log = lines(run.messages);
  ASSERT_EQ(static_cast<int>(log.size()), 2 * run.result.state.iteration);
  for (const auto& line : log) {
    auto j = nlohmann::json::parse(line);
    ASSERT_TRUE(j.is_object());
    std::set<std::string> keys;
    for (const auto& [k, v] : j.items()) keys.insert(k);
    EXPECT_EQ(keys, (std::set<std::string>{"region", "iteration", "boundary_values"}));
    EXPECT_TRUE(j["region"] == "A" || j["region"] == "B");
    ASSERT_EQ(static_cast<int>(j["boundary_values"].size()), 2 * nc);
    const VectorXd x = to_vector(j["boundary_values"]);
    for (int c = 0; c < nc; ++c) {
      EXPECT_GT(x[c], 0.8);  // voltage magnitudes
      EXPECT_LT(x[c], 1.2);
      EXPECT_LT(std::abs(x[nc + c]), 1.0);  // angles
    }
  }
}

TEST(Admm, ConsensusIsMeanOfLoggedMessages) {
  const LoggedRun& run = logged_case14();
  const auto log = lines(run.messages);
  const auto tele = lines(run.telemetry);
  ASSERT_EQ(tele.size() * 2, log.size());
  for (std::size_t k = 0; k < tele.size(); ++k) {
    const VectorXd a = to_vector(nlohmann::json::parse(log[2 * k])["boundary_values"]);
    const VectorXd b = to_vector(nlohmann::json::parse(log[2 * k + 1])["boundary_values"]);
    const VectorXd z = to_vector(nlohmann::json::parse(tele[k])["z"]);
    EXPECT_LT((z - 0.5 * (a + b)).cwiseAbs().maxCoeff(), 1e-15) << k;
  }
}

TEST(Admm, TelemetryHasRegionTrajectories) {
  const LoggedRun& run = logged_case14();
  const auto tele = lines(run.telemetry);
  ASSERT_EQ(static_cast<int>(tele.size()), run.result.state.iteration);
  for (std::size_t k = 0; k < tele.size(); ++k) {
    auto rec = nlohmann::json::parse(tele[k]);
    EXPECT_EQ(rec["iteration"], static_cast<int>(k) + 1);
    for (const char* region : {"A", "B"}) {
      const auto& r = rec["regions"][region];
      for (const char* field : {"lambda", "boundary", "v", "theta", "p_mw", "q_mvar", "bus_ids"})
        ASSERT_TRUE(r.contains(field) && r[field].is_array()) << region << " " << field;
      EXPECT_EQ(r["v"].size(), r["bus_ids"].size());
      EXPECT_EQ(r["p_mw"].size(), r["generators"].size());
    }
  }
  auto last = nlohmann::json::parse(tele.back());
  EXPECT_LE(last["error"].get<double>(), 10 * 1e-4);
  const VectorXd z = to_vector(last["z"]);
  for (const char* region : {"A", "B"})
    EXPECT_LE((to_vector(last["regions"][region]["boundary"]) - z).norm(), 10 * 1e-4) << region;
}

TEST(Admm, IndependentOfSolveOrder) {
  NetworkCase net = test::load("case14");
  RegionPartition part = test::default_partition(net, "case14");
  AdmmOptions opt = fast_options();
  opt.max_iter = 40;
  opt.parallel = false;
  AdmmResult forward = run_consensus(net, part, std::nullopt, {}, opt);
  opt.reverse_solve_order = true;
  AdmmResult backward = run_consensus(net, part, std::nullopt, {}, opt);
  opt.parallel = true;
  AdmmResult parallel = run_consensus(net, part, std::nullopt, {}, opt);
  EXPECT_NEAR(forward.solution.objective_value, backward.solution.objective_value, 1e-8);
  EXPECT_NEAR(forward.solution.objective_value, parallel.solution.objective_value, 1e-8);
  EXPECT_EQ(forward.state.z, backward.state.z);
}

TEST(Admm, FixedPointStartStopsImmediately) {
  const LoggedRun& run = logged_case14();
  AdmmOptions opt = fast_options();
  opt.initial = run.result.state;
  AdmmResult again = run_consensus(run.net, run.part, std::nullopt, {}, opt);
  EXPECT_TRUE(again.state.converged);
  EXPECT_LE(again.state.iteration, 2);
  for (const auto& [name, lambda] : run.result.state.lambdas)
    EXPECT_LE((again.state.lambdas.at(name) - lambda).norm(), 1e5 * 2 * 1e-4) << name;
}

TEST(Admm, SingleRegionMatchesCentralized) {
  NetworkCase net = test::load("case2");
  RegionPartition part = build_partition(net, RegionAssignment{{"all", {1, 2}}});
  auto [central, raw] = solve_opf(build_standard(net));
  AdmmResult admm = run_consensus(net, part, std::nullopt, {});
  EXPECT_TRUE(admm.state.converged);
  EXPECT_NEAR(admm.solution.objective_value, central.objective_value, 1e-4 * central.objective_value);

  ScenarioSet s = sample_gaussian(net, 8, 0.1, 3);
  ShedPenalty c = ShedPenalty::automatic(net);
  auto [central_s, raw_s] = solve_opf(build_stochastic(net, s, c));
  AdmmResult admm_s = run_consensus(net, part, s, c);
  EXPECT_NEAR(admm_s.solution.objective_value, central_s.objective_value, 1e-4 * central_s.objective_value);
}

TEST(Admm, MaxIterReturnsUnconvergedResult) {
  NetworkCase net = test::load("case14");
  RegionPartition part = test::default_partition(net, "case14");
  AdmmOptions opt;
  opt.max_iter = 3;
  AdmmResult r = run_consensus(net, part, std::nullopt, {}, opt);
  EXPECT_FALSE(r.state.converged);
  EXPECT_EQ(r.state.iteration, 3);
  EXPECT_EQ(r.state.error_history.size(), 3u);
  EXPECT_EQ(r.solution.status, "max_iter");
}

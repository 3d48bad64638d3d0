#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "test_support.hpp"

using namespace dsopf;
using dsopf::test::load;

TEST(ParseCase, Ieee14Counts) {
  NetworkCase net = load("case14");
  EXPECT_EQ(net.buses.size(), 14u);
  EXPECT_EQ(net.branches.size(), 20u);
  EXPECT_EQ(net.generators.size(), 5u);
  EXPECT_EQ(net.buses[net.slack_index()].id, 1);
  EXPECT_NEAR(net.active_loads().sum(), 259.0, 1e-9);
}

TEST(ParseCase, Ieee30Counts) {
  NetworkCase net = load("case30");
  EXPECT_EQ(net.buses.size(), 30u);
  EXPECT_EQ(net.branches.size(), 41u);
  EXPECT_EQ(net.generators.size(), 6u);
  EXPECT_NEAR(net.active_loads().sum(), 189.2, 1e-9);
}

TEST(ParseCase, TwoBus) {
  NetworkCase net = load("case2");
  EXPECT_EQ(net.buses.size(), 2u);
  EXPECT_EQ(net.branches.size(), 1u);
  EXPECT_EQ(net.generators.size(), 1u);
  EXPECT_DOUBLE_EQ(net.generators[0].cost.a, 0.02);
  EXPECT_DOUBLE_EQ(net.buses[0].theta_min, -std::numbers::pi);
}

namespace {

const char* kTiny = R"(function mpc = tiny
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0 0 0 0 1 1 0 135 1 1.1 0.9;
  2 1 10 5 0 0 1 1 0 135 1 1.1 0.9;
];
mpc.gen = [
  1 0 0 50 -50 1 100 1 100 0;
];
mpc.branch = [
  1 2 0.01 0.1 0 0 0 0 0 0 1;
];
mpc.gencost = [
  2 0 0 3 0.01 20 0;
];
)";

std::string replace(std::string s, const std::string& from, const std::string& to) {
  s.replace(s.find(from), from.size(), to);
  return s;
}

}  // namespace

TEST(ParseCase, MalformedRowReportsLine) {
  std::string text = replace(kTiny, "2 1 10 5 0 0 1 1 0 135 1 1.1 0.9;", "2 1 10 abc 0 0 1 1 0 135 1 1.1 0.9;");
  try {
    parse_case(text);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 5);
  }
}

TEST(ParseCase, MissingSlackIsValidationError) {
  EXPECT_THROW(parse_case(replace(kTiny, "1 3 0 0", "1 2 0 0")), ValidationError);
}

TEST(ParseCase, DuplicateBusIsValidationError) {
  EXPECT_THROW(parse_case(replace(kTiny, "  2 1 10 5", "  1 1 10 5")), ValidationError);
}

TEST(ParseCase, CubicCostRejected) {
  EXPECT_THROW(parse_case(replace(kTiny, "2 0 0 3 0.01 20 0;", "2 0 0 4 1 0.01 20 0;")), ParseError);
}

TEST(ParseCase, MissingTableIsParseError) {
  std::string text = kTiny;
  text = text.substr(0, text.find("mpc.gencost"));
  EXPECT_THROW(parse_case(text), ParseError);
}

TEST(ParseCase, RoundTripsThroughWriter) {
  for (const char* name : {"case2", "case14", "case30"}) {
    NetworkCase net = load(name);
    std::ostringstream out;
    write_case(out, net, name);
    EXPECT_EQ(parse_case(out.str()), net) << name;
  }
}

TEST(Admittance, PureReactanceBranch) {
  NetworkCase net = parse_case(replace(kTiny, "1 2 0.01 0.1 0", "1 2 0 0.1 0"));
  AdmittanceMatrix y = build_admittance(net);
  EXPECT_NEAR(y.b(0, 1), 10.0, 1e-12);
  EXPECT_NEAR(y.b(0, 0), -10.0, 1e-12);
  EXPECT_EQ(y.g.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Admittance, NoBranchesGivesZeroMatrix) {
  NetworkCase net = load("case2");
  net.branches.clear();
  AdmittanceMatrix y = build_admittance(net);
  EXPECT_EQ(y.g.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(y.b.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Admittance, ZeroImpedanceBranchThrows) {
  NetworkCase net = load("case2");
  net.branches[0].r = net.branches[0].x = 0.0;
  EXPECT_THROW(build_admittance(net), SingularBranchError);
}

TEST(Admittance, SymmetricForUnitTapsAndZeroShift) {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> u(0.001, 0.5);
  for (const char* name : {"case14", "case30"}) {
    NetworkCase net = load(name);
    for (int trial = 0; trial < 5; ++trial) {
      for (auto& br : net.branches) {
        br.tap = 1.0;
        br.shift = 0.0;
        br.r = u(rng);
        br.x = u(rng);
        br.b_shunt = u(rng);
      }
      AdmittanceMatrix y = build_admittance(net);
      EXPECT_LE((y.g - y.g.transpose()).cwiseAbs().maxCoeff(), 1e-12);
      EXPECT_LE((y.b - y.b.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Partition, Ieee14DefaultSplit) {
  NetworkCase net = load("case14");
  RegionPartition part = build_partition(net, {{"A", {1, 2, 3, 4, 5}}, {"B", {6, 7, 8, 9, 10, 11, 12, 13, 14}}});
  EXPECT_EQ(part.consensus_buses, (std::vector<int>{4, 5, 6, 7, 9}));
  // Independent enumeration of cross-region branches.
  std::set<std::pair<int, int>> expected{{4, 7}, {4, 9}, {5, 6}}, got;
  for (int k : part.tie_lines) {
    const auto& br = net.branches[k];
    got.insert({std::min(br.from_bus, br.to_bus), std::max(br.from_bus, br.to_bus)});
  }
  EXPECT_EQ(got, expected);
  EXPECT_TRUE(part.warnings.empty());
}

TEST(Partition, BundledConfigsCoverAllBuses) {
  for (const char* name : {"case14", "case30"}) {
    NetworkCase net = load(name);
    RegionPartition part = test::default_partition(net, name);
    std::set<int> seen;
    std::size_t total = 0;
    for (const auto& [region, ids] : part.regions) {
      total += ids.size();
      seen.insert(ids.begin(), ids.end());
    }
    EXPECT_EQ(total, net.buses.size());
    EXPECT_EQ(seen.size(), net.buses.size());
    for (int k : part.tie_lines) {
      const auto& br = net.branches[k];
      EXPECT_NE(part.region_of(br.from_bus), part.region_of(br.to_bus));
      EXPECT_TRUE(std::binary_search(part.consensus_buses.begin(), part.consensus_buses.end(), br.from_bus));
      EXPECT_TRUE(std::binary_search(part.consensus_buses.begin(), part.consensus_buses.end(), br.to_bus));
    }
  }
}

TEST(Partition, Ieee30DefaultSplit) {
  NetworkCase net = load("case30");
  RegionPartition part = test::default_partition(net, "case30");
  EXPECT_EQ(part.consensus_buses, (std::vector<int>{4, 6, 9, 10, 12, 27, 28}));
  EXPECT_EQ(part.tie_lines.size(), 4u);
}

TEST(Partition, SingleRegionHasNoTieLines) {
  NetworkCase net = load("case14");
  std::vector<int> all;
  for (const auto& b : net.buses) all.push_back(b.id);
  RegionPartition part = build_partition(net, {{"all", all}});
  EXPECT_TRUE(part.tie_lines.empty());
  EXPECT_TRUE(part.consensus_buses.empty());
}

TEST(Partition, TwoBusSplit) {
  NetworkCase net = load("case2");
  RegionPartition part = build_partition(net, {{"A", {1}}, {"B", {2}}});
  EXPECT_EQ(part.consensus_buses, (std::vector<int>{1, 2}));
  ASSERT_EQ(part.warnings.size(), 1u);  // region B has no generator
}

TEST(Partition, UnassignedBusRejected) {
  NetworkCase net = load("case14");
  EXPECT_THROW(build_partition(net, {{"A", {1, 2, 3}}}), ValidationError);
}

TEST(Partition, DoublyAssignedBusRejected) {
  NetworkCase net = load("case2");
  EXPECT_THROW(build_partition(net, {{"A", {1, 2}}, {"B", {2}}}), ValidationError);
}

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdlib>
#include <iomanip>
#include <istream>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "dsopf/error.hpp"

namespace dsopf {

enum class BusKind { slack, pv, pq };

/// Loads and shunts are in MW/MVar (shunts at V = 1 p.u.), angles in radians.
struct Bus {
  int id = 0;
  BusKind kind = BusKind::pq;
  double p_load = 0.0;
  double q_load = 0.0;
  double g_shunt = 0.0;
  double b_shunt = 0.0;
  double v_min = 0.9;
  double v_max = 1.1;
  double theta_min = -std::numbers::pi;
  double theta_max = std::numbers::pi;

  bool operator==(const Bus&) const = default;
};

/// Quadratic cost a*P^2 + b*P + c with P in MW.
struct GeneratorCost {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;

  double operator()(double p_mw) const { return (a * p_mw + b) * p_mw + c; }
  double derivative(double p_mw) const { return 2.0 * a * p_mw + b; }

  bool operator==(const GeneratorCost&) const = default;
};

struct Generator {
  int bus_id = 0;
  double p_min = 0.0;
  double p_max = 0.0;
  double q_min = 0.0;
  double q_max = 0.0;
  double v_set = 1.0;
  GeneratorCost cost;

  bool operator==(const Generator&) const = default;
};

/// Series impedance and line charging in p.u., shift in radians. A tap of 1
/// means a plain line.
struct Branch {
  int from_bus = 0;
  int to_bus = 0;
  double r = 0.0;
  double x = 0.0;
  double b_shunt = 0.0;
  double tap = 1.0;
  double shift = 0.0;

  bool operator==(const Branch&) const = default;
};

struct NetworkCase {
  double base_mva = 100.0;
  std::vector<Bus> buses;
  std::vector<Generator> generators;
  std::vector<Branch> branches;

  bool operator==(const NetworkCase&) const = default;

  int num_buses() const { return static_cast<int>(buses.size()); }

  /// Bus id -> position in `buses`.
  std::unordered_map<int, int> bus_index_map() const {
    std::unordered_map<int, int> index;
    index.reserve(buses.size());
    for (int i = 0; i < num_buses(); ++i) index.emplace(buses[i].id, i);
    return index;
  }

  int bus_index(int id) const {
    for (int i = 0; i < num_buses(); ++i)
      if (buses[i].id == id) return i;
    throw ValidationError("unknown bus id " + std::to_string(id));
  }

  int slack_index() const {
    for (int i = 0; i < num_buses(); ++i)
      if (buses[i].kind == BusKind::slack) return i;
    throw ValidationError("case has no slack bus");
  }

  /// Generator positions attached to each bus (by bus position).
  std::vector<std::vector<int>> generators_by_bus() const {
    auto index = bus_index_map();
    std::vector<std::vector<int>> out(buses.size());
    for (int g = 0; g < static_cast<int>(generators.size()); ++g)
      out[index.at(generators[g].bus_id)].push_back(g);
    return out;
  }

  Eigen::VectorXd active_loads() const {
    Eigen::VectorXd p(num_buses());
    for (int i = 0; i < num_buses(); ++i) p[i] = buses[i].p_load;
    return p;
  }
};

/// Throws ValidationError on the first broken invariant.
inline void validate(const NetworkCase& net) {
  if (!(net.base_mva > 0.0)) throw ValidationError("baseMVA must be positive");
  std::set<int> ids;
  int slack_count = 0;
  for (const auto& bus : net.buses) {
    if (bus.id <= 0) throw ValidationError("bus id must be positive, got " + std::to_string(bus.id));
    if (!ids.insert(bus.id).second)
      throw ValidationError("duplicate bus id " + std::to_string(bus.id));
    if (bus.v_min > bus.v_max)
      throw ValidationError("bus " + std::to_string(bus.id) + ": v_min > v_max");
    if (bus.theta_min > bus.theta_max)
      throw ValidationError("bus " + std::to_string(bus.id) + ": theta_min > theta_max");
    if (bus.kind == BusKind::slack) ++slack_count;
  }
  if (slack_count == 0) throw ValidationError("case has no slack bus");
  if (slack_count > 1) throw ValidationError("case has more than one slack bus");
  for (const auto& gen : net.generators) {
    if (!ids.contains(gen.bus_id))
      throw ValidationError("generator references unknown bus " + std::to_string(gen.bus_id));
    if (gen.p_min > gen.p_max)
      throw ValidationError("generator at bus " + std::to_string(gen.bus_id) + ": p_min > p_max");
    if (gen.q_min > gen.q_max)
      throw ValidationError("generator at bus " + std::to_string(gen.bus_id) + ": q_min > q_max");
    if (gen.cost.a < 0.0)
      throw ValidationError("generator at bus " + std::to_string(gen.bus_id) +
                            ": negative quadratic cost coefficient");
  }
  for (const auto& br : net.branches) {
    if (!ids.contains(br.from_bus) || !ids.contains(br.to_bus))
      throw ValidationError("branch " + std::to_string(br.from_bus) + "-" +
                            std::to_string(br.to_bus) + " references unknown bus");
    if (br.from_bus == br.to_bus)
      throw ValidationError("branch connects bus " + std::to_string(br.from_bus) + " to itself");
  }
}

namespace detail {

inline std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '\'') quoted = !quoted;
    if (line[i] == '%' && !quoted) return line.substr(0, i);
  }
  return line;
}

inline std::string trim(const std::string& s) {
  auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

struct RawMatrix {
  std::vector<std::vector<double>> rows;
  std::vector<int> lines;
  int start_line = 0;
};

// Parses the numeric rows of a `[ ... ]` block. `body` holds the text after
// the opening bracket; further lines are pulled from `in` until `]`.
inline RawMatrix read_matrix(std::string body, std::istream& in, int& line_no) {
  RawMatrix m;
  m.start_line = line_no;
  std::vector<double> row;
  int row_line = line_no;
  auto flush = [&] {
    if (!row.empty()) {
      m.rows.push_back(std::move(row));
      m.lines.push_back(row_line);
      row.clear();
    }
  };
  bool closed = false;
  while (true) {
    std::string text = strip_comment(body);
    std::size_t pos = 0;
    while (pos < text.size() && !closed) {
      char ch = text[pos];
      if (ch == ']') {
        flush();
        closed = true;
        break;
      }
      if (ch == ';') {
        flush();
        ++pos;
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(ch)) || ch == ',') {
        ++pos;
        continue;
      }
      const char* begin = text.c_str() + pos;
      char* end = nullptr;
      double value = std::strtod(begin, &end);
      if (end == begin) {
        std::size_t stop = text.find_first_of(" \t,;]", pos);
        throw ParseError("invalid number '" + text.substr(pos, stop - pos) + "'", line_no);
      }
      if (row.empty()) row_line = line_no;
      row.push_back(value);
      pos += static_cast<std::size_t>(end - begin);
    }
    if (closed) break;
    // A newline also terminates a row in MATLAB matrix syntax.
    flush();
    if (!std::getline(in, body)) throw ParseError("unterminated matrix", m.start_line);
    ++line_no;
  }
  return m;
}

inline void skip_block(std::string body, char open, char close, std::istream& in, int& line_no) {
  int depth = 0;
  int start = line_no;
  while (true) {
    for (char ch : strip_comment(body)) {
      if (ch == open) ++depth;
      if (ch == close && --depth == 0) return;
    }
    if (!std::getline(in, body)) throw ParseError("unterminated block", start);
    ++line_no;
  }
}

inline void require_columns(const RawMatrix& m, std::size_t min_cols, const char* table) {
  for (std::size_t r = 0; r < m.rows.size(); ++r)
    if (m.rows[r].size() < min_cols)
      throw ParseError(std::string(table) + " row has " + std::to_string(m.rows[r].size()) +
                           " columns, expected at least " + std::to_string(min_cols),
                       m.lines[r]);
}

inline int as_int(double v, int line, const char* what) {
  if (v != std::floor(v)) throw ParseError(std::string(what) + " must be an integer", line);
  return static_cast<int>(v);
}

}  // namespace detail

/// Parses the MATPOWER subset: mpc.baseMVA, mpc.bus, mpc.gen, mpc.branch and
/// mpc.gencost. Other fields are skipped. Out-of-service generators and
/// branches are dropped.
inline NetworkCase parse_case(std::istream& in) {
  using namespace detail;
  std::optional<double> base_mva;
  std::optional<RawMatrix> bus, gen, branch, gencost;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string text = trim(strip_comment(line));
    if (text.rfind("mpc.", 0) != 0) continue;
    auto eq = text.find('=');
    if (eq == std::string::npos) continue;
    std::string name = trim(text.substr(4, eq - 4));
    std::string rhs = trim(text.substr(eq + 1));
    if (name == "baseMVA") {
      char* end = nullptr;
      double v = std::strtod(rhs.c_str(), &end);
      if (end == rhs.c_str()) throw ParseError("invalid baseMVA", line_no);
      base_mva = v;
    } else if (name == "bus" || name == "gen" || name == "branch" || name == "gencost") {
      if (rhs.empty() || rhs.front() != '[')
        throw ParseError("expected '[' after mpc." + name, line_no);
      auto m = read_matrix(rhs.substr(1), in, line_no);
      if (name == "bus") bus = std::move(m);
      else if (name == "gen") gen = std::move(m);
      else if (name == "branch") branch = std::move(m);
      else gencost = std::move(m);
    } else if (!rhs.empty() && rhs.front() == '[') {
      skip_block(rhs, '[', ']', in, line_no);
    } else if (!rhs.empty() && rhs.front() == '{') {
      skip_block(rhs, '{', '}', in, line_no);
    }
  }
  if (!base_mva) throw ParseError("missing mpc.baseMVA", 0);
  if (!bus) throw ParseError("missing mpc.bus", 0);
  if (!gen) throw ParseError("missing mpc.gen", 0);
  if (!branch) throw ParseError("missing mpc.branch", 0);
  if (!gencost) throw ParseError("missing mpc.gencost", 0);
  require_columns(*bus, 13, "bus");
  require_columns(*gen, 10, "gen");
  require_columns(*branch, 11, "branch");
  require_columns(*gencost, 4, "gencost");

  NetworkCase net;
  net.base_mva = *base_mva;
  for (std::size_t r = 0; r < bus->rows.size(); ++r) {
    const auto& row = bus->rows[r];
    int ln = bus->lines[r];
    Bus b;
    b.id = as_int(row[0], ln, "bus id");
    switch (as_int(row[1], ln, "bus type")) {
      case 1: b.kind = BusKind::pq; break;
      case 2: b.kind = BusKind::pv; break;
      case 3: b.kind = BusKind::slack; break;
      default: throw ParseError("unsupported bus type " + std::to_string(int(row[1])), ln);
    }
    b.p_load = row[2];
    b.q_load = row[3];
    b.g_shunt = row[4];
    b.b_shunt = row[5];
    b.v_max = row[11];
    b.v_min = row[12];
    net.buses.push_back(b);
  }
  if (gencost->rows.size() < gen->rows.size())
    throw ParseError("gencost has fewer rows than gen", gencost->start_line);
  for (std::size_t r = 0; r < gen->rows.size(); ++r) {
    const auto& row = gen->rows[r];
    const auto& cost_row = gencost->rows[r];
    int cl = gencost->lines[r];
    if (as_int(cost_row[0], cl, "cost model") != 2)
      throw ParseError("only polynomial gencost (model 2) is supported", cl);
    int n = as_int(cost_row[3], cl, "cost coefficient count");
    if (n > 3) throw ParseError("polynomial cost of degree > 2 is not supported", cl);
    if (n < 0 || cost_row.size() < static_cast<std::size_t>(4 + n))
      throw ParseError("gencost row is missing coefficients", cl);
    if (as_int(row[7], gen->lines[r], "gen status") <= 0) continue;
    Generator g;
    g.bus_id = as_int(row[0], gen->lines[r], "gen bus");
    g.q_max = row[3];
    g.q_min = row[4];
    g.v_set = row[5];
    g.p_max = row[8];
    g.p_min = row[9];
    double coeffs[3] = {0.0, 0.0, 0.0};  // a, b, c
    for (int k = 0; k < n; ++k) coeffs[3 - n + k] = cost_row[4 + k];
    g.cost = {coeffs[0], coeffs[1], coeffs[2]};
    net.generators.push_back(g);
  }
  for (std::size_t r = 0; r < branch->rows.size(); ++r) {
    const auto& row = branch->rows[r];
    int ln = branch->lines[r];
    if (as_int(row[10], ln, "branch status") <= 0) continue;
    Branch br;
    br.from_bus = as_int(row[0], ln, "branch from bus");
    br.to_bus = as_int(row[1], ln, "branch to bus");
    br.r = row[2];
    br.x = row[3];
    br.b_shunt = row[4];
    br.tap = row[8] == 0.0 ? 1.0 : row[8];
    br.shift = row[9] * std::numbers::pi / 180.0;
    net.branches.push_back(br);
  }
  validate(net);
  return net;
}

inline NetworkCase parse_case(const std::string& text) {
  std::istringstream in(text);
  return parse_case(in);
}

/// Writes a MATPOWER case that parse_case reads back to an equal NetworkCase.
inline void write_case(std::ostream& out, const NetworkCase& net, const std::string& name = "case") {
  out << std::setprecision(17);
  out << "function mpc = " << name << "\n\nmpc.version = '2';\n";
  out << "mpc.baseMVA = " << net.base_mva << ";\n\n";
  out << "%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin\n";
  out << "mpc.bus = [\n";
  for (const auto& b : net.buses) {
    int type = b.kind == BusKind::slack ? 3 : b.kind == BusKind::pv ? 2 : 1;
    out << '\t' << b.id << '\t' << type << '\t' << b.p_load << '\t' << b.q_load << '\t'
        << b.g_shunt << '\t' << b.b_shunt << "\t1\t1\t0\t0\t1\t" << b.v_max << '\t' << b.v_min
        << ";\n";
  }
  out << "];\n\n%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin\n";
  out << "mpc.gen = [\n";
  for (const auto& g : net.generators)
    out << '\t' << g.bus_id << "\t0\t0\t" << g.q_max << '\t' << g.q_min << '\t' << g.v_set
        << '\t' << net.base_mva << "\t1\t" << g.p_max << '\t' << g.p_min << ";\n";
  out << "];\n\n%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\n";
  out << "mpc.branch = [\n";
  for (const auto& br : net.branches)
    out << '\t' << br.from_bus << '\t' << br.to_bus << '\t' << br.r << '\t' << br.x << '\t'
        << br.b_shunt << "\t0\t0\t0\t" << br.tap << '\t' << br.shift * 180.0 / std::numbers::pi
        << "\t1;\n";
  out << "];\n\nmpc.gencost = [\n";
  for (const auto& g : net.generators)
    out << "\t2\t0\t0\t3\t" << g.cost.a << '\t' << g.cost.b << '\t' << g.cost.c << ";\n";
  out << "];\n";
}

/// Bus admittance matrix split into conductance and susceptance, p.u.,
/// indexed by bus position.
struct AdmittanceMatrix {
  Eigen::MatrixXd g;
  Eigen::MatrixXd b;

  int size() const { return static_cast<int>(g.rows()); }
};

inline AdmittanceMatrix build_admittance(const NetworkCase& net) {
  using cd = std::complex<double>;
  const int n = net.num_buses();
  Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
  auto index = net.bus_index_map();
  for (int i = 0; i < n; ++i)
    y(i, i) += cd(net.buses[i].g_shunt, net.buses[i].b_shunt) / net.base_mva;
  for (const auto& br : net.branches) {
    if (br.r == 0.0 && br.x == 0.0)
      throw SingularBranchError("branch " + std::to_string(br.from_bus) + "-" +
                                std::to_string(br.to_bus) + " has zero impedance");
    const int f = index.at(br.from_bus);
    const int t = index.at(br.to_bus);
    const cd ys = 1.0 / cd(br.r, br.x);
    const cd tap = std::polar(br.tap, br.shift);
    const cd ytt = ys + cd(0.0, br.b_shunt / 2.0);
    y(f, f) += ytt / std::norm(tap);
    y(t, t) += ytt;
    y(f, t) += -ys / std::conj(tap);
    y(t, f) += -ys / tap;
  }
  return {y.real(), y.imag()};
}

/// Buses grouped into named regions; tie lines are branch positions in the
/// case whose endpoints lie in different regions.
struct RegionPartition {
  std::map<std::string, std::vector<int>> regions;
  std::vector<int> consensus_buses;
  std::vector<int> tie_lines;
  std::vector<std::string> warnings;

  std::vector<std::string> region_names() const {
    std::vector<std::string> names;
    for (const auto& [name, _] : regions) names.push_back(name);
    return names;
  }

  std::string region_of(int bus_id) const {
    for (const auto& [name, ids] : regions)
      if (std::binary_search(ids.begin(), ids.end(), bus_id)) return name;
    throw ValidationError("bus " + std::to_string(bus_id) + " is not in any region");
  }
};

using RegionAssignment = std::map<std::string, std::vector<int>>;

inline RegionPartition build_partition(const NetworkCase& net, const RegionAssignment& spec) {
  RegionPartition part;
  std::map<int, std::string> owner;
  for (const auto& [name, ids] : spec) {
    auto sorted = ids;
    std::sort(sorted.begin(), sorted.end());
    for (int id : sorted) {
      net.bus_index(id);
      auto [it, fresh] = owner.emplace(id, name);
      if (!fresh)
        throw ValidationError("bus " + std::to_string(id) + " assigned to both '" + it->second +
                              "' and '" + name + "'");
    }
    part.regions[name] = std::move(sorted);
  }
  for (const auto& bus : net.buses)
    if (!owner.contains(bus.id))
      throw ValidationError("bus " + std::to_string(bus.id) + " is not assigned to a region");
  std::set<int> consensus;
  for (int k = 0; k < static_cast<int>(net.branches.size()); ++k) {
    const auto& br = net.branches[k];
    if (owner.at(br.from_bus) != owner.at(br.to_bus)) {
      part.tie_lines.push_back(k);
      consensus.insert(br.from_bus);
      consensus.insert(br.to_bus);
    }
  }
  part.consensus_buses.assign(consensus.begin(), consensus.end());
  for (const auto& [name, ids] : part.regions) {
    bool has_gen = std::any_of(net.generators.begin(), net.generators.end(),
                               [&](const Generator& g) { return owner.at(g.bus_id) == name; });
    if (!has_gen)
      part.warnings.push_back("region '" + name + "' has no generator; its subproblem may be infeasible");
  }
  return part;
}

}  // namespace dsopf

#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gridflow/errors.hpp"
#include "gridflow/rng.hpp"

namespace gridflow {

using json = nlohmann::json;

enum class BusKind { slack, pv, pq };

inline std::string to_string(BusKind k) {
  switch (k) {
    case BusKind::slack: return "slack";
    case BusKind::pv: return "pv";
    default: return "pq";
  }
}

struct Bus {
  int id = 0;
  BusKind kind = BusKind::pq;
  double vmin = 0.95;  // p.u.
  double vmax = 1.05;  // p.u.
  double v_set = 1.0;  // p.u., meaningful for slack/pv

  bool operator==(const Bus&) const = default;
};

struct Branch {
  int id = 0;
  int from_bus = 0;
  int to_bus = 0;
  double r = 0.0;  // p.u. series resistance
  double x = 0.0;  // p.u. series reactance
  std::optional<double> rating = {};  // MVA apparent-power limit

  bool operator==(const Branch&) const = default;
};

struct Generator {
  int id = 0;
  int bus = 0;
  double pmin = 0.0;  // MW
  double pmax = 0.0;  // MW
  double qmin = 0.0;  // MVAr
  double qmax = 0.0;  // MVAr
  double cost_c2 = 0.0;  // $/MW^2 h
  double cost_c1 = 0.0;  // $/MWh
  double cost_c0 = 0.0;  // $/h
  double v_set = 1.0;    // p.u.

  /// Production cost at output p MW.
  double cost_at(double p_mw) const { return cost_c2 * p_mw * p_mw + cost_c1 * p_mw + cost_c0; }

  bool operator==(const Generator&) const = default;
};

struct Load {
  int id = 0;
  int bus = 0;
  double p = 0.0;  // MW
  double q = 0.0;  // MVAr

  bool operator==(const Load&) const = default;
};

/// Immutable grid description. Values are stored in the file's natural units
/// (MW / MVAr for powers, p.u. for impedances and voltages); everything that
/// computes converts to per-unit on base_mva through the *_pu helpers, so the
/// only MW surfaces are file I/O and operator-facing dispatch vectors.
struct NetworkCase {
  double base_mva = 100.0;
  std::vector<Bus> buses;
  std::vector<Branch> branches;
  std::vector<Generator> generators;
  std::vector<Load> loads;
  int slack_bus = 0;
  std::string description;

  bool operator==(const NetworkCase&) const = default;

  std::size_t bus_index(int bus_id) const {
    for (std::size_t i = 0; i < buses.size(); ++i)
      if (buses[i].id == bus_id) return i;
    throw ValidationError("unknown bus id " + std::to_string(bus_id));
  }

  std::size_t slack_bus_index() const { return bus_index(slack_bus); }

  /// The slack generator is the first generator listed at the slack bus; it
  /// absorbs the system residual. Every other generator is dispatchable.
  std::size_t slack_generator_index() const {
    for (std::size_t g = 0; g < generators.size(); ++g)
      if (generators[g].bus == slack_bus) return g;
    throw ValidationError("slack bus hosts no generator");
  }

  /// Indices (into generators) of dispatchable units, in listing order.
  std::vector<std::size_t> dispatchable_generators() const {
    const std::size_t slack_g = slack_generator_index();
    std::vector<std::size_t> out;
    out.reserve(generators.size());
    for (std::size_t g = 0; g < generators.size(); ++g)
      if (g != slack_g) out.push_back(g);
    return out;
  }

  double total_load_p() const {
    double s = 0.0;
    for (const auto& l : loads) s += l.p;
    return s;
  }
};

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

namespace detail {

/// BFS connectivity over (buses, branches).
inline bool is_connected(const NetworkCase& c) {
  if (c.buses.empty()) return false;
  std::map<int, std::vector<int>> adj;
  for (const auto& b : c.buses) adj[b.id];
  for (const auto& br : c.branches) {
    adj[br.from_bus].push_back(br.to_bus);
    adj[br.to_bus].push_back(br.from_bus);
  }
  std::set<int> seen{c.buses.front().id};
  std::vector<int> stack{c.buses.front().id};
  while (!stack.empty()) {
    int u = stack.back();
    stack.pop_back();
    for (int v : adj[u])
      if (seen.insert(v).second) stack.push_back(v);
  }
  return seen.size() == c.buses.size();
}

}  // namespace detail

inline void validate_case(const NetworkCase& c) {
  auto fail = [](const std::string& path, const std::string& msg) {
    throw ValidationError(path + ": " + msg);
  };
  if (!(c.base_mva > 0)) fail("base_mva", "must be positive");
  if (c.buses.empty()) fail("buses", "must be nonempty");

  std::set<int> bus_ids;
  int slack_count = 0;
  for (std::size_t i = 0; i < c.buses.size(); ++i) {
    const auto& b = c.buses[i];
    const std::string path = "buses[" + std::to_string(i) + "]";
    if (!bus_ids.insert(b.id).second) fail(path + ".id", "duplicate bus id");
    if (!(b.vmin > 0)) fail(path + ".vmin", "must be positive");
    if (!(b.vmin < b.vmax)) fail(path + ".vmin", "vmin must be below vmax");
    if (b.kind != BusKind::pq && !(b.vmin <= b.v_set && b.v_set <= b.vmax))
      fail(path + ".v_set", "setpoint outside [vmin, vmax]");
    if (b.kind == BusKind::slack) ++slack_count;
  }
  if (slack_count != 1) fail("buses", "exactly one slack bus required");
  if (!bus_ids.count(c.slack_bus)) fail("slack_bus", "references unknown bus");
  {
    const auto& sb = c.buses[c.bus_index(c.slack_bus)];
    if (sb.kind != BusKind::slack) fail("slack_bus", "bus kind is not slack");
  }

  std::set<int> branch_ids;
  for (std::size_t i = 0; i < c.branches.size(); ++i) {
    const auto& br = c.branches[i];
    const std::string path = "branches[" + std::to_string(i) + "]";
    if (!branch_ids.insert(br.id).second) fail(path + ".id", "duplicate branch id");
    if (!bus_ids.count(br.from_bus))
      fail(path + ".from_bus", "branch " + std::to_string(br.id) + " references unknown bus " +
                                   std::to_string(br.from_bus));
    if (!bus_ids.count(br.to_bus))
      fail(path + ".to_bus", "branch " + std::to_string(br.id) + " references unknown bus " +
                                 std::to_string(br.to_bus));
    if (br.from_bus == br.to_bus) fail(path, "from_bus equals to_bus");
    if (br.r < 0) fail(path + ".r", "must be nonnegative");
    if (!(br.x > 0)) fail(path + ".x", "must be positive");
    if (br.rating && !(*br.rating > 0)) fail(path + ".rating", "must be positive when present");
  }

  std::set<int> gen_ids;
  bool slack_has_gen = false;
  for (std::size_t i = 0; i < c.generators.size(); ++i) {
    const auto& g = c.generators[i];
    const std::string path = "generators[" + std::to_string(i) + "]";
    if (!gen_ids.insert(g.id).second) fail(path + ".id", "duplicate generator id");
    if (!bus_ids.count(g.bus)) fail(path + ".bus", "references unknown bus");
    if (!(g.pmin <= g.pmax)) fail(path + ".pmin", "pmin must not exceed pmax");
    if (!(g.qmin <= g.qmax)) fail(path + ".qmin", "qmin must not exceed qmax");
    if (g.cost_c2 < 0) fail(path + ".cost_c2", "must be nonnegative");
    if (g.bus == c.slack_bus) slack_has_gen = true;
    const auto& host = c.buses[c.bus_index(g.bus)];
    if (host.kind == BusKind::pq) fail(path + ".bus", "generator placed on a pq bus");
  }
  if (!slack_has_gen) fail("generators", "slack bus hosts no generator");
  for (std::size_t i = 0; i < c.buses.size(); ++i) {
    if (c.buses[i].kind != BusKind::pv) continue;
    bool has = false;
    for (const auto& g : c.generators) has = has || g.bus == c.buses[i].id;
    if (!has) fail("buses[" + std::to_string(i) + "]", "pv bus hosts no generator");
  }

  std::set<int> load_ids;
  for (std::size_t i = 0; i < c.loads.size(); ++i) {
    const auto& l = c.loads[i];
    const std::string path = "loads[" + std::to_string(i) + "]";
    if (!load_ids.insert(l.id).second) fail(path + ".id", "duplicate load id");
    if (!bus_ids.count(l.bus)) fail(path + ".bus", "references unknown bus");
    if (l.p < 0) fail(path + ".p", "must be nonnegative");
  }

  if (!detail::is_connected(c)) fail("branches", "grid is not connected");
}

// ---------------------------------------------------------------------------
// JSON I/O. Schema: top-level keys base_mva, buses[], branches[], generators[],
// loads[], slack_bus (plus an optional free-text description). Powers are
// MW / MVAr in the file.
// ---------------------------------------------------------------------------

inline NetworkCase case_from_json(const json& j) {
  NetworkCase c;
  try {
    c.base_mva = j.at("base_mva").get<double>();
    c.slack_bus = j.at("slack_bus").get<int>();
    if (j.contains("description")) c.description = j.at("description").get<std::string>();
    for (const auto& bj : j.at("buses")) {
      Bus b;
      b.id = bj.at("id").get<int>();
      const std::string kind = bj.at("kind").get<std::string>();
      if (kind == "slack")
        b.kind = BusKind::slack;
      else if (kind == "pv")
        b.kind = BusKind::pv;
      else if (kind == "pq")
        b.kind = BusKind::pq;
      else
        throw ParseError("bus " + std::to_string(b.id) + ": unknown kind '" + kind + "'");
      b.vmin = bj.at("vmin").get<double>();
      b.vmax = bj.at("vmax").get<double>();
      b.v_set = bj.value("v_set", 1.0);
      c.buses.push_back(b);
    }
    for (const auto& rj : j.at("branches")) {
      Branch br;
      br.id = rj.at("id").get<int>();
      br.from_bus = rj.at("from_bus").get<int>();
      br.to_bus = rj.at("to_bus").get<int>();
      br.r = rj.at("r").get<double>();
      br.x = rj.at("x").get<double>();
      if (rj.contains("rating") && !rj.at("rating").is_null())
        br.rating = rj.at("rating").get<double>();
      c.branches.push_back(br);
    }
    for (const auto& gj : j.at("generators")) {
      Generator g;
      g.id = gj.at("id").get<int>();
      g.bus = gj.at("bus").get<int>();
      g.pmin = gj.at("pmin").get<double>();
      g.pmax = gj.at("pmax").get<double>();
      g.qmin = gj.at("qmin").get<double>();
      g.qmax = gj.at("qmax").get<double>();
      g.cost_c2 = gj.at("cost_c2").get<double>();
      g.cost_c1 = gj.at("cost_c1").get<double>();
      g.cost_c0 = gj.at("cost_c0").get<double>();
      g.v_set = gj.value("v_set", 1.0);
      c.generators.push_back(g);
    }
    for (const auto& lj : j.at("loads")) {
      Load l;
      l.id = lj.at("id").get<int>();
      l.bus = lj.at("bus").get<int>();
      l.p = lj.at("p").get<double>();
      l.q = lj.at("q").get<double>();
      c.loads.push_back(l);
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("case schema: ") + e.what());
  }
  validate_case(c);
  return c;
}

/// Parse and validate a case from a JSON byte stream.
inline NetworkCase load_case(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what());
  }
  return case_from_json(j);
}

inline NetworkCase load_case_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open case file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return load_case(ss.str());
}

inline json case_to_json(const NetworkCase& c) {
  json j;
  j["base_mva"] = c.base_mva;
  j["slack_bus"] = c.slack_bus;
  if (!c.description.empty()) j["description"] = c.description;
  j["buses"] = json::array();
  for (const auto& b : c.buses)
    j["buses"].push_back({{"id", b.id},
                          {"kind", to_string(b.kind)},
                          {"vmin", b.vmin},
                          {"vmax", b.vmax},
                          {"v_set", b.v_set}});
  j["branches"] = json::array();
  for (const auto& br : c.branches) {
    json rj = {{"id", br.id}, {"from_bus", br.from_bus}, {"to_bus", br.to_bus},
               {"r", br.r},   {"x", br.x}};
    rj["rating"] = br.rating ? json(*br.rating) : json(nullptr);
    j["branches"].push_back(rj);
  }
  j["generators"] = json::array();
  for (const auto& g : c.generators)
    j["generators"].push_back({{"id", g.id},
                               {"bus", g.bus},
                               {"pmin", g.pmin},
                               {"pmax", g.pmax},
                               {"qmin", g.qmin},
                               {"qmax", g.qmax},
                               {"cost_c2", g.cost_c2},
                               {"cost_c1", g.cost_c1},
                               {"cost_c0", g.cost_c0},
                               {"v_set", g.v_set}});
  j["loads"] = json::array();
  for (const auto& l : c.loads)
    j["loads"].push_back({{"id", l.id}, {"bus", l.bus}, {"p", l.p}, {"q", l.q}});
  return j;
}

inline std::string serialize_case(const NetworkCase& c) { return case_to_json(c).dump(2); }

// ---------------------------------------------------------------------------
// Perturbations. All pure: the input case is untouched, the result revalidated.
// Deterministic for a fixed seed.
// ---------------------------------------------------------------------------

/// Multiply each load's P and Q by an independent uniform factor from
/// [1 - lower, 1 + upper]. One factor per load, applied to both components.
inline NetworkCase scale_loads(const NetworkCase& c, double lower, double upper,
                               std::uint64_t seed) {
  if (!(lower >= 0.0 && lower < 1.0)) throw PreconditionError("scale_loads: need 0 <= lower < 1");
  if (!(upper >= 0.0)) throw PreconditionError("scale_loads: need upper >= 0");
  NetworkCase out = c;
  Rng rng(seed);
  for (auto& l : out.loads) {
    const double f = rng.uniform(1.0 - lower, 1.0 + upper);
    l.p *= f;
    l.q *= f;
  }
  validate_case(out);
  return out;
}

/// Delete n distinct loads chosen uniformly at random.
inline NetworkCase remove_loads(const NetworkCase& c, std::size_t n, std::uint64_t seed) {
  if (n > c.loads.size()) throw PreconditionError("remove_loads: n exceeds load count");
  NetworkCase out = c;
  Rng rng(seed);
  std::vector<std::size_t> idx(c.loads.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  rng.shuffle(idx);
  std::set<std::size_t> drop(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n));
  out.loads.clear();
  for (std::size_t i = 0; i < c.loads.size(); ++i)
    if (!drop.count(i)) out.loads.push_back(c.loads[i]);
  validate_case(out);
  return out;
}

/// Delete n branches chosen uniformly among subsets that keep the grid
/// connected. Rejection-samples up to 1000 subsets, then gives up.
inline NetworkCase remove_branches(const NetworkCase& c, std::size_t n, std::uint64_t seed) {
  if (n > c.branches.size()) throw PreconditionError("remove_branches: n exceeds branch count");
  Rng rng(seed);
  std::vector<std::size_t> idx(c.branches.size());
  for (int attempt = 0; attempt < 1000; ++attempt) {
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    rng.shuffle(idx);
    std::set<std::size_t> drop(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n));
    NetworkCase out = c;
    out.branches.clear();
    for (std::size_t i = 0; i < c.branches.size(); ++i)
      if (!drop.count(i)) out.branches.push_back(c.branches[i]);
    if (detail::is_connected(out)) {
      validate_case(out);
      return out;
    }
  }
  throw DisconnectionError("remove_branches: no connectivity-preserving subset of size " +
                           std::to_string(n) + " found in 1000 tries");
}

}  // namespace gridflow

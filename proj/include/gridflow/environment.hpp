#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "json.hpp"

#include "gridflow/ac_power_flow.hpp"
#include "gridflow/errors.hpp"
#include "gridflow/gnn_policy.hpp"
#include "gridflow/grid_model.hpp"

namespace gridflow {

struct RewardConstants {
  double cte1 = -1.0;  // action on a generator already at pmax
  double cte2 = -2.0;  // action leading to an infeasible solution
};

struct EnvConfig {
  std::size_t horizon = 125;  // T, steps per episode
  std::size_t portions = 50;  // N, action step = (pmax - pmin) / N
  bool rollback_on_infeasible = true;
  bool include_slack_cost = true;
  RewardConstants rewards{};
  PfOptions pf{};
};

/// Immutable snapshot of the MDP. step() returns a new state; nothing is
/// mutated in place, so concurrent episodes only need separate states.
struct EnvState {
  NetworkCase net;
  std::vector<double> dispatch;  // MW per dispatchable generator
  GraphState graph;
  bool feasible = false;
  double cost = 0.0;  // $/h at this state
  std::size_t t = 0;
  std::size_t pf_solves = 0;  // cumulative since reset, performance contract
};

struct StepInfo {
  std::size_t t = 0;  // index of the action taken (pre-step)
  std::size_t action = 0;
  double reward = 0.0;
  int branch = 0;  // 1 = at pmax, 2 = infeasible, 3 = cost delta
  double cost = 0.0;
  bool feasible = false;
  double max_mismatch = 0.0;
};

inline nlohmann::json step_info_to_json(const StepInfo& s) {
  return {{"t", s.t},         {"action", s.action},     {"reward", s.reward},
          {"branch", s.branch}, {"cost", s.cost},       {"feasible", s.feasible},
          {"max_mismatch", s.max_mismatch}};
}

// ---------------------------------------------------------------------------
// Cost model
// ---------------------------------------------------------------------------

/// Quadratic cost of the dispatchable setpoints plus, when enabled, the slack
/// generator priced at its power-flow-resolved output. Without the slack term
/// the agent would never see the cost of the power it displaces.
inline double dispatch_cost(const NetworkCase& c, const std::vector<double>& dispatch_mw,
                            double slack_p_pu, bool include_slack = true) {
  const auto disp = c.dispatchable_generators();
  if (dispatch_mw.size() != disp.size())
    throw PreconditionError("dispatch_cost: dispatch length does not match generators");
  double cost = 0.0;
  for (std::size_t k = 0; k < disp.size(); ++k)
    cost += c.generators[disp[k]].cost_at(dispatch_mw[k]);
  if (include_slack)
    cost += c.generators[c.slack_generator_index()].cost_at(slack_p_pu * c.base_mva);
  return cost;
}

struct CostBounds {
  double lo = 0.0;  // every generator at pmin
  double hi = 0.0;  // every generator at pmax
};

inline CostBounds cost_bounds(const NetworkCase& c, bool include_slack = true) {
  CostBounds b;
  const std::size_t slack = c.slack_generator_index();
  for (std::size_t k = 0; k < c.generators.size(); ++k) {
    if (k == slack && !include_slack) continue;
    b.lo += c.generators[k].cost_at(c.generators[k].pmin);
    b.hi += c.generators[k].cost_at(c.generators[k].pmax);
  }
  return b;
}

/// Min-max scaling of a cost into [0,1] against the case's dispatch range.
inline double scaled_cost(double cost, const NetworkCase& c, bool include_slack = true) {
  const CostBounds b = cost_bounds(c, include_slack);
  const double range = b.hi - b.lo;
  if (!(range > 1e-12 * std::max(1.0, std::abs(b.hi))))
    throw DegenerateRangeError("cost range is degenerate: min " + std::to_string(b.lo) +
                               ", max " + std::to_string(b.hi));
  return (cost - b.lo) / range;
}

// ---------------------------------------------------------------------------
// Graph features
// ---------------------------------------------------------------------------

namespace detail {

inline double scale01(double v, double lo, double hi) {
  if (!(hi - lo > 1e-12)) return 0.5;  // degenerate range, no information
  return std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
}

/// Per-case feature bounds, fixed so the encoding of a bus does not drift
/// between states of the same episode.
struct FeatureScaling {
  double p_lo = 0.0, p_hi = 0.0;  // p.u. net injection extrema over buses
  double q_lo = 0.0, q_hi = 0.0;
  double r_lo = 0.0, r_hi = 0.0;
  double x_lo = 0.0, x_hi = 0.0;
};

inline FeatureScaling feature_scaling(const NetworkCase& c) {
  FeatureScaling fs;
  bool first = true;
  for (std::size_t i = 0; i < c.buses.size(); ++i) {
    double pmin = 0.0, pmax = 0.0, qmin = 0.0, qmax = 0.0;
    for (const auto& g : c.generators)
      if (g.bus == c.buses[i].id) {
        pmin += g.pmin;
        pmax += g.pmax;
        qmin += g.qmin;
        qmax += g.qmax;
      }
    for (const auto& l : c.loads)
      if (l.bus == c.buses[i].id) {
        pmin -= l.p;
        pmax -= l.p;
        qmin -= l.q;
        qmax -= l.q;
      }
    pmin /= c.base_mva;
    pmax /= c.base_mva;
    qmin /= c.base_mva;
    qmax /= c.base_mva;
    if (first) {
      fs.p_lo = pmin;
      fs.p_hi = pmax;
      fs.q_lo = qmin;
      fs.q_hi = qmax;
      first = false;
    } else {
      fs.p_lo = std::min(fs.p_lo, pmin);
      fs.p_hi = std::max(fs.p_hi, pmax);
      fs.q_lo = std::min(fs.q_lo, qmin);
      fs.q_hi = std::max(fs.q_hi, qmax);
    }
  }
  fs.r_lo = fs.r_hi = c.branches.front().r;
  fs.x_lo = fs.x_hi = c.branches.front().x;
  for (const auto& br : c.branches) {
    fs.r_lo = std::min(fs.r_lo, br.r);
    fs.r_hi = std::max(fs.r_hi, br.r);
    fs.x_lo = std::min(fs.x_lo, br.x);
    fs.x_hi = std::max(fs.x_hi, br.x);
  }
  return fs;
}

}  // namespace detail

/// Bus-graph encoding of a solved state: per node [V, theta, P, Q], per edge
/// [R, X], everything min-max scaled into [0,1] with per-case bounds (V by
/// the bus voltage band, theta by [-pi/2, pi/2], injections and impedances by
/// case-wide extrema; values outside their band clamp to the edge).
inline GraphState build_graph_state(const PfSolution& sol, const NetworkCase& c) {
  if (!sol.converged) throw PreconditionError("build_graph_state: solution not converged");
  const detail::FeatureScaling fs = detail::feature_scaling(c);
  constexpr double kHalfPi = 1.5707963267948966;

  GraphState g;
  g.node_features.reserve(c.buses.size());
  for (std::size_t i = 0; i < c.buses.size(); ++i) {
    Tensor f({4});
    f[0] = detail::scale01(sol.v[i], c.buses[i].vmin, c.buses[i].vmax);
    f[1] = detail::scale01(sol.theta[i], -kHalfPi, kHalfPi);
    f[2] = detail::scale01(sol.p_net[i], fs.p_lo, fs.p_hi);
    f[3] = detail::scale01(sol.q_net[i], fs.q_lo, fs.q_hi);
    g.node_features.push_back(std::move(f));
  }
  for (const auto& br : c.branches) {
    g.edges.emplace_back(c.bus_index(br.from_bus), c.bus_index(br.to_bus));
    g.edge_features.push_back(Tensor::vec({detail::scale01(br.r, fs.r_lo, fs.r_hi),
                                           detail::scale01(br.x, fs.x_lo, fs.x_hi)}));
  }
  for (std::size_t k : c.dispatchable_generators())
    g.generator_nodes.push_back(c.bus_index(c.generators[k].bus));
  return g;
}

// ---------------------------------------------------------------------------
// MDP
// ---------------------------------------------------------------------------

namespace detail {

inline bool state_feasible(const NetworkCase& c, const PfSolution& sol) {
  if (!sol.converged) return false;
  return check_feasibility(sol, c).feasible;
}

}  // namespace detail

/// Initial state: every dispatchable generator at pmin + 20% of its range.
/// Starting at bare pmin risks an unsolvable grid; the one-fifth offset is
/// applied to the range so that pmin = 0 still moves the setpoint.
inline EnvState env_reset(const NetworkCase& c, const EnvConfig& cfg = {}) {
  EnvState s;
  s.net = c;
  for (std::size_t k : c.dispatchable_generators()) {
    const auto& g = c.generators[k];
    s.dispatch.push_back(g.pmin + 0.2 * (g.pmax - g.pmin));
  }
  const PfSolution sol = solve_pf(c, s.dispatch, cfg.pf);
  s.pf_solves = 1;
  if (!sol.converged)
    throw InitInfeasibleError("initial power flow diverged for case: " + c.description);
  s.graph = build_graph_state(sol, c);
  s.feasible = detail::state_feasible(c, sol);
  s.cost = dispatch_cost(c, s.dispatch, sol.slack_p, cfg.include_slack_cost);
  s.t = 0;
  return s;
}

struct StepResult {
  EnvState state;
  double reward = 0.0;
  StepInfo info;
};

/// One action: raise generator `action` by one portion of its range.
/// Branch 1: the generator is already at pmax; nothing is solved, the grid
/// stays as it is, reward cte1. Branch 2: the raised dispatch has no feasible
/// solution; reward cte2 and (by default) the state rolls back to the
/// pre-action dispatch. With rollback disabled the new dispatch is kept; its
/// solution is adopted when the flow converged, otherwise the previous graph
/// and cost carry over. Branch 3: reward is the drop in min-max-scaled cost.
inline StepResult env_step(const EnvState& s, std::size_t action, const EnvConfig& cfg = {}) {
  const auto disp = s.net.dispatchable_generators();
  if (action >= disp.size())
    throw IndexError("action " + std::to_string(action) + " out of range, " +
                     std::to_string(disp.size()) + " dispatchable generators");
  if (s.t >= cfg.horizon) throw PreconditionError("episode horizon exhausted");

  StepResult r;
  r.info.t = s.t;
  r.info.action = action;
  const auto& gen = s.net.generators[disp[action]];

  if (s.dispatch[action] >= gen.pmax) {
    r.state = s;
    r.state.t = s.t + 1;
    r.reward = cfg.rewards.cte1;
    r.info.branch = 1;
    r.info.cost = s.cost;
    r.info.feasible = s.feasible;
    r.info.reward = r.reward;
    return r;
  }

  std::vector<double> next = s.dispatch;
  next[action] = std::min(next[action] + (gen.pmax - gen.pmin) / cfg.portions, gen.pmax);

  const PfSolution sol = solve_pf(s.net, next, cfg.pf);
  const bool ok = detail::state_feasible(s.net, sol);

  if (!ok) {
    r.reward = cfg.rewards.cte2;
    r.info.branch = 2;
    r.info.feasible = false;
    r.info.max_mismatch = sol.max_mismatch;
    if (cfg.rollback_on_infeasible) {
      r.state = s;
    } else {
      r.state = s;
      r.state.dispatch = next;
      r.state.feasible = false;
      if (sol.converged) {
        r.state.graph = build_graph_state(sol, s.net);
        r.state.cost = dispatch_cost(s.net, next, sol.slack_p, cfg.include_slack_cost);
      }
    }
    r.state.t = s.t + 1;
    r.state.pf_solves = s.pf_solves + 1;
    r.info.cost = r.state.cost;
    r.info.reward = r.reward;
    return r;
  }

  r.state.net = s.net;
  r.state.dispatch = std::move(next);
  r.state.graph = build_graph_state(sol, s.net);
  r.state.feasible = true;
  r.state.cost = dispatch_cost(s.net, r.state.dispatch, sol.slack_p, cfg.include_slack_cost);
  r.state.t = s.t + 1;
  r.state.pf_solves = s.pf_solves + 1;
  r.reward = scaled_cost(s.cost, s.net, cfg.include_slack_cost) -
             scaled_cost(r.state.cost, s.net, cfg.include_slack_cost);
  r.info.branch = 3;
  r.info.cost = r.state.cost;
  r.info.feasible = true;
  r.info.max_mismatch = sol.max_mismatch;
  r.info.reward = r.reward;
  return r;
}

}  // namespace gridflow

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "gridflow/ac_power_flow.hpp"
#include "gridflow/errors.hpp"
#include "gridflow/grid_model.hpp"
#include "gridflow/simplex.hpp"

namespace gridflow {

struct DispatchSolution {
  enum class Status { optimal, infeasible };
  Status status = Status::infeasible;
  std::vector<double> p;      // MW per generator, case order (slack included)
  std::vector<double> theta;  // radians per bus, slack pinned to 0
  double objective = 0.0;     // piecewise-linearized cost, $/h
  std::string note;           // diagnostic when not optimal
};

/// Lossless DC optimal power flow. Quadratic generator costs are linearized
/// with `segments` equal-width pieces over [pmin, pmax]; convexity makes the
/// LP fill the pieces in order, so no integer machinery is needed. Constraints:
/// nodal balance B'theta = injections, theta = 0 at the slack bus, and
/// |flow| <= rating on branches that declare one.
inline DispatchSolution solve_dcopf(const NetworkCase& c, int segments = 20) {
  if (segments < 1) throw PreconditionError("solve_dcopf: segments must be >= 1");
  const std::size_t n_bus = c.buses.size();
  const std::size_t n_gen = c.generators.size();
  const std::size_t S = static_cast<std::size_t>(segments);
  const double base = c.base_mva;
  const std::size_t slack = c.slack_bus_index();

  std::vector<std::size_t> rated;
  for (std::size_t k = 0; k < c.branches.size(); ++k)
    if (c.branches[k].rating) rated.push_back(k);

  // Variable layout: generator segments, then non-slack angles, then one
  // range slack per rated branch.
  const std::size_t n_seg = n_gen * S;
  std::vector<std::size_t> ang_col(n_bus, SIZE_MAX);
  std::size_t next = n_seg;
  for (std::size_t i = 0; i < n_bus; ++i)
    if (i != slack) ang_col[i] = next++;
  const std::size_t rate_col0 = next;
  next += rated.size();

  LpProblem lp(n_bus + rated.size(), next);

  double constant_cost = 0.0;
  for (std::size_t g = 0; g < n_gen; ++g) {
    const auto& gen = c.generators[g];
    constant_cost += gen.cost_at(gen.pmin);
    const double w = (gen.pmax - gen.pmin) / static_cast<double>(S);
    for (std::size_t s = 0; s < S; ++s) {
      const std::size_t col = g * S + s;
      const double a = gen.pmin + w * static_cast<double>(s);
      const double b = a + w;
      lp.lo[col] = 0.0;
      lp.hi[col] = w;
      // Secant slope of the quadratic over [a, b]; derivative at a when w = 0.
      lp.c[col] = w > 0 ? gen.cost_c2 * (a + b) + gen.cost_c1
                        : 2.0 * gen.cost_c2 * a + gen.cost_c1;
    }
  }
  for (std::size_t i = 0; i < n_bus; ++i) {
    if (i == slack) continue;
    lp.lo[ang_col[i]] = -50.0;
    lp.hi[ang_col[i]] = 50.0;
  }
  for (std::size_t r = 0; r < rated.size(); ++r) {
    lp.lo[rate_col0 + r] = 0.0;
    lp.hi[rate_col0 + r] = 2.0 * *c.branches[rated[r]].rating;
  }

  // Nodal balance rows: sum of local segment fills minus base * B' theta
  // equals load minus the local pmin total.
  for (std::size_t g = 0; g < n_gen; ++g) {
    const std::size_t bus = c.bus_index(c.generators[g].bus);
    for (std::size_t s = 0; s < S; ++s) lp.at(bus, g * S + s) = 1.0;
    lp.b[bus] -= c.generators[g].pmin;
  }
  for (const auto& l : c.loads) lp.b[c.bus_index(l.bus)] += l.p;
  for (const auto& br : c.branches) {
    const std::size_t i = c.bus_index(br.from_bus);
    const std::size_t j = c.bus_index(br.to_bus);
    const double w = base / br.x;
    if (i != slack) {
      lp.at(i, ang_col[i]) -= w;
      lp.at(j, ang_col[i]) += w;
    }
    if (j != slack) {
      lp.at(i, ang_col[j]) += w;
      lp.at(j, ang_col[j]) -= w;
    }
  }

  // Rated-branch rows: flow + s = rating with s in [0, 2 rating].
  for (std::size_t r = 0; r < rated.size(); ++r) {
    const auto& br = c.branches[rated[r]];
    const std::size_t row = n_bus + r;
    const std::size_t i = c.bus_index(br.from_bus);
    const std::size_t j = c.bus_index(br.to_bus);
    const double w = base / br.x;
    if (i != slack) lp.at(row, ang_col[i]) += w;
    if (j != slack) lp.at(row, ang_col[j]) -= w;
    lp.at(row, rate_col0 + r) = 1.0;
    lp.b[row] = *br.rating;
  }

  const LpSolution ls = solve_lp(lp);
  DispatchSolution out;
  if (ls.status != LpStatus::optimal) {
    out.status = DispatchSolution::Status::infeasible;
    switch (ls.status) {
      case LpStatus::infeasible: out.note = "LP infeasible"; break;
      case LpStatus::unbounded: out.note = "LP unbounded"; break;
      default: out.note = "LP did not converge"; break;
    }
    return out;
  }
  out.status = DispatchSolution::Status::optimal;
  out.objective = ls.objective + constant_cost;
  out.p.resize(n_gen);
  for (std::size_t g = 0; g < n_gen; ++g) {
    double pg = c.generators[g].pmin;
    for (std::size_t s = 0; s < S; ++s) pg += ls.x[g * S + s];
    out.p[g] = pg;
  }
  out.theta.assign(n_bus, 0.0);
  for (std::size_t i = 0; i < n_bus; ++i)
    if (i != slack) out.theta[i] = ls.x[ang_col[i]];
  return out;
}

/// Per-branch MW flows implied by the DC angles, case branch order.
inline std::vector<double> dc_flows(const NetworkCase& c, const DispatchSolution& sol) {
  if (sol.status != DispatchSolution::Status::optimal)
    throw PreconditionError("dc_flows: solution is not optimal");
  std::vector<double> out;
  out.reserve(c.branches.size());
  for (const auto& br : c.branches) {
    const std::size_t i = c.bus_index(br.from_bus);
    const std::size_t j = c.bus_index(br.to_bus);
    out.push_back((sol.theta[i] - sol.theta[j]) / br.x * c.base_mva);
  }
  return out;
}

enum class DcEvalMode { lp, quad, ac };

inline DcEvalMode dc_eval_mode_from_string(const std::string& s) {
  if (s == "lp") return DcEvalMode::lp;
  if (s == "quad") return DcEvalMode::quad;
  if (s == "ac") return DcEvalMode::ac;
  throw ValidationError("unknown dc-eval mode '" + s + "' (expected lp, quad, or ac)");
}

struct DcEvalCost {
  double cost = 0.0;
  bool pf_converged = true;  // meaningful only for the ac mode
};

/// Re-price a DC-OPF dispatch. `lp` reports the piecewise objective, `quad`
/// the true quadratic cost at the LP dispatch, and `ac` runs an AC power flow
/// with the dispatchable setpoints so the slack unit absorbs losses before
/// pricing (falls back to quad pricing when that flow diverges).
inline DcEvalCost dc_eval_cost(const NetworkCase& c, const DispatchSolution& sol,
                               DcEvalMode mode) {
  if (sol.status != DispatchSolution::Status::optimal)
    throw PreconditionError("dc_eval_cost: solution is not optimal");
  DcEvalCost out;
  if (mode == DcEvalMode::lp) {
    out.cost = sol.objective;
    return out;
  }
  auto quad_total = [&] {
    double t = 0.0;
    for (std::size_t g = 0; g < c.generators.size(); ++g)
      t += c.generators[g].cost_at(sol.p[g]);
    return t;
  };
  if (mode == DcEvalMode::quad) {
    out.cost = quad_total();
    return out;
  }
  const auto disp_idx = c.dispatchable_generators();
  std::vector<double> dispatch;
  dispatch.reserve(disp_idx.size());
  for (auto g : disp_idx) dispatch.push_back(sol.p[g]);
  const PfSolution pf = solve_pf(c, dispatch);
  if (!pf.converged) {
    out.pf_converged = false;
    out.cost = quad_total();
    return out;
  }
  double t = c.generators[c.slack_generator_index()].cost_at(pf.slack_p * c.base_mva);
  for (std::size_t k = 0; k < disp_idx.size(); ++k)
    t += c.generators[disp_idx[k]].cost_at(dispatch[k]);
  out.cost = t;
  return out;
}

}  // namespace gridflow

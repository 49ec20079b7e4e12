#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <string>
#include <vector>

#include "gridflow/errors.hpp"
#include "gridflow/grid_model.hpp"
#include "gridflow/linalg.hpp"

namespace gridflow {

/// Dense complex nodal admittance matrix. Sign convention (asserted in tests):
/// Y[i][j] = -(sum of series admittances of branches i-j), so a single branch
/// r=0, x=0.1 gives Y[0][1] = +j10, and Y[i][i] = -sum of the row's
/// off-diagonals (no shunt elements exist in this model).
struct AdmittanceMatrix {
  std::size_t n = 0;
  std::vector<std::complex<double>> y;  // row-major, n*n

  std::complex<double>& at(std::size_t i, std::size_t j) { return y[i * n + j]; }
  const std::complex<double>& at(std::size_t i, std::size_t j) const { return y[i * n + j]; }
};

inline AdmittanceMatrix build_admittance(const NetworkCase& c) {
  AdmittanceMatrix Y;
  Y.n = c.buses.size();
  Y.y.assign(Y.n * Y.n, {0.0, 0.0});
  for (const auto& br : c.branches) {
    const std::size_t i = c.bus_index(br.from_bus);
    const std::size_t j = c.bus_index(br.to_bus);
    const std::complex<double> ys = 1.0 / std::complex<double>(br.r, br.x);
    Y.at(i, j) -= ys;
    Y.at(j, i) -= ys;
    Y.at(i, i) += ys;
    Y.at(j, j) += ys;
  }
  return Y;
}

struct PfOptions {
  double tolerance = 1e-8;  // p.u. max mismatch
  int max_iterations = 30;
  /// PV->PQ switching when generator reactive limits bind. Off by default.
  bool enforce_q_limits = false;
};

/// Converged AC operating point. All electrical quantities in p.u. on the
/// case's base_mva; angles in radians. Bus order matches the case.
struct PfSolution {
  std::vector<double> v;
  std::vector<double> theta;
  std::vector<double> p_net;  // net injection (generation - load) per bus
  std::vector<double> q_net;
  double slack_p = 0.0;  // slack generator output, p.u.
  double slack_q = 0.0;
  bool converged = false;
  int iterations = 0;
  double max_mismatch = 0.0;
  bool dispatch_clamped = false;  // any setpoint pulled back into [pmin, pmax]
};

struct BranchFlow {
  int branch_id = 0;
  double p_from = 0.0, q_from = 0.0;  // p.u. flowing out of from_bus
  double p_to = 0.0, q_to = 0.0;      // p.u. flowing out of to_bus
  double p_loss = 0.0, q_loss = 0.0;

  double s_from() const { return std::hypot(p_from, q_from); }
  double s_to() const { return std::hypot(p_to, q_to); }
};

/// Per-branch complex flows at a solved operating point.
inline std::vector<BranchFlow> branch_flows(const NetworkCase& c, const PfSolution& sol) {
  std::vector<BranchFlow> out;
  out.reserve(c.branches.size());
  for (const auto& br : c.branches) {
    const std::size_t i = c.bus_index(br.from_bus);
    const std::size_t j = c.bus_index(br.to_bus);
    const std::complex<double> vi = std::polar(sol.v[i], sol.theta[i]);
    const std::complex<double> vj = std::polar(sol.v[j], sol.theta[j]);
    const std::complex<double> ys = 1.0 / std::complex<double>(br.r, br.x);
    const std::complex<double> s_f = vi * std::conj(ys * (vi - vj));
    const std::complex<double> s_t = vj * std::conj(ys * (vj - vi));
    BranchFlow f;
    f.branch_id = br.id;
    f.p_from = s_f.real();
    f.q_from = s_f.imag();
    f.p_to = s_t.real();
    f.q_to = s_t.imag();
    f.p_loss = f.p_from + f.p_to;
    f.q_loss = f.q_from + f.q_to;
    out.push_back(f);
  }
  return out;
}

/// Total series real-power loss, p.u.
inline double total_loss_p(const NetworkCase& c, const PfSolution& sol) {
  double s = 0.0;
  for (const auto& f : branch_flows(c, sol)) s += f.p_loss;
  return s;
}

namespace detail {

enum class PfBusType { slack, pv, pq };

}  // namespace detail

/// Newton-Raphson power flow on the polar mismatch equations, flat start.
///
/// `dispatch_mw` holds one MW setpoint per dispatchable generator, in
/// NetworkCase::dispatchable_generators() order. Setpoints outside
/// [pmin, pmax] are clamped and flagged. PV buses hold their v_set and
/// scheduled P; the slack bus holds v_set and theta = 0, and its first-listed
/// generator absorbs the residual P and Q. Raising any dispatchable setpoint
/// therefore displaces slack generation one-for-one plus the loss delta,
/// which is the entire economic signal the environment exposes.
///
/// Never throws on numerical failure: divergence, a singular Jacobian, and a
/// non-finite state all return converged = false.
inline PfSolution solve_pf(const NetworkCase& c, const std::vector<double>& dispatch_mw,
                           const PfOptions& opt = {}) {
  const auto disp_idx = c.dispatchable_generators();
  if (dispatch_mw.size() != disp_idx.size())
    throw PreconditionError("solve_pf: dispatch has " + std::to_string(dispatch_mw.size()) +
                            " entries, case has " + std::to_string(disp_idx.size()) +
                            " dispatchable generators");

  const std::size_t n = c.buses.size();
  const double base = c.base_mva;
  const AdmittanceMatrix Y = build_admittance(c);

  PfSolution sol;
  sol.v.assign(n, 1.0);
  sol.theta.assign(n, 0.0);
  sol.p_net.assign(n, 0.0);
  sol.q_net.assign(n, 0.0);

  // Scheduled injections, p.u.
  std::vector<double> p_spec(n, 0.0), q_spec(n, 0.0);
  for (const auto& l : c.loads) {
    const std::size_t i = c.bus_index(l.bus);
    p_spec[i] -= l.p / base;
    q_spec[i] -= l.q / base;
  }
  for (std::size_t k = 0; k < disp_idx.size(); ++k) {
    const auto& g = c.generators[disp_idx[k]];
    double p = dispatch_mw[k];
    if (p < g.pmin || p > g.pmax) {
      p = std::clamp(p, g.pmin, g.pmax);
      sol.dispatch_clamped = true;
    }
    p_spec[c.bus_index(g.bus)] += p / base;
  }

  std::vector<detail::PfBusType> type(n);
  const std::size_t slack = c.slack_bus_index();
  for (std::size_t i = 0; i < n; ++i) {
    switch (c.buses[i].kind) {
      case BusKind::slack: type[i] = detail::PfBusType::slack; break;
      case BusKind::pv: type[i] = detail::PfBusType::pv; break;
      default: type[i] = detail::PfBusType::pq; break;
    }
    if (type[i] != detail::PfBusType::pq) sol.v[i] = c.buses[i].v_set;
  }

  // Aggregate reactive limits per PV bus for optional PV->PQ switching.
  std::vector<double> qmin_bus(n, 0.0), qmax_bus(n, 0.0);
  for (const auto& g : c.generators) {
    const std::size_t i = c.bus_index(g.bus);
    qmin_bus[i] += g.qmin / base;
    qmax_bus[i] += g.qmax / base;
  }

  auto calc_injections = [&](std::vector<double>& p, std::vector<double>& q) {
    for (std::size_t i = 0; i < n; ++i) {
      double pi = 0.0, qi = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const auto& yij = Y.at(i, j);
        const double th = sol.theta[i] - sol.theta[j];
        const double c_ = std::cos(th), s_ = std::sin(th);
        pi += sol.v[j] * (yij.real() * c_ + yij.imag() * s_);
        qi += sol.v[j] * (yij.real() * s_ - yij.imag() * c_);
      }
      p[i] = sol.v[i] * pi;
      q[i] = sol.v[i] * qi;
    }
  };

  std::vector<double> p_calc(n, 0.0), q_calc(n, 0.0);

  auto run_newton = [&]() -> bool {
    sol.converged = false;
    // Unknown ordering: theta for every non-slack bus, then V for every PQ bus.
    std::vector<std::size_t> ang_buses, mag_buses;
    for (std::size_t i = 0; i < n; ++i)
      if (type[i] != detail::PfBusType::slack) ang_buses.push_back(i);
    for (std::size_t i = 0; i < n; ++i)
      if (type[i] == detail::PfBusType::pq) mag_buses.push_back(i);
    const std::size_t na = ang_buses.size(), nm = mag_buses.size(), m = na + nm;

    for (int it = 0; it <= opt.max_iterations; ++it) {
      calc_injections(p_calc, q_calc);
      double worst = 0.0;
      bool finite = true;
      std::vector<double> rhs(m, 0.0);
      for (std::size_t a = 0; a < na; ++a) {
        rhs[a] = p_spec[ang_buses[a]] - p_calc[ang_buses[a]];
        finite = finite && std::isfinite(rhs[a]);
        worst = std::max(worst, std::abs(rhs[a]));
      }
      for (std::size_t b = 0; b < nm; ++b) {
        rhs[na + b] = q_spec[mag_buses[b]] - q_calc[mag_buses[b]];
        finite = finite && std::isfinite(rhs[na + b]);
        worst = std::max(worst, std::abs(rhs[b + na]));
      }
      sol.max_mismatch = worst;
      if (!finite) return false;
      if (worst < opt.tolerance) {
        sol.converged = true;
        return true;
      }
      if (it == opt.max_iterations) return false;

      // Jacobian blocks dP/dtheta, dP/dV, dQ/dtheta, dQ/dV.
      Matrix J(m, m);
      for (std::size_t a = 0; a < na; ++a) {
        const std::size_t i = ang_buses[a];
        for (std::size_t b = 0; b < na; ++b) {
          const std::size_t j = ang_buses[b];
          const auto& yij = Y.at(i, j);
          if (i == j) {
            J.at(a, b) = -q_calc[i] - yij.imag() * sol.v[i] * sol.v[i];
          } else {
            const double th = sol.theta[i] - sol.theta[j];
            J.at(a, b) =
                sol.v[i] * sol.v[j] * (yij.real() * std::sin(th) - yij.imag() * std::cos(th));
          }
        }
        for (std::size_t b = 0; b < nm; ++b) {
          const std::size_t j = mag_buses[b];
          const auto& yij = Y.at(i, j);
          if (i == j) {
            J.at(a, na + b) = p_calc[i] / sol.v[i] + yij.real() * sol.v[i];
          } else {
            const double th = sol.theta[i] - sol.theta[j];
            J.at(a, na + b) =
                sol.v[i] * (yij.real() * std::cos(th) + yij.imag() * std::sin(th));
          }
        }
      }
      for (std::size_t a = 0; a < nm; ++a) {
        const std::size_t i = mag_buses[a];
        for (std::size_t b = 0; b < na; ++b) {
          const std::size_t j = ang_buses[b];
          const auto& yij = Y.at(i, j);
          if (i == j) {
            J.at(na + a, b) = p_calc[i] - yij.real() * sol.v[i] * sol.v[i];
          } else {
            const double th = sol.theta[i] - sol.theta[j];
            J.at(na + a, b) =
                -sol.v[i] * sol.v[j] * (yij.real() * std::cos(th) + yij.imag() * std::sin(th));
          }
        }
        for (std::size_t b = 0; b < nm; ++b) {
          const std::size_t j = mag_buses[b];
          const auto& yij = Y.at(i, j);
          if (i == j) {
            J.at(na + a, na + b) = q_calc[i] / sol.v[i] - yij.imag() * sol.v[i];
          } else {
            const double th = sol.theta[i] - sol.theta[j];
            J.at(na + a, na + b) =
                sol.v[i] * (yij.real() * std::sin(th) - yij.imag() * std::cos(th));
          }
        }
      }

      if (!lu_solve(J, rhs)) return false;  // singular Jacobian
      for (std::size_t a = 0; a < na; ++a) sol.theta[ang_buses[a]] += rhs[a];
      for (std::size_t b = 0; b < nm; ++b) sol.v[mag_buses[b]] += rhs[na + b];
      sol.iterations = it + 1;
    }
    return false;
  };

  bool ok = run_newton();

  if (ok && opt.enforce_q_limits) {
    // A violated PV bus is pinned at the offending limit and re-solved as PQ.
    for (int round = 0; round < 8 && ok; ++round) {
      calc_injections(p_calc, q_calc);
      bool switched = false;
      for (std::size_t i = 0; i < n; ++i) {
        if (type[i] != detail::PfBusType::pv) continue;
        double q_gen = q_calc[i];
        for (const auto& l : c.loads)
          if (c.bus_index(l.bus) == i) q_gen += l.q / base;
        double pinned = q_gen;
        if (q_gen > qmax_bus[i])
          pinned = qmax_bus[i];
        else if (q_gen < qmin_bus[i])
          pinned = qmin_bus[i];
        else
          continue;
        type[i] = detail::PfBusType::pq;
        q_spec[i] = pinned;
        for (const auto& l : c.loads)
          if (c.bus_index(l.bus) == i) q_spec[i] -= l.q / base;
        switched = true;
      }
      if (!switched) break;
      ok = run_newton();
    }
  }

  calc_injections(sol.p_net, sol.q_net);
  sol.theta[slack] = 0.0;  // exact by construction

  // Slack generator output: bus injection plus local load, minus co-located
  // dispatchable units. All residual reactive power is booked to it.
  double other_gen_at_slack = 0.0;
  for (std::size_t k = 0; k < disp_idx.size(); ++k) {
    const auto& g = c.generators[disp_idx[k]];
    if (c.bus_index(g.bus) == slack)
      other_gen_at_slack += std::clamp(dispatch_mw[k], g.pmin, g.pmax) / base;
  }
  double load_p_slack = 0.0, load_q_slack = 0.0;
  for (const auto& l : c.loads) {
    if (c.bus_index(l.bus) == slack) {
      load_p_slack += l.p / base;
      load_q_slack += l.q / base;
    }
  }
  sol.slack_p = sol.p_net[slack] + load_p_slack - other_gen_at_slack;
  sol.slack_q = sol.q_net[slack] + load_q_slack;
  return sol;
}

struct FeasibilityOptions {
  bool check_convergence = true;
  bool check_voltage = true;
  bool check_slack_limits = true;
  bool check_ratings = true;
};

struct FeasibilityReport {
  bool feasible = true;
  std::vector<std::string> violations;
};

/// Screen a solved operating point against the case's limits. Each check can
/// be disabled individually to probe which constraint binds.
inline FeasibilityReport check_feasibility(const PfSolution& sol, const NetworkCase& c,
                                           const FeasibilityOptions& opt = {}) {
  FeasibilityReport rep;
  auto flag = [&rep](const std::string& msg) {
    rep.feasible = false;
    rep.violations.push_back(msg);
  };

  if (opt.check_convergence && !sol.converged) {
    flag("diverged: power flow did not converge (max mismatch " +
         std::to_string(sol.max_mismatch) + " p.u.)");
    return rep;  // remaining checks are meaningless without a solution
  }
  if (opt.check_voltage) {
    for (std::size_t i = 0; i < c.buses.size(); ++i) {
      const auto& b = c.buses[i];
      if (sol.v[i] < b.vmin || sol.v[i] > b.vmax)
        flag("bus " + std::to_string(b.id) + ": V=" + std::to_string(sol.v[i]) +
             " p.u. outside [" + std::to_string(b.vmin) + ", " + std::to_string(b.vmax) + "]");
    }
  }
  if (opt.check_slack_limits) {
    const auto& g = c.generators[c.slack_generator_index()];
    const double p_mw = sol.slack_p * c.base_mva;
    if (p_mw < g.pmin || p_mw > g.pmax)
      flag("slack generator " + std::to_string(g.id) + ": P=" + std::to_string(p_mw) +
           " MW outside [" + std::to_string(g.pmin) + ", " + std::to_string(g.pmax) + "]");
  }
  if (opt.check_ratings) {
    const auto flows = branch_flows(c, sol);
    for (std::size_t k = 0; k < c.branches.size(); ++k) {
      const auto& br = c.branches[k];
      if (!br.rating) continue;
      const double s_mva = std::max(flows[k].s_from(), flows[k].s_to()) * c.base_mva;
      if (s_mva > *br.rating)
        flag("branch " + std::to_string(br.id) + ": flow " + std::to_string(s_mva) +
             " MVA exceeds rating " + std::to_string(*br.rating));
    }
  }
  return rep;
}

}  // namespace gridflow

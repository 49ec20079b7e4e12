#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "gridflow/errors.hpp"
#include "gridflow/linalg.hpp"

namespace gridflow {

/// Linear program in computational form:
///   minimize c.x  subject to  A x = b,  lo <= x <= hi.
/// All bounds must be finite; model genuinely free variables with wide bounds.
struct LpProblem {
  std::size_t rows = 0, cols = 0;
  std::vector<double> a;  // row-major rows x cols
  std::vector<double> b;
  std::vector<double> c;
  std::vector<double> lo, hi;

  LpProblem() = default;
  LpProblem(std::size_t m, std::size_t n)
      : rows(m), cols(n), a(m * n, 0.0), b(m, 0.0), c(n, 0.0), lo(n, 0.0), hi(n, 0.0) {}

  double& at(std::size_t i, std::size_t j) { return a[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return a[i * cols + j]; }
};

enum class LpStatus { optimal, infeasible, unbounded, iteration_limit };

struct LpSolution {
  LpStatus status = LpStatus::infeasible;
  std::vector<double> x;
  double objective = 0.0;
  int iterations = 0;
};

namespace detail {

/// Bounded-variable primal simplex over an explicit column set. Nonbasic
/// variables rest on one of their bounds; a pivot either swaps a column into
/// the basis or flips a variable across to its other bound.
class BoundedSimplex {
 public:
  BoundedSimplex(std::size_t m, std::size_t n, std::vector<double> cols,
                 std::vector<double> b, std::vector<double> lo, std::vector<double> hi)
      : m_(m), n_(n), col_(std::move(cols)), b_(std::move(b)), lo_(std::move(lo)),
        hi_(std::move(hi)), x_(n, 0.0), in_basis_(n, false), at_upper_(n, false) {}

  // column-major access: entry (i, j)
  double a(std::size_t i, std::size_t j) const { return col_[j * m_ + i]; }

  void set_basis(std::vector<std::size_t> basis) {
    basis_ = std::move(basis);
    for (std::size_t j = 0; j < n_; ++j) in_basis_[j] = false;
    for (auto j : basis_) in_basis_[j] = true;
  }

  std::vector<double>& x() { return x_; }
  std::vector<bool>& at_upper() { return at_upper_; }
  const std::vector<std::size_t>& basis() const { return basis_; }

  /// Recompute basic values from the nonbasic assignment. Returns false on a
  /// singular basis.
  bool refresh_basics() {
    std::vector<double> rhs = b_;
    for (std::size_t j = 0; j < n_; ++j) {
      if (in_basis_[j]) continue;
      x_[j] = at_upper_[j] ? hi_[j] : lo_[j];
      for (std::size_t i = 0; i < m_; ++i) rhs[i] -= a(i, j) * x_[j];
    }
    if (m_ == 0) return true;
    Matrix B(m_, m_);
    for (std::size_t k = 0; k < m_; ++k)
      for (std::size_t i = 0; i < m_; ++i) B.at(i, k) = a(i, basis_[k]);
    if (!lu_solve(B, rhs)) return false;
    for (std::size_t k = 0; k < m_; ++k) x_[basis_[k]] = rhs[k];
    return true;
  }

  /// Run the simplex loop against `cost`; assumes the current point is
  /// primal-feasible. Dantzig pricing with a Bland fallback against cycling.
  LpStatus optimize(const std::vector<double>& cost, int max_iter, int& iter_count) {
    const double dtol = 1e-9;
    for (int it = 0; it < max_iter; ++it, ++iter_count) {
      const bool bland = it > 3000;

      // Duals y solve B^T y = c_B; reduced cost d_j = c_j - y.A_j.
      std::vector<double> y(m_, 0.0);
      if (m_ > 0) {
        Matrix Bt(m_, m_);
        for (std::size_t k = 0; k < m_; ++k)
          for (std::size_t i = 0; i < m_; ++i) Bt.at(k, i) = a(i, basis_[k]);
        std::vector<double> cb(m_);
        for (std::size_t k = 0; k < m_; ++k) cb[k] = cost[basis_[k]];
        if (!lu_solve(Bt, cb)) return LpStatus::iteration_limit;  // degenerate basis
        y = cb;
      }

      std::size_t enter = n_;
      double best = dtol;
      for (std::size_t j = 0; j < n_; ++j) {
        if (in_basis_[j] || hi_[j] - lo_[j] <= 0.0) continue;
        double d = cost[j];
        for (std::size_t i = 0; i < m_; ++i) d -= y[i] * a(i, j);
        const double viol = at_upper_[j] ? d : -d;  // profitable move direction
        if (viol > best) {
          best = viol;
          enter = j;
          if (bland) break;
        }
      }
      if (enter == n_) return LpStatus::optimal;

      // Direction of basic variables as the entering one moves by +t from lo
      // (sigma=+1) or -t from hi (sigma=-1): x_B -= sigma * t * u, B u = A_e.
      const double sigma = at_upper_[enter] ? -1.0 : 1.0;
      std::vector<double> u(m_);
      if (m_ > 0) {
        Matrix B(m_, m_);
        for (std::size_t k = 0; k < m_; ++k)
          for (std::size_t i = 0; i < m_; ++i) B.at(i, k) = a(i, basis_[k]);
        for (std::size_t i = 0; i < m_; ++i) u[i] = a(i, enter);
        if (!lu_solve(B, u)) return LpStatus::iteration_limit;
      }

      double t_max = hi_[enter] - lo_[enter];  // full traverse = bound flip
      std::size_t leave = m_;                  // m_ means "flip, no basis change"
      double leave_pivot = 0.0;
      bool leave_to_upper = false;
      for (std::size_t k = 0; k < m_; ++k) {
        const double coeff = -sigma * u[k];  // d(x_Bk)/dt
        const std::size_t jb = basis_[k];
        double limit;
        bool to_upper;
        if (coeff > 1e-11) {
          limit = (hi_[jb] - x_[jb]) / coeff;
          to_upper = true;
        } else if (coeff < -1e-11) {
          limit = (lo_[jb] - x_[jb]) / coeff;
          to_upper = false;
        } else {
          continue;
        }
        if (limit < -1e-9) limit = 0.0;  // numerical guard on degenerate points
        if (limit < t_max - 1e-12 ||
            (limit < t_max + 1e-12 && std::abs(coeff) > std::abs(leave_pivot))) {
          t_max = std::max(limit, 0.0);
          leave = k;
          leave_pivot = coeff;
          leave_to_upper = to_upper;
        }
      }
      if (!std::isfinite(t_max)) return LpStatus::unbounded;

      const double t = t_max;
      for (std::size_t k = 0; k < m_; ++k) x_[basis_[k]] -= sigma * t * u[k];
      if (leave == m_) {
        at_upper_[enter] = !at_upper_[enter];
        x_[enter] = at_upper_[enter] ? hi_[enter] : lo_[enter];
      } else {
        const std::size_t jb = basis_[leave];
        x_[jb] = leave_to_upper ? hi_[jb] : lo_[jb];
        at_upper_[jb] = leave_to_upper;
        in_basis_[jb] = false;
        x_[enter] = (sigma > 0 ? lo_[enter] : hi_[enter]) + sigma * t;
        in_basis_[enter] = true;
        basis_[leave] = enter;
      }
    }
    return LpStatus::iteration_limit;
  }

 private:
  std::size_t m_, n_;
  std::vector<double> col_;  // column-major m x n
  std::vector<double> b_, lo_, hi_;
  std::vector<double> x_;
  std::vector<std::size_t> basis_;
  std::vector<bool> in_basis_, at_upper_;
};

}  // namespace detail

/// Two-phase bounded-variable simplex. Phase 1 drives artificial variables to
/// zero from an all-at-lower-bound start; phase 2 optimizes the true cost with
/// the artificials pinned at zero.
inline LpSolution solve_lp(const LpProblem& p, int max_iter = 20000) {
  const std::size_t m = p.rows, n0 = p.cols;
  if (p.b.size() != m || p.c.size() != n0 || p.lo.size() != n0 || p.hi.size() != n0 ||
      p.a.size() != m * n0)
    throw ShapeError("solve_lp: inconsistent problem dimensions");
  for (std::size_t j = 0; j < n0; ++j) {
    if (!(std::isfinite(p.lo[j]) && std::isfinite(p.hi[j])))
      throw PreconditionError("solve_lp: all variable bounds must be finite");
    if (p.lo[j] > p.hi[j]) throw PreconditionError("solve_lp: lo > hi on a variable");
  }

  const std::size_t n = n0 + m;  // artificials appended
  std::vector<double> cols(n * m, 0.0);
  for (std::size_t j = 0; j < n0; ++j)
    for (std::size_t i = 0; i < m; ++i) cols[j * m + i] = p.at(i, j);

  // Residual with every structural variable at its lower bound decides the
  // artificial column signs, so each artificial starts feasible at |r|.
  std::vector<double> resid = p.b;
  for (std::size_t j = 0; j < n0; ++j)
    for (std::size_t i = 0; i < m; ++i) resid[i] -= p.at(i, j) * p.lo[j];

  std::vector<double> lo(n, 0.0), hi(n, 0.0);
  for (std::size_t j = 0; j < n0; ++j) {
    lo[j] = p.lo[j];
    hi[j] = p.hi[j];
  }
  std::vector<std::size_t> basis(m);
  for (std::size_t i = 0; i < m; ++i) {
    cols[(n0 + i) * m + i] = resid[i] >= 0 ? 1.0 : -1.0;
    lo[n0 + i] = 0.0;
    hi[n0 + i] = std::abs(resid[i]) + 1.0;
    basis[i] = n0 + i;
  }

  detail::BoundedSimplex spx(m, n, std::move(cols), p.b, std::move(lo), std::move(hi));
  spx.set_basis(basis);
  if (!spx.refresh_basics()) {
    LpSolution bad;
    bad.status = LpStatus::iteration_limit;
    return bad;
  }

  LpSolution out;
  std::vector<double> phase1_cost(n, 0.0);
  for (std::size_t i = 0; i < m; ++i) phase1_cost[n0 + i] = 1.0;
  LpStatus st = spx.optimize(phase1_cost, max_iter, out.iterations);
  if (st != LpStatus::optimal) {
    out.status = st;
    return out;
  }
  double infeas = 0.0;
  for (std::size_t i = 0; i < m; ++i) infeas += spx.x()[n0 + i];
  if (infeas > 1e-7) {
    out.status = LpStatus::infeasible;
    return out;
  }

  // Pin artificials to zero for phase 2; basic ones sit harmlessly at 0.
  detail::BoundedSimplex spx2(m, n, [&] {
    std::vector<double> cs(n * m, 0.0);
    for (std::size_t j = 0; j < n0; ++j)
      for (std::size_t i = 0; i < m; ++i) cs[j * m + i] = p.at(i, j);
    for (std::size_t i = 0; i < m; ++i) cs[(n0 + i) * m + i] = resid[i] >= 0 ? 1.0 : -1.0;
    return cs;
  }(), p.b, [&] {
    std::vector<double> l(n, 0.0);
    for (std::size_t j = 0; j < n0; ++j) l[j] = p.lo[j];
    return l;
  }(), [&] {
    std::vector<double> h(n, 0.0);
    for (std::size_t j = 0; j < n0; ++j) h[j] = p.hi[j];
    return h;
  }());
  spx2.set_basis(std::vector<std::size_t>(spx.basis().begin(), spx.basis().end()));
  spx2.x() = spx.x();
  spx2.at_upper() = spx.at_upper();

  std::vector<double> phase2_cost(n, 0.0);
  for (std::size_t j = 0; j < n0; ++j) phase2_cost[j] = p.c[j];
  st = spx2.optimize(phase2_cost, max_iter, out.iterations);
  if (st != LpStatus::optimal) {
    out.status = st;
    return out;
  }
  if (!spx2.refresh_basics()) {
    out.status = LpStatus::iteration_limit;
    return out;
  }

  out.status = LpStatus::optimal;
  out.x.assign(spx2.x().begin(), spx2.x().begin() + static_cast<std::ptrdiff_t>(n0));
  out.objective = 0.0;
  for (std::size_t j = 0; j < n0; ++j) out.objective += p.c[j] * out.x[j];
  return out;
}

}  // namespace gridflow

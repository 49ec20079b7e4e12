#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "gridflow/rng.hpp"
#include "gridflow/simplex.hpp"

using namespace gridflow;

namespace {

// Brute-force LP oracle: enumerate every choice of basis columns and every
// lower/upper assignment of the remaining variables, keep the best feasible
// point. Exponential, fine for tiny fixtures.
struct BruteResult {
  bool feasible = false;
  double objective = 0.0;
};

BruteResult brute_force_lp(const LpProblem& p) {
  const std::size_t m = p.rows, n = p.cols;
  BruteResult best;
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;

  std::vector<std::size_t> basis;
  auto consider = [&](const std::vector<std::size_t>& bset) {
    std::vector<bool> in_b(n, false);
    for (auto j : bset) in_b[j] = true;
    std::vector<std::size_t> nb;
    for (std::size_t j = 0; j < n; ++j)
      if (!in_b[j]) nb.push_back(j);
    const std::size_t k = nb.size();
    for (std::size_t mask = 0; mask < (1u << k); ++mask) {
      std::vector<double> x(n, 0.0);
      for (std::size_t t = 0; t < k; ++t)
        x[nb[t]] = (mask >> t) & 1 ? p.hi[nb[t]] : p.lo[nb[t]];
      std::vector<double> rhs = p.b;
      for (std::size_t t = 0; t < k; ++t)
        for (std::size_t i = 0; i < m; ++i) rhs[i] -= p.at(i, nb[t]) * x[nb[t]];
      Matrix B(m, m);
      for (std::size_t col = 0; col < bset.size(); ++col)
        for (std::size_t i = 0; i < m; ++i) B.at(i, col) = p.at(i, bset[col]);
      if (m > 0 && !lu_solve(B, rhs)) continue;
      bool ok = true;
      for (std::size_t col = 0; col < bset.size(); ++col) {
        x[bset[col]] = rhs[col];
        ok = ok && rhs[col] >= p.lo[bset[col]] - 1e-9 && rhs[col] <= p.hi[bset[col]] + 1e-9;
      }
      if (!ok) continue;
      double obj = 0.0;
      for (std::size_t j = 0; j < n; ++j) obj += p.c[j] * x[j];
      if (!best.feasible || obj < best.objective) {
        best.feasible = true;
        best.objective = obj;
      }
    }
  };

  // all m-subsets of columns
  std::vector<std::size_t> comb(m);
  auto rec = [&](auto&& self, std::size_t start, std::size_t depth) -> void {
    if (depth == m) {
      consider(comb);
      return;
    }
    for (std::size_t j = start; j < n; ++j) {
      comb[depth] = j;
      self(self, j + 1, depth + 1);
    }
  };
  if (m == 0)
    consider({});
  else
    rec(rec, 0, 0);
  return best;
}

}  // namespace

TEST_CASE("simplex solves a hand-checked two-variable program") {
  // min -2x - y  s.t.  x + y + s = 1,  all in [0, 1]: optimum x=1, y=0.
  LpProblem p(1, 3);
  p.at(0, 0) = 1;
  p.at(0, 1) = 1;
  p.at(0, 2) = 1;
  p.b = {1.0};
  p.c = {-2.0, -1.0, 0.0};
  p.lo = {0, 0, 0};
  p.hi = {1, 1, 1};
  const LpSolution s = solve_lp(p);
  REQUIRE(s.status == LpStatus::optimal);
  CHECK(s.objective == Catch::Approx(-2.0).margin(1e-9));
  CHECK(s.x[0] == Catch::Approx(1.0).margin(1e-9));
  CHECK(s.x[1] == Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("simplex detects infeasibility") {
  // x + y = 5 with x, y in [0, 1].
  LpProblem p(1, 2);
  p.at(0, 0) = 1;
  p.at(0, 1) = 1;
  p.b = {5.0};
  p.c = {1.0, 1.0};
  p.lo = {0, 0};
  p.hi = {1, 1};
  CHECK(solve_lp(p).status == LpStatus::infeasible);
}

TEST_CASE("simplex handles a rowless problem by bound selection") {
  LpProblem p(0, 2);
  p.c = {-1.0, 2.0};
  p.lo = {0, -3};
  p.hi = {5, 4};
  const LpSolution s = solve_lp(p);
  REQUIRE(s.status == LpStatus::optimal);
  CHECK(s.x[0] == Catch::Approx(5.0));
  CHECK(s.x[1] == Catch::Approx(-3.0));
  CHECK(s.objective == Catch::Approx(-11.0));
}

TEST_CASE("simplex respects equality-pinned variables") {
  // Degenerate bounds lo = hi freeze a variable.
  LpProblem p(1, 2);
  p.at(0, 0) = 1;
  p.at(0, 1) = 1;
  p.b = {3.0};
  p.c = {10.0, 1.0};
  p.lo = {2, 0};
  p.hi = {2, 10};
  const LpSolution s = solve_lp(p);
  REQUIRE(s.status == LpStatus::optimal);
  CHECK(s.x[0] == Catch::Approx(2.0));
  CHECK(s.x[1] == Catch::Approx(1.0));
}

TEST_CASE("simplex rejects malformed problems") {
  LpProblem p(1, 2);
  p.b = {1.0};
  p.c = {1.0, 1.0};
  p.lo = {0, 0};
  p.hi = {1, std::numeric_limits<double>::infinity()};
  CHECK_THROWS_AS(solve_lp(p), PreconditionError);
  p.hi = {1, -1};
  CHECK_THROWS_AS(solve_lp(p), PreconditionError);
  LpProblem q(1, 2);
  q.c.pop_back();
  CHECK_THROWS_AS(solve_lp(q), ShapeError);
}

namespace {

// Vertex enumeration only sees basic solutions through nonsingular bases, so
// the oracle comparison needs full row rank.
bool full_row_rank(const LpProblem& p) {
  if (p.rows == 1) {
    for (std::size_t j = 0; j < p.cols; ++j)
      if (p.at(0, j) != 0.0) return true;
    return false;
  }
  if (p.rows == 2) {
    for (std::size_t j = 0; j < p.cols; ++j)
      for (std::size_t k = j + 1; k < p.cols; ++k)
        if (std::abs(p.at(0, j) * p.at(1, k) - p.at(0, k) * p.at(1, j)) > 1e-9) return true;
    return false;
  }
  return true;
}

}  // namespace

TEST_CASE("simplex handles rank-deficient but consistent rows") {
  // Duplicate balance row: x + y = 2 stated twice; min x with x,y in [0,2].
  LpProblem p(2, 2);
  p.at(0, 0) = 1;
  p.at(0, 1) = 1;
  p.at(1, 0) = 1;
  p.at(1, 1) = 1;
  p.b = {2.0, 2.0};
  p.c = {1.0, 0.0};
  p.lo = {0, 0};
  p.hi = {2, 2};
  const LpSolution s = solve_lp(p);
  REQUIRE(s.status == LpStatus::optimal);
  CHECK(s.objective == Catch::Approx(0.0).margin(1e-9));
  CHECK(s.x[1] == Catch::Approx(2.0).margin(1e-9));

  // Inconsistent duplicate is still infeasible.
  p.b = {2.0, 1.0};
  CHECK(solve_lp(p).status == LpStatus::infeasible);
}

TEST_CASE("simplex matches brute-force enumeration on random programs") {
  Rng rng(314);
  int optimal_seen = 0;
  for (int trial = 0; trial < 120; ++trial) {
    const std::size_t m = 1 + rng.uniform_index(2);  // 1..2 rows
    const std::size_t n = m + 1 + rng.uniform_index(4 - 1);  // up to 5 cols
    LpProblem p(m, n);
    do {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) p.at(i, j) = std::round(rng.uniform(-3.0, 3.0));
    } while (!full_row_rank(p));
    for (std::size_t j = 0; j < n; ++j) {
      p.c[j] = std::round(rng.uniform(-5.0, 5.0));
      p.lo[j] = std::round(rng.uniform(-2.0, 0.0));
      p.hi[j] = p.lo[j] + std::round(rng.uniform(0.0, 4.0));
    }
    for (std::size_t i = 0; i < m; ++i) p.b[i] = std::round(rng.uniform(-3.0, 3.0));

    const BruteResult oracle = brute_force_lp(p);
    const LpSolution s = solve_lp(p);
    INFO("trial " << trial);
    if (oracle.feasible) {
      REQUIRE(s.status == LpStatus::optimal);
      CHECK(s.objective == Catch::Approx(oracle.objective).margin(1e-7));
      // returned point satisfies constraints and bounds
      for (std::size_t i = 0; i < m; ++i) {
        double lhs = 0;
        for (std::size_t j = 0; j < n; ++j) lhs += p.at(i, j) * s.x[j];
        CHECK(lhs == Catch::Approx(p.b[i]).margin(1e-7));
      }
      for (std::size_t j = 0; j < n; ++j) {
        CHECK(s.x[j] >= p.lo[j] - 1e-9);
        CHECK(s.x[j] <= p.hi[j] + 1e-9);
      }
      ++optimal_seen;
    } else {
      CHECK(s.status == LpStatus::infeasible);
    }
  }
  CHECK(optimal_seen > 30);  // the generator must actually exercise phase 2
}

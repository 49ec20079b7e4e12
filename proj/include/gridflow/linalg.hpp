#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "gridflow/errors.hpp"

namespace gridflow {

/// Dense row-major matrix of doubles. Small (tens of rows) by design; the
/// problems in this project never warrant sparse machinery.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> a;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

  double& at(std::size_t i, std::size_t j) { return a[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return a[i * cols + j]; }
};

/// Solve A x = b in place by LU with partial pivoting. A and b are clobbered;
/// the solution lands in b. Returns false if A is numerically singular.
inline bool lu_solve(Matrix& A, std::vector<double>& b) {
  const std::size_t n = A.rows;
  if (A.cols != n || b.size() != n) throw ShapeError("lu_solve: dimension mismatch");
  std::vector<std::size_t> piv(n);
  for (std::size_t i = 0; i < n; ++i) piv[i] = i;

  for (std::size_t k = 0; k < n; ++k) {
    std::size_t p = k;
    double best = std::fabs(A.at(k, k));
    for (std::size_t i = k + 1; i < n; ++i) {
      double v = std::fabs(A.at(i, k));
      if (v > best) {
        best = v;
        p = i;
      }
    }
    if (best < 1e-13) return false;
    if (p != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(A.at(k, j), A.at(p, j));
      std::swap(b[k], b[p]);
    }
    const double pivot = A.at(k, k);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = A.at(i, k) / pivot;
      if (f == 0.0) continue;
      A.at(i, k) = f;
      for (std::size_t j = k + 1; j < n; ++j) A.at(i, j) -= f * A.at(k, j);
      b[i] -= f * b[k];
    }
  }
  for (std::size_t ii = n; ii-- > 0;) {
    double s = b[ii];
    for (std::size_t j = ii + 1; j < n; ++j) s -= A.at(ii, j) * b[j];
    b[ii] = s / A.at(ii, ii);
  }
  return true;
}

}  // namespace gridflow

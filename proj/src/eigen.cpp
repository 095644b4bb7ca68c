#include "fairgc/eigen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace fairgc::num {

namespace {

real_t off_diagonal_norm(const Tensor2& a) {
  real_t s = 0;
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j)
      if (i != j) s += a(i, j) * a(i, j);
  return std::sqrt(s);
}

real_t frobenius(const Tensor2& a) {
  real_t s = 0;
  for (real_t v : a.data) s += v * v;
  return std::sqrt(s);
}

}  // namespace

EigenResult sym_eigen(const Tensor2& m, std::size_t k, EigenWhich which,
                      real_t sym_tol) {
  const std::size_t n = m.rows;
  if (n == 0 || m.cols != n)
    throw NumericError("sym_eigen: matrix must be square and non-empty");
  if (k < 1 || k > n)
    throw NumericError("sym_eigen: k out of range");
  check_finite(m, "sym_eigen input");

  real_t max_asym = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      max_asym = std::max(max_asym, std::abs(m(i, j) - m(j, i)));
  if (max_asym > sym_tol)
    throw NumericError("sym_eigen: matrix asymmetric beyond tolerance (max |a_ij - a_ji| = " +
                       format_real(max_asym) + ")");

  // Work on the symmetrized copy so tiny input asymmetry cannot leak into
  // the rotations.
  Tensor2 a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a(i, j) = (m(i, j) + m(j, i)) / 2;
  Tensor2 v = Tensor2::identity(n);

  const real_t scale = frobenius(a);
  const real_t tol = scale > 0 ? 1e-14 * scale : 0;
  const int max_sweeps = 100;
  int sweep = 0;
  real_t off = off_diagonal_norm(a);
  for (; sweep < max_sweeps && off > tol; ++sweep) {
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const real_t apq = a(p, q);
        if (apq == 0) continue;
        const real_t app = a(p, p);
        const real_t aqq = a(q, q);
        const real_t theta = (aqq - app) / (2 * apq);
        const real_t t = (theta >= 0 ? real_t(1) : real_t(-1)) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1));
        const real_t c = real_t(1) / std::sqrt(t * t + 1);
        const real_t s = t * c;
        // A <- J^T A J on rows/cols p,q.
        for (std::size_t i = 0; i < n; ++i) {
          const real_t aip = a(i, p);
          const real_t aiq = a(i, q);
          a(i, p) = c * aip - s * aiq;
          a(i, q) = s * aip + c * aiq;
        }
        for (std::size_t j = 0; j < n; ++j) {
          const real_t apj = a(p, j);
          const real_t aqj = a(q, j);
          a(p, j) = c * apj - s * aqj;
          a(q, j) = s * apj + c * aqj;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const real_t vip = v(i, p);
          const real_t viq = v(i, q);
          v(i, p) = c * vip - s * viq;
          v(i, q) = s * vip + c * viq;
        }
      }
    }
    off = off_diagonal_norm(a);
  }
  if (off > std::max(tol, real_t(0)) && sweep == max_sweeps)
    throw NumericError("sym_eigen: Jacobi did not converge in " +
                       std::to_string(max_sweeps) +
                       " sweeps (off-diagonal norm " + format_real(off) + ")");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t(0));
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    if (a(x, x) != a(y, y)) return a(x, x) < a(y, y);
    return x < y;  // stable for repeated eigenvalues
  });
  if (which == EigenWhich::Largest) std::reverse(order.begin(), order.end());

  EigenResult res;
  res.values.resize(k);
  res.vectors = Tensor2(n, k);
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t src = order[c];
    res.values[c] = a(src, src);
    for (std::size_t i = 0; i < n; ++i) res.vectors(i, c) = v(i, src);
  }
  res.off_norm = off;
  res.sweeps = sweep;
  return res;
}

}  // namespace fairgc::num

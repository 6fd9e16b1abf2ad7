#pragma once

// Exhaustive active-set oracle for small strictly convex QPs
//   min 1/2 y'Hy + c'y  s.t.  A y <= r.
// Every subset S of rows with |S| <= dim is tried as an equality set; the
// full (unreduced) KKT matrix is solved by LU and the candidate is accepted
// when it is primal feasible and dual feasible. Shares no code with the
// active-set solver it checks.

#include "dsblo/core.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace dsblo::verify {

struct BruteForceResult {
  Vector y;
  Vector lambda;             // full length
  std::vector<Index> set;    // the accepted equality set, sorted
  std::int64_t candidates = 0;
  std::int64_t accepted = 0;  // >1 only at degenerate (weakly active) solutions
};

inline std::optional<BruteForceResult> brute_force_qp(const Matrix& H, const Vector& c,
                                                      const Matrix& A, const Vector& r,
                                                      double tol = 1e-9) {
  const Index n = H.rows();
  const Index m = A.rows();
  if (m > 24) throw Error(ErrorCode::InvalidArgument, "brute force limited to 24 rows");

  std::optional<BruteForceResult> best;
  std::int64_t candidates = 0;
  std::int64_t accepted = 0;
  const std::uint32_t total = 1u << static_cast<unsigned>(m);
  for (std::uint32_t mask = 0; mask < total; ++mask) {
    std::vector<Index> set;
    for (Index i = 0; i < m; ++i)
      if (mask & (1u << static_cast<unsigned>(i))) set.push_back(i);
    const auto s = static_cast<Index>(set.size());
    if (s > n) continue;
    ++candidates;

    Matrix kkt = Matrix::Zero(n + s, n + s);
    Vector rhs(n + s);
    kkt.topLeftCorner(n, n) = H;
    rhs.head(n) = -c;
    for (Index k = 0; k < s; ++k) {
      const Index row = set[static_cast<std::size_t>(k)];
      kkt.block(0, n + k, n, 1) = A.row(row).transpose();
      kkt.block(n + k, 0, 1, n) = A.row(row);
      rhs(n + k) = r(row);
    }
    Eigen::FullPivLU<Matrix> lu(kkt);
    if (!lu.isInvertible()) continue;
    const Vector sol = lu.solve(rhs);
    const Vector y = sol.head(n);
    const Vector lam = sol.tail(s);

    bool ok = true;
    for (Index k = 0; k < s && ok; ++k) ok = lam(k) >= -tol;
    for (Index i = 0; i < m && ok; ++i) ok = A.row(i).dot(y) <= r(i) + tol;
    if (!ok) continue;

    ++accepted;
    if (!best) {
      BruteForceResult res;
      res.y = y;
      res.lambda = Vector::Zero(m);
      for (Index k = 0; k < s; ++k) res.lambda(set[static_cast<std::size_t>(k)]) = lam(k);
      res.set = set;
      best = std::move(res);
    }
  }
  if (best) {
    best->candidates = candidates;
    best->accepted = accepted;
  }
  return best;
}

}  // namespace dsblo::verify

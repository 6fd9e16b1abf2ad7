#pragma once

#include "dsblo/problem.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

namespace dsblo {

struct LowerOptions {
  /// Slack below which a constraint counts as active (projected-gradient path).
  double tau_act = 1e-7;
  /// Relative slack below which a row outside the final working set is still
  /// reported active, with a zero multiplier (active-set path).
  double tau_weak = 1e-12;
  /// Largest admissible constraint violation of a returned point.
  double tau_feas = 1e-9;
  /// Stationarity residual every exact solve must reach.
  double kkt_tol = 1e-10;
  /// Smallest admissible singular value of the active rows.
  double rank_tol = 1e-8;
  /// Pivot cap of the active-set QP; 0 picks 50 (rows + dim) + 100.
  Index max_pivots = 0;
  /// Iteration cap of the projected-gradient path.
  Index max_iter = 100000;
};

enum class LowerMethod { ActiveSet, ProjectedGradient };

struct LowerStats {
  LowerMethod method = LowerMethod::ActiveSet;
  Index pivots = 0;      // working-set additions and removals, summed over all QP solves
  Index iterations = 0;  // projected-gradient steps (0 on the active-set path)
  bool bland_mode = false;
  /// QP objective after each constraint addition (active-set path only).
  std::vector<double> objective_trace;
};

struct LLSolution {
  Vector y_hat;
  Vector lambda;                  // one multiplier per constraint row, zero off the active set
  std::vector<Index> active_set;  // sorted
  double kkt_residual = 0.0;
  double max_violation = 0.0;     // max_i (A y + B x - b)_i; <= 0 means feasible
  double delta_cert = 0.0;        // certified bound on |y* - y_hat|
  LowerStats stats;

  bool exact() const { return stats.method == LowerMethod::ActiveSet; }
};

struct Perturbation {
  Vector q;
  double radius = 0.0;
};

/// q uniform on the closed Euclidean ball of the given radius.
inline Perturbation sample_perturbation(double radius, Index dim, Rng& rng) {
  require(radius > 0.0 && std::isfinite(radius), ErrorCode::InvalidArgument,
          "perturbation radius must be positive");
  require(dim >= 1, ErrorCode::InvalidArgument, "perturbation dimension must be >= 1");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vector dir(dim);
  double norm = 0.0;
  do {
    for (Index i = 0; i < dim; ++i) dir(i) = normal(rng);
    norm = dir.norm();
  } while (norm == 0.0);
  const double r = radius * std::pow(unit(rng), 1.0 / static_cast<double>(dim));
  Vector q = dir * (r / norm);
  // Guard the support bound against rounding in the rescale.
  if (q.norm() > radius) q *= radius / q.norm();
  return {std::move(q), radius};
}

inline Perturbation zero_perturbation(Index dim) { return {Vector::Zero(dim), 0.0}; }

// ---------------------------------------------------------------------------
// Dense strictly convex QP
//   min 1/2 y'Hy + c'y  s.t.  A y <= r
// by the dual active-set method of Goldfarb and Idnani: start from the
// unconstrained minimizer and add violated constraints one at a time, dropping
// working constraints whose multiplier would turn negative. The objective is
// nondecreasing over the pivots and every addition with positive violation
// raises it strictly.
// ---------------------------------------------------------------------------

struct QpResult {
  Vector y;
  Vector lambda;             // full length, zero off the working set
  std::vector<Index> working;  // sorted
  LowerStats stats;
};

namespace detail {

inline double qp_objective(const Matrix& H, const Vector& c, const Vector& y) {
  return 0.5 * y.dot(H * y) + c.dot(y);
}

}  // namespace detail

inline QpResult solve_qp(const Matrix& H, const Vector& c, const Matrix& A, const Vector& r,
                         const LowerOptions& opt = {}) {
  const Index n = H.rows();
  const Index m = A.rows();
  require(H.cols() == n && c.size() == n, ErrorCode::DimensionMismatch, "QP Hessian/linear term");
  require(m == 0 || A.cols() == n, ErrorCode::DimensionMismatch, "QP constraint matrix");
  require_dims(r.size(), m, "QP right-hand side");

  Eigen::LLT<Matrix> hfac(H);
  if (hfac.info() != Eigen::Success) throw Error(ErrorCode::NotSPD, "QP Hessian is not SPD");

  const Index max_pivots = opt.max_pivots > 0 ? opt.max_pivots : 50 * (m + n) + 100;
  const Index stall_limit = std::max<Index>(3 * m, 1);

  QpResult res;
  res.y = -hfac.solve(c);
  res.lambda = Vector::Zero(m);
  std::vector<Index>& work = res.working;
  LowerStats& stats = res.stats;
  stats.method = LowerMethod::ActiveSet;

  double objective = detail::qp_objective(H, c, res.y);
  stats.objective_trace.push_back(objective);
  Index stalled = 0;

  auto violation = [&](Index i) { return A.row(i).dot(res.y) - r(i); };
  auto add_threshold = [&](Index i) {
    return 1e-13 * (1.0 + std::abs(r(i)) + A.row(i).cwiseAbs().dot(res.y.cwiseAbs()));
  };

  while (true) {
    // Pick the constraint to add.
    Index p = -1;
    double worst = 0.0;
    for (Index i = 0; i < m; ++i) {
      if (std::find(work.begin(), work.end(), i) != work.end()) continue;
      const double v = violation(i);
      if (v <= add_threshold(i)) continue;
      if (stats.bland_mode) {
        p = i;
        break;
      }
      const double scaled = v / A.row(i).norm();
      if (scaled > worst) {
        worst = scaled;
        p = i;
      }
    }
    if (p < 0) break;

    const Vector ap = A.row(p).transpose();
    const Vector hinv_ap = hfac.solve(ap);
    const double ap_norm_h = ap.dot(hinv_ap);
    double lambda_p = 0.0;

    while (true) {
      if (++stats.pivots > max_pivots) {
        throw Error(ErrorCode::MaxPivots, "active-set QP exceeded its pivot budget",
                    static_cast<double>(stats.pivots));
      }
      const Index w = static_cast<Index>(work.size());
      Matrix aw(w, n);
      for (Index k = 0; k < w; ++k) aw.row(k) = A.row(work[static_cast<std::size_t>(k)]);

      Vector dlam = Vector::Zero(w);
      if (w > 0) {
        const Matrix hinv_awt = hfac.solve(aw.transpose());
        const Matrix schur = aw * hinv_awt;
        Eigen::LDLT<Matrix> sfac(schur);
        dlam = -sfac.solve(aw * hinv_ap);
      }
      Vector dz = -hinv_ap;
      if (w > 0) dz -= hfac.solve(aw.transpose() * dlam);
      const double curvature = dz.dot(H * dz);

      // Full step restores feasibility of p; partial step hits a zero multiplier.
      double t_full = std::numeric_limits<double>::infinity();
      if (curvature > 1e-14 * ap_norm_h) t_full = violation(p) / curvature;
      double t_partial = std::numeric_limits<double>::infinity();
      Index blocking = -1;
      for (Index k = 0; k < w; ++k) {
        if (dlam(k) < 0.0) {
          const double t = res.lambda(work[static_cast<std::size_t>(k)]) / -dlam(k);
          if (t < t_partial) {
            t_partial = t;
            blocking = k;
          }
        }
      }
      if (!std::isfinite(t_full) && !std::isfinite(t_partial)) {
        throw Error(ErrorCode::Infeasible, "QP constraints admit no feasible point");
      }

      const double t = std::min(t_full, t_partial);
      if (std::isfinite(t_full)) res.y += t * dz;
      for (Index k = 0; k < w; ++k) {
        const Index row = work[static_cast<std::size_t>(k)];
        res.lambda(row) = std::max(0.0, res.lambda(row) + t * dlam(k));
      }
      lambda_p += t;

      if (t_full <= t_partial) {
        res.lambda(p) = lambda_p;
        work.insert(std::upper_bound(work.begin(), work.end(), p), p);
        break;
      }
      const Index dropped = work[static_cast<std::size_t>(blocking)];
      res.lambda(dropped) = 0.0;
      work.erase(work.begin() + blocking);
    }

    const double next = detail::qp_objective(H, c, res.y);
    if (next <= objective + 1e-15 * std::max(1.0, std::abs(objective))) {
      if (++stalled >= stall_limit) stats.bland_mode = true;
    } else {
      stalled = 0;
    }
    objective = next;
    stats.objective_trace.push_back(objective);
  }

  // Polish on the final working set: solve the equality-constrained KKT system.
  const Index w = static_cast<Index>(work.size());
  if (w > 0) {
    Matrix aw(w, n);
    Vector rw(w);
    for (Index k = 0; k < w; ++k) {
      aw.row(k) = A.row(work[static_cast<std::size_t>(k)]);
      rw(k) = r(work[static_cast<std::size_t>(k)]);
    }
    const Matrix hinv_awt = hfac.solve(aw.transpose());
    Eigen::LDLT<Matrix> sfac(aw * hinv_awt);
    const Vector hinv_c = hfac.solve(c);
    const Vector lam = sfac.solve(-aw * hinv_c - rw);
    const Vector y = -hinv_c - hinv_awt * lam;
    if (lam.allFinite() && y.allFinite() && lam.minCoeff() >= -1e-9) {
      res.y = y;
      for (Index k = 0; k < w; ++k) {
        res.lambda(work[static_cast<std::size_t>(k)]) = std::max(0.0, lam(k));
      }
    }
  } else {
    res.y = -hfac.solve(c);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Lower-level solves
// ---------------------------------------------------------------------------

namespace detail {

inline Matrix active_rows(const Matrix& A, const std::vector<Index>& set) {
  Matrix out(static_cast<Index>(set.size()), A.cols());
  for (std::size_t k = 0; k < set.size(); ++k) out.row(static_cast<Index>(k)) = A.row(set[k]);
  return out;
}

inline double smallest_singular_value(const Matrix& m) {
  if (m.rows() == 0) return std::numeric_limits<double>::infinity();
  if (m.rows() > m.cols()) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues()(svd.singularValues().size() - 1);
}

inline void check_rank(const Matrix& A, const std::vector<Index>& set, double tol) {
  const double smin = smallest_singular_value(active_rows(A, set));
  if (!(smin >= tol)) {
    throw Error(ErrorCode::DegenerateActiveSet,
                "active constraint rows are not linearly independent", smin);
  }
}

inline void fill_certificates(LLSolution& sol, const Matrix& A, const Vector& rhs,
                              const Vector& grad_q) {
  Vector station = grad_q;
  for (Index i : sol.active_set) station += sol.lambda(i) * A.row(i).transpose();
  sol.kkt_residual = station.norm();
  sol.max_violation = A.rows() > 0 ? (A * sol.y_hat - rhs).maxCoeff()
                                   : -std::numeric_limits<double>::infinity();
}

}  // namespace detail

/// Exact solve of min |y|^2 + (Q2'x + q)'y s.t. A y <= b - B x.
/// The active set is the final working set plus any other row that is tight
/// to within tau_weak (relative); those carry a zero multiplier, so a
/// degenerate solve reports a zero strict-complementarity margin.
inline LLSolution solve_ll_quadratic(const QuadraticBilevel& inst, const Vector& x,
                                     const Perturbation& q, const LowerOptions& opt = {}) {
  require_dims(x.size(), inst.dim_upper(), "x");
  require_dims(q.q.size(), inst.dim_lower(), "q");
  const Polyhedron& poly = inst.constraints();
  const Index n = inst.dim_lower();
  const Matrix H = 2.0 * Matrix::Identity(n, n);
  const Vector c = inst.lower_linear(x) + q.q;
  const Vector rhs = poly.rhs(x);

  QpResult qp = solve_qp(H, c, poly.A, rhs, opt);

  LLSolution sol;
  sol.y_hat = std::move(qp.y);
  sol.lambda = std::move(qp.lambda);
  sol.stats = std::move(qp.stats);
  sol.active_set = qp.working;
  const Vector slack = rhs - poly.A * sol.y_hat;
  for (Index i = 0; i < poly.rows(); ++i) {
    const double scale = 1.0 + std::abs(rhs(i)) + poly.A.row(i).cwiseAbs().dot(sol.y_hat.cwiseAbs());
    if (slack(i) <= opt.tau_weak * scale &&
        !std::binary_search(qp.working.begin(), qp.working.end(), i)) {
      sol.active_set.push_back(i);
    }
  }
  std::sort(sol.active_set.begin(), sol.active_set.end());

  detail::fill_certificates(sol, poly.A, rhs, H * sol.y_hat + c);
  sol.delta_cert = sol.kkt_residual / inst.mu_g();

  if (!(sol.max_violation <= opt.tau_feas)) {
    throw Error(ErrorCode::Infeasible, "active-set solve ended outside the feasible set",
                sol.max_violation);
  }
  if (!(sol.kkt_residual <= opt.kkt_tol)) {
    throw Error(ErrorCode::Internal, "active-set solve missed the KKT tolerance",
                sol.kkt_residual);
  }
  detail::check_rank(poly.A, sol.active_set, opt.rank_tol);
  return sol;
}

/// Euclidean projection onto {y : A y <= rhs}.
inline Vector project_polyhedron(const Matrix& A, const Vector& rhs, const Vector& z,
                                 const LowerOptions& opt, Index* pivots = nullptr) {
  const Index n = z.size();
  QpResult qp = solve_qp(Matrix::Identity(n, n), -z, A, rhs, opt);
  if (pivots) *pivots += qp.stats.pivots;
  return qp.y;
}

/// Projected gradient descent with step 1/L on g(x, .) + q'y. Stops once
/// (L/mu) |y_k - y_{k+1}| <= tol_delta; that quantity bounds |y* - y_{k+1}|
/// because the projected gradient map contracts by 1 - mu/L.
template <BilevelProblem P>
LLSolution solve_ll_oracle(const P& problem, const Vector& x, const Perturbation& q,
                           double tol_delta, const LowerOptions& opt = {},
                           const Vector* warm_start = nullptr) {
  require(tol_delta > 0.0, ErrorCode::InvalidArgument, "tol_delta must be positive");
  require_dims(x.size(), problem.dim_upper(), "x");
  require_dims(q.q.size(), problem.dim_lower(), "q");
  const Polyhedron& poly = problem.constraints();
  const double lip = problem.lipschitz_g();
  const double mu = problem.mu_g();
  require(mu > 0.0 && lip >= mu, ErrorCode::InvalidArgument, "need 0 < mu_g <= L_g");
  const Vector rhs = poly.rhs(x);
  const Index n = problem.dim_lower();

  LLSolution sol;
  sol.stats.method = LowerMethod::ProjectedGradient;
  Vector y = warm_start ? *warm_start : Vector::Zero(n);
  y = project_polyhedron(poly.A, rhs, y, opt, &sol.stats.pivots);

  double best = std::numeric_limits<double>::infinity();
  bool done = false;
  for (Index it = 0; it < opt.max_iter; ++it) {
    const Vector grad = problem.grad_y_g(x, y) + q.q;
    Vector next = project_polyhedron(poly.A, rhs, y - grad / lip, opt, &sol.stats.pivots);
    const double cert = (lip / mu) * (y - next).norm();
    y = std::move(next);
    sol.stats.iterations = it + 1;
    best = std::min(best, cert);
    if (cert <= tol_delta) {
      sol.delta_cert = cert;
      done = true;
      break;
    }
  }
  if (!done) {
    throw Error(ErrorCode::MaxIter, "projected gradient did not reach tol_delta", best);
  }

  sol.y_hat = y;
  const Vector slack = rhs - poly.A * y;
  for (Index i = 0; i < poly.rows(); ++i)
    if (slack(i) <= opt.tau_act) sol.active_set.push_back(i);

  const Vector grad_q = problem.grad_y_g(x, y) + q.q;
  sol.lambda = Vector::Zero(poly.rows());
  if (!sol.active_set.empty()) {
    detail::check_rank(poly.A, sol.active_set, opt.rank_tol);
    const Matrix abar = detail::active_rows(poly.A, sol.active_set);
    // Least squares for Abar' lambda = -grad, clamped at zero.
    const Vector lam = abar.transpose().colPivHouseholderQr().solve(-grad_q);
    for (std::size_t k = 0; k < sol.active_set.size(); ++k) {
      sol.lambda(sol.active_set[k]) = std::max(0.0, lam(static_cast<Index>(k)));
    }
  }
  detail::fill_certificates(sol, poly.A, rhs, grad_q);
  if (!(sol.max_violation <= opt.tau_feas)) {
    throw Error(ErrorCode::Infeasible, "projected gradient iterate left the feasible set",
                sol.max_violation);
  }
  return sol;
}

/// Exact path for the quadratic family, projected gradient otherwise.
template <BilevelProblem P>
LLSolution solve_lower(const P& problem, const Vector& x, const Perturbation& q, double tol_delta,
                       const LowerOptions& opt = {}) {
  if constexpr (std::is_same_v<P, QuadraticBilevel>) {
    (void)tol_delta;
    return solve_ll_quadratic(problem, x, q, opt);
  } else {
    return solve_ll_oracle(problem, x, q, tol_delta, opt);
  }
}

/// True iff both solutions report the same active index set.
inline bool certify_active_set(const LLSolution& exact, const LLSolution& approx) {
  return exact.active_set == approx.active_set;
}

/// Smallest multiplier on the active set; +inf when nothing is active.
inline double sc_margin(const LLSolution& sol) {
  double margin = std::numeric_limits<double>::infinity();
  for (Index i : sol.active_set) margin = std::min(margin, sol.lambda(i));
  return margin;
}

/// Smallest slack over the inactive rows; +inf when every row is active.
inline double inactive_slack(const Polyhedron& poly, const Vector& x, const LLSolution& sol) {
  const Vector slack = poly.slack(x, sol.y_hat);
  double out = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < poly.rows(); ++i) {
    if (!std::binary_search(sol.active_set.begin(), sol.active_set.end(), i)) {
      out = std::min(out, slack(i));
    }
  }
  return out;
}

}  // namespace dsblo

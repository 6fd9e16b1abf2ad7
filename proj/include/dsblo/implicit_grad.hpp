#pragma once

#include "dsblo/lower_level.hpp"

#include <optional>
#include <vector>

namespace dsblo {

struct ImplicitGradient {
  Vector grad;        // d_u
  Matrix jac_y;       // d_l x d_u, derivative of y*_q at x
  Matrix jac_lambda;  // |active| x d_u, derivative of the active multipliers
  bool used_approx = false;
  std::optional<Index> component;
};

struct Jacobians {
  Matrix jac_y;
  Matrix jac_lambda;
};

namespace detail {

inline Eigen::LLT<Matrix> factor_hessian(const Matrix& h, double mu) {
  Eigen::LLT<Matrix> fac(h);
  if (fac.info() != Eigen::Success) {
    throw Error(ErrorCode::NotSPD, "lower-level Hessian is not positive definite");
  }
#ifndef NDEBUG
  const double lo = Eigen::SelfAdjointEigenSolver<Matrix>(h, Eigen::EigenvaluesOnly).eigenvalues()(0);
  if (lo < mu * (1.0 - 1e-10)) {
    throw Error(ErrorCode::NotSPD, "lower-level Hessian eigenvalue below mu_g", lo);
  }
#else
  (void)mu;
#endif
  return fac;
}

}  // namespace detail

/// Derivatives of the lower-level solution and its active multipliers from
/// the KKT system restricted to `rows`:
///   S = Abar H^-1 Abar',  dlambda = -S^-1 (Abar H^-1 M - Bbar),
///   dy = H^-1 (-M - Abar' dlambda),
/// with H = grad^2_yy g and M = grad^2_xy g at (x, y). Rows of jac_lambda
/// follow the order of `rows`.
template <BilevelProblem P>
Jacobians jacobians_on_rows(const P& problem, const Vector& x, const Vector& y,
                            const std::vector<Index>& rows, double rank_tol = 1e-8) {
  const Polyhedron& poly = problem.constraints();
  const Matrix h = problem.hess_yy_g(x, y);
  const Matrix m = problem.jac_xy_g(x, y);
  require(m.rows() == problem.dim_lower() && m.cols() == problem.dim_upper(),
          ErrorCode::DimensionMismatch, "jac_xy_g must be d_l x d_u");
  const auto hfac = detail::factor_hessian(h, problem.mu_g());
  const Matrix hinv_m = hfac.solve(m);

  if (rows.empty()) {
    return {-hinv_m, Matrix(0, problem.dim_upper())};
  }

  const Index na = static_cast<Index>(rows.size());
  Matrix abar(na, problem.dim_lower());
  Matrix bbar(na, problem.dim_upper());
  for (Index k = 0; k < na; ++k) {
    abar.row(k) = poly.A.row(rows[static_cast<std::size_t>(k)]);
    bbar.row(k) = poly.B.row(rows[static_cast<std::size_t>(k)]);
  }
  const double smin = detail::smallest_singular_value(abar);
  if (!(smin >= rank_tol)) {
    throw Error(ErrorCode::DegenerateActiveSet, "active rows are rank deficient", smin);
  }
  const Matrix hinv_at = hfac.solve(abar.transpose());
  const Matrix schur = abar * hinv_at;
  Eigen::LLT<Matrix> sfac(schur);
  if (sfac.info() != Eigen::Success) {
    throw Error(ErrorCode::DegenerateActiveSet, "active-set Schur complement is singular");
  }
  Jacobians out;
  out.jac_lambda = -sfac.solve(abar * hinv_m - bbar);
  out.jac_y = hfac.solve(-m - abar.transpose() * out.jac_lambda);
  return out;
}

/// Jacobians at a lower-level solution. Requires strict complementarity on
/// the reported active set.
template <BilevelProblem P>
Jacobians jacobians(const P& problem, const Vector& x, const LLSolution& sol,
                    double rank_tol = 1e-8) {
  if (!sol.active_set.empty() && !(sc_margin(sol) > 0.0)) {
    throw Error(ErrorCode::DegenerateActiveSet,
                "strict complementarity fails: an active multiplier is zero", sc_margin(sol));
  }
  return jacobians_on_rows(problem, x, sol.y_hat, sol.active_set, rank_tol);
}

namespace detail {

inline ImplicitGradient assemble(Jacobians jac, const UpperGradient& fg, const LLSolution& sol,
                                 std::optional<Index> component) {
  ImplicitGradient out;
  out.grad = fg.x + jac.jac_y.transpose() * fg.y;
  out.jac_y = std::move(jac.jac_y);
  out.jac_lambda = std::move(jac.jac_lambda);
  out.used_approx = !sol.exact();
  out.component = component;
  return out;
}

}  // namespace detail

/// grad_x f(x, y) + jac_y' grad_y f(x, y) at y = sol.y_hat.
template <BilevelProblem P>
ImplicitGradient implicit_gradient(const P& problem, const Vector& x, const LLSolution& sol) {
  return detail::assemble(jacobians(problem, x, sol), problem.grad_f(x, sol.y_hat), sol,
                          std::nullopt);
}

/// Same Jacobians, upper-level gradient of component xi only.
template <BilevelProblem P>
ImplicitGradient sampled_implicit_gradient(const P& problem, const Vector& x,
                                           const LLSolution& sol, Index xi) {
  require(xi >= 0 && xi < problem.num_components(), ErrorCode::InvalidArgument,
          "component index out of range");
  return detail::assemble(jacobians(problem, x, sol), problem.grad_f_component(x, sol.y_hat, xi),
                          sol, xi);
}

/// Mean and (population) variance of the sampled gradients over all components.
struct ComponentSpread {
  Vector mean;
  double variance = 0.0;  // mean squared distance to the mean
};

template <BilevelProblem P>
ComponentSpread component_spread(const P& problem, const Vector& x, const LLSolution& sol) {
  const Jacobians jac = jacobians(problem, x, sol);
  const Index n = problem.num_components();
  std::vector<Vector> grads;
  grads.reserve(static_cast<std::size_t>(n));
  Vector mean = Vector::Zero(problem.dim_upper());
  for (Index xi = 0; xi < n; ++xi) {
    const UpperGradient fg = problem.grad_f_component(x, sol.y_hat, xi);
    grads.push_back(fg.x + jac.jac_y.transpose() * fg.y);
    mean += grads.back();
  }
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (const auto& g : grads) var += (g - mean).squaredNorm();
  return {mean, var / static_cast<double>(n)};
}

/// F_q(x) = f(x, y*_q(x)) with the lower level solved by `solve_lower`.
template <BilevelProblem P>
double eval_Fq(const P& problem, const Vector& x, const Perturbation& q, double ll_tol = 1e-10,
               const LowerOptions& opt = {}) {
  const LLSolution sol = solve_lower(problem, x, q, ll_tol, opt);
  return problem.f(x, sol.y_hat);
}

/// Unperturbed F(x) = f(x, y*(x)).
template <BilevelProblem P>
double eval_F_exact(const P& problem, const Vector& x, double ll_tol = 1e-10,
                    const LowerOptions& opt = {}) {
  return eval_Fq(problem, x, zero_perturbation(problem.dim_lower()), ll_tol, opt);
}

}  // namespace dsblo

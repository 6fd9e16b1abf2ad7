#pragma once

#include "dsblo/problem.hpp"

namespace dsblo::verify {

/// Two-dimensional instance whose unconstrained lower-level minimizer at
/// x = (1, 0) sits exactly on the first row y_1 <= -1, so the unperturbed
/// solve has an active row with a zero multiplier. Rows 1-4 are the box
/// |y_j| <= 10.
inline QuadraticBilevel degenerate_instance() {
  Matrix A(5, 2);
  A << 1, 0,
       1, 0, -1, 0,
       0, 1, 0, -1;
  Vector b(5);
  b << -1, 10, 10, 10, 10;
  Polyhedron poly{A, Matrix::Zero(5, 2), b};
  return QuadraticBilevel(Matrix::Zero(2, 2), 2.0 * Matrix::Identity(2, 2), Matrix::Zero(2, 1),
                          Matrix::Zero(2, 1), poly);
}

inline Vector degenerate_point() {
  Vector x(2);
  x << 1.0, 0.0;
  return x;
}

/// The same problem with the sign of grad^2_xy g flipped: a deliberately
/// wrong gradient formula for exercising the finite-difference check.
template <BilevelProblem P>
struct FlippedCoupling {
  const P& inner;

  Index dim_upper() const { return inner.dim_upper(); }
  Index dim_lower() const { return inner.dim_lower(); }
  const Polyhedron& constraints() const { return inner.constraints(); }
  double f(const Vector& x, const Vector& y) const { return inner.f(x, y); }
  UpperGradient grad_f(const Vector& x, const Vector& y) const { return inner.grad_f(x, y); }
  Index num_components() const { return inner.num_components(); }
  UpperGradient grad_f_component(const Vector& x, const Vector& y, Index xi) const {
    return inner.grad_f_component(x, y, xi);
  }
  Vector grad_y_g(const Vector& x, const Vector& y) const { return inner.grad_y_g(x, y); }
  Matrix hess_yy_g(const Vector& x, const Vector& y) const { return inner.hess_yy_g(x, y); }
  Matrix jac_xy_g(const Vector& x, const Vector& y) const { return -inner.jac_xy_g(x, y); }
  double mu_g() const { return inner.mu_g(); }
  double lipschitz_g() const { return inner.lipschitz_g(); }
};

}  // namespace dsblo::verify

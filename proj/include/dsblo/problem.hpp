#pragma once

#include "dsblo/core.hpp"

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <string>
#include <vector>

namespace dsblo {

/// Coupled polyhedron {y : A y + B x <= b}.
struct Polyhedron {
  Matrix A;  // rows x d_l
  Matrix B;  // rows x d_u
  Vector b;  // rows

  Index rows() const { return A.rows(); }

  /// Right-hand side of the constraints in y alone: b - B x.
  Vector rhs(const Vector& x) const { return b - B * x; }

  /// b - A y - B x; nonnegative entries are satisfied constraints.
  Vector slack(const Vector& x, const Vector& y) const { return b - A * y - B * x; }

  void validate(Index d_u, Index d_l) const {
    require(A.rows() == B.rows() && A.rows() == b.size(), ErrorCode::DimensionMismatch,
            "polyhedron row counts of A, B, b disagree");
    if (A.rows() > 0) {
      require_dims(A.cols(), d_l, "polyhedron A columns");
      require_dims(B.cols(), d_u, "polyhedron B columns");
    }
  }
};

struct UpperGradient {
  Vector x;  // gradient of f with respect to the upper-level variable
  Vector y;  // gradient of f with respect to the lower-level variable
};

/// What the solvers need to know about a bilevel problem
///   min_x f(x, y*(x))  s.t.  y*(x) = argmin_{A y + B x <= b} g(x, y).
/// f is a finite mean over `num_components()` pieces; g is strongly convex
/// in y with modulus `mu_g()` and has an L-Lipschitz y-gradient, L = `lipschitz_g()`.
template <class P>
concept BilevelProblem = requires(const P& p, const Vector& x, const Vector& y, Index xi) {
  { p.dim_upper() } -> std::convertible_to<Index>;
  { p.dim_lower() } -> std::convertible_to<Index>;
  { p.constraints() } -> std::convertible_to<const Polyhedron&>;
  { p.f(x, y) } -> std::convertible_to<double>;
  { p.grad_f(x, y) } -> std::convertible_to<UpperGradient>;
  { p.num_components() } -> std::convertible_to<Index>;
  { p.grad_f_component(x, y, xi) } -> std::convertible_to<UpperGradient>;
  { p.grad_y_g(x, y) } -> std::convertible_to<Vector>;
  { p.hess_yy_g(x, y) } -> std::convertible_to<Matrix>;
  { p.jac_xy_g(x, y) } -> std::convertible_to<Matrix>;
  { p.mu_g() } -> std::convertible_to<double>;
  { p.lipschitz_g() } -> std::convertible_to<double>;
};

struct GeneratorInfo {
  static constexpr int kVersion = 1;
  int version = kVersion;
  std::uint64_t seed = 0;
  Index random_rows = 0;      // rows drawn from U[0,1]; box rows follow them
  double box_radius = 10.0;   // -R <= y_j <= R rows appended after the random ones
  double feasibility_margin = 0.1;
  std::string distribution = "uniform[0,1]";
};

/// The quadratic test family
///   f_i(x,y) = |x|^2 + 0.1 x'Q1 y + |y|^2 + cx_i'x + cy_i'y,  f = mean_i f_i
///   g(x,y)   = |x|^2 + x'Q2 y + |y|^2
/// With a single component cx = cy = 1 (all-ones vectors).
class QuadraticBilevel {
 public:
  static constexpr double kCouplingF = 0.1;

  QuadraticBilevel() = default;

  QuadraticBilevel(Matrix q1, Matrix q2, Matrix linear_x, Matrix linear_y, Polyhedron constraints,
                   GeneratorInfo info = {})
      : q1_(std::move(q1)),
        q2_(std::move(q2)),
        linear_x_(std::move(linear_x)),
        linear_y_(std::move(linear_y)),
        constraints_(std::move(constraints)),
        info_(std::move(info)) {
    const Index du = q1_.rows();
    const Index dl = q1_.cols();
    require(du >= 1 && dl >= 1, ErrorCode::InvalidArgument, "dimensions must be positive");
    require_dims(q2_.rows(), du, "Q2 rows");
    require_dims(q2_.cols(), dl, "Q2 cols");
    require_dims(linear_x_.rows(), du, "upper linear-x rows");
    require_dims(linear_y_.rows(), dl, "upper linear-y rows");
    require(linear_x_.cols() >= 1 && linear_x_.cols() == linear_y_.cols(),
            ErrorCode::DimensionMismatch, "component counts of the linear terms disagree");
    constraints_.validate(du, dl);
    mean_linear_x_ = linear_x_.rowwise().mean();
    mean_linear_y_ = linear_y_.rowwise().mean();
  }

  Index dim_upper() const { return q1_.rows(); }
  Index dim_lower() const { return q1_.cols(); }
  Index num_components() const { return linear_x_.cols(); }
  const Polyhedron& constraints() const { return constraints_; }
  const Matrix& q1() const { return q1_; }
  const Matrix& q2() const { return q2_; }
  const Matrix& linear_x() const { return linear_x_; }
  const Matrix& linear_y() const { return linear_y_; }
  const GeneratorInfo& info() const { return info_; }

  double mu_g() const { return 2.0; }
  double lipschitz_g() const { return 2.0; }

  /// Full-batch upper objective.
  double f(const Vector& x, const Vector& y) const {
    check(x, y);
    return x.squaredNorm() + kCouplingF * x.dot(q1_ * y) + y.squaredNorm() +
           mean_linear_x_.dot(x) + mean_linear_y_.dot(y);
  }

  double f_component(const Vector& x, const Vector& y, Index xi) const {
    check(x, y);
    check_component(xi);
    return x.squaredNorm() + kCouplingF * x.dot(q1_ * y) + y.squaredNorm() +
           linear_x_.col(xi).dot(x) + linear_y_.col(xi).dot(y);
  }

  UpperGradient grad_f(const Vector& x, const Vector& y) const {
    check(x, y);
    return {2.0 * x + kCouplingF * (q1_ * y) + mean_linear_x_,
            kCouplingF * (q1_.transpose() * x) + 2.0 * y + mean_linear_y_};
  }

  UpperGradient grad_f_component(const Vector& x, const Vector& y, Index xi) const {
    check(x, y);
    check_component(xi);
    return {2.0 * x + kCouplingF * (q1_ * y) + linear_x_.col(xi),
            kCouplingF * (q1_.transpose() * x) + 2.0 * y + linear_y_.col(xi)};
  }

  double g(const Vector& x, const Vector& y) const {
    check(x, y);
    return x.squaredNorm() + x.dot(q2_ * y) + y.squaredNorm();
  }

  Vector grad_y_g(const Vector& x, const Vector& y) const {
    check(x, y);
    return q2_.transpose() * x + 2.0 * y;
  }

  Matrix hess_yy_g(const Vector&, const Vector&) const {
    return 2.0 * Matrix::Identity(dim_lower(), dim_lower());
  }

  /// d(grad_y g)/dx, a d_l x d_u matrix; equals Q2' for this family.
  Matrix jac_xy_g(const Vector&, const Vector&) const { return q2_.transpose(); }

  /// Linear term of g in y at x: g(x,y) = |x|^2 + lower_linear(x)'y + |y|^2.
  Vector lower_linear(const Vector& x) const {
    require_dims(x.size(), dim_upper(), "x");
    return q2_.transpose() * x;
  }

 private:
  void check(const Vector& x, const Vector& y) const {
    require_dims(x.size(), dim_upper(), "x");
    require_dims(y.size(), dim_lower(), "y");
  }
  void check_component(Index xi) const {
    require(xi >= 0 && xi < num_components(), ErrorCode::InvalidArgument,
            "component index out of range");
  }

  Matrix q1_, q2_;
  Matrix linear_x_, linear_y_;  // one column per component
  Vector mean_linear_x_, mean_linear_y_;
  Polyhedron constraints_;
  GeneratorInfo info_;
};

static_assert(BilevelProblem<QuadraticBilevel>);

struct GeneratorOptions {
  Index d_u = 10;
  Index d_l = 10;
  Index k = 5;
  std::uint64_t seed = 1;
  Index components = 1;
  double box_radius = 10.0;
  double feasibility_margin = 0.1;
  /// Half-width of the per-component perturbation of the linear terms (N > 1).
  double component_spread = 1.0;
};

/// Random instance of the quadratic family. Q1, Q2, A, B and b are drawn
/// entrywise from U[0,1] in that order (row-major) from a generator seeded by
/// `seed`. Then b <- max(b, margin) so that y = 0 is strictly feasible at
/// x = 0, and the box rows y_j <= R, -y_j <= R are appended so the feasible
/// set is compact for every x.
inline QuadraticBilevel generate_instance(const GeneratorOptions& opt) {
  require(opt.d_u >= 1 && opt.d_l >= 1, ErrorCode::InvalidArgument, "d_u, d_l must be >= 1");
  require(opt.k >= 0, ErrorCode::InvalidArgument, "k must be >= 0");
  require(opt.components >= 1, ErrorCode::InvalidArgument, "components must be >= 1");
  if (!(opt.box_radius > 0.0) || !std::isfinite(opt.box_radius)) {
    throw Error(ErrorCode::GeneratorRejected,
                "box radius must be positive and finite to certify a bounded feasible set");
  }
  if (!(opt.feasibility_margin > 0.0) || opt.feasibility_margin >= opt.box_radius) {
    throw Error(ErrorCode::GeneratorRejected,
                "feasibility margin must lie in (0, box_radius) for y = 0 to be strictly feasible");
  }

  Rng rng = make_stream(opt.seed, streams::kGenerator);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto fill = [&](Index r, Index c) {
    Matrix m(r, c);
    for (Index i = 0; i < r; ++i)
      for (Index j = 0; j < c; ++j) m(i, j) = unit(rng);
    return m;
  };

  Matrix q1 = fill(opt.d_u, opt.d_l);
  Matrix q2 = fill(opt.d_u, opt.d_l);
  Matrix a_rand = fill(opt.k, opt.d_l);
  Matrix b_rand = fill(opt.k, opt.d_u);
  Vector rhs_rand = fill(opt.k, 1).col(0);
  for (Index i = 0; i < opt.k; ++i) rhs_rand(i) = std::max(rhs_rand(i), opt.feasibility_margin);

  const Index rows = opt.k + 2 * opt.d_l;
  Polyhedron poly{Matrix::Zero(rows, opt.d_l), Matrix::Zero(rows, opt.d_u), Vector::Zero(rows)};
  poly.A.topRows(opt.k) = a_rand;
  poly.B.topRows(opt.k) = b_rand;
  poly.b.head(opt.k) = rhs_rand;
  for (Index j = 0; j < opt.d_l; ++j) {
    poly.A(opt.k + 2 * j, j) = 1.0;
    poly.A(opt.k + 2 * j + 1, j) = -1.0;
    poly.b(opt.k + 2 * j) = opt.box_radius;
    poly.b(opt.k + 2 * j + 1) = opt.box_radius;
  }

  Matrix lin_x = Matrix::Ones(opt.d_u, opt.components);
  Matrix lin_y = Matrix::Ones(opt.d_l, opt.components);
  if (opt.components > 1) {
    std::uniform_real_distribution<double> spread(-opt.component_spread, opt.component_spread);
    auto centred = [&](Index r) {
      Matrix noise(r, opt.components);
      for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < opt.components; ++j) noise(i, j) = spread(rng);
      Vector mean = noise.rowwise().mean();
      noise.colwise() -= mean;
      return noise;
    };
    lin_x += centred(opt.d_u);
    lin_y += centred(opt.d_l);
  }

  GeneratorInfo info;
  info.seed = opt.seed;
  info.random_rows = opt.k;
  info.box_radius = opt.box_radius;
  info.feasibility_margin = opt.feasibility_margin;
  return QuadraticBilevel(std::move(q1), std::move(q2), std::move(lin_x), std::move(lin_y),
                          std::move(poly), std::move(info));
}

template <BilevelProblem P>
double eval_f(const P& problem, const Vector& x, const Vector& y) {
  return problem.f(x, y);
}

/// Uniform component index in [0, N).
template <BilevelProblem P>
Index sample_component(const P& problem, Rng& rng) {
  const Index n = problem.num_components();
  if (n == 1) return 0;
  std::uniform_int_distribution<Index> pick(0, n - 1);
  return pick(rng);
}

}  // namespace dsblo

#include "dsblo/instance_io.hpp"
#include "dsblo/diagnostics.hpp"

#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <filesystem>

using namespace dsblo;

namespace {

// Term-by-term evaluator written independently of QuadraticBilevel::f.
double naive_f(const QuadraticBilevel& inst, const Vector& x, const Vector& y) {
  double total = 0.0;
  for (Index c = 0; c < inst.num_components(); ++c) {
    double v = 0.0;
    for (Index i = 0; i < x.size(); ++i) v += x(i) * x(i);
    for (Index i = 0; i < x.size(); ++i)
      for (Index j = 0; j < y.size(); ++j) v += 0.1 * x(i) * inst.q1()(i, j) * y(j);
    for (Index j = 0; j < y.size(); ++j) v += y(j) * y(j);
    for (Index i = 0; i < x.size(); ++i) v += inst.linear_x()(i, c) * x(i);
    for (Index j = 0; j < y.size(); ++j) v += inst.linear_y()(j, c) * y(j);
    total += v;
  }
  return total / static_cast<double>(inst.num_components());
}

Vector uniform_vector(Index n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = u(rng);
  return v;
}

}  // namespace

TEST(GenerateInstance, PaperDimensionsHaveExpectedShapes) {
  const auto inst = generate_instance({.d_u = 10, .d_l = 10, .k = 5, .seed = 1});
  EXPECT_EQ(inst.q1().rows(), 10);
  EXPECT_EQ(inst.q1().cols(), 10);
  EXPECT_EQ(inst.info().random_rows, 5);
  const auto& poly = inst.constraints();
  // 5 random rows followed by 2 * d_l box rows.
  EXPECT_EQ(poly.rows(), 5 + 20);
  EXPECT_EQ(poly.A.topRows(5).rows(), 5);
  EXPECT_EQ(poly.A.cols(), 10);
  EXPECT_EQ(poly.B.cols(), 10);
  EXPECT_EQ(poly.b.size(), 25);
}

TEST(GenerateInstance, EntriesUniformOnUnitIntervalAndOriginStrictlyFeasible) {
  const auto inst = generate_instance({.d_u = 6, .d_l = 4, .k = 5, .seed = 3});
  const auto& poly = inst.constraints();
  for (const Matrix* m : {&inst.q1(), &inst.q2()}) {
    EXPECT_GE(m->minCoeff(), 0.0);
    EXPECT_LT(m->maxCoeff(), 1.0);
  }
  EXPECT_GE(poly.A.topRows(5).minCoeff(), 0.0);
  EXPECT_GE(poly.B.topRows(5).minCoeff(), 0.0);
  EXPECT_GE(poly.b.head(5).minCoeff(), 0.1);
  const Vector slack = poly.slack(Vector::Zero(6), Vector::Zero(4));
  EXPECT_GT(slack.minCoeff(), 0.0);
}

TEST(GenerateInstance, ScalarInstanceIsStronglyConvexWithModulusTwo) {
  const auto inst = generate_instance({.d_u = 1, .d_l = 1, .k = 1, .seed = 0});
  EXPECT_EQ(inst.mu_g(), 2.0);
  const Vector x = Vector::Constant(1, 0.7);
  EXPECT_DOUBLE_EQ(inst.hess_yy_g(x, x)(0, 0), 2.0);
  // g(x, y) = x^2 + q2 x y + y^2
  const double q2 = inst.q2()(0, 0);
  const Vector y = Vector::Constant(1, -0.3);
  EXPECT_NEAR(inst.g(x, y), 0.49 + q2 * 0.7 * -0.3 + 0.09, 1e-15);
}

TEST(GenerateInstance, SameSeedIsBitIdentical) {
  const auto a = generate_instance({.d_u = 10, .d_l = 10, .k = 5, .seed = 42, .components = 4});
  const auto b = generate_instance({.d_u = 10, .d_l = 10, .k = 5, .seed = 42, .components = 4});
  EXPECT_EQ(fingerprint(a), fingerprint(b));
  EXPECT_TRUE((a.q1().array() == b.q1().array()).all());
  EXPECT_TRUE((a.linear_y().array() == b.linear_y().array()).all());
  const auto c = generate_instance({.d_u = 10, .d_l = 10, .k = 5, .seed = 43, .components = 4});
  EXPECT_NE(fingerprint(a), fingerprint(c));
}

TEST(GenerateInstance, ZeroRandomRowsLeavesOnlyTheBox) {
  const auto inst = generate_instance({.d_u = 3, .d_l = 2, .k = 0, .seed = 1});
  EXPECT_EQ(inst.constraints().rows(), 4);
  EXPECT_TRUE(inst.constraints().B.isZero());
}

TEST(GenerateInstance, RejectsUncertifiableBoxes) {
  EXPECT_THROW(generate_instance({.d_u = 2, .d_l = 2, .k = 1, .seed = 1, .box_radius = 0.0}), Error);
  try {
    generate_instance({.d_u = 2, .d_l = 2, .k = 1, .seed = 1, .box_radius = -1.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::GeneratorRejected);
  }
  EXPECT_THROW(generate_instance({.d_u = 0, .d_l = 2, .k = 1}), Error);
}

TEST(EvalF, TrivialPoints) {
  const auto inst = generate_instance({.d_u = 4, .d_l = 3, .k = 2, .seed = 1});
  EXPECT_EQ(eval_f(inst, Vector::Zero(4), Vector::Zero(3)), 0.0);
  Vector e1 = Vector::Zero(4);
  e1(0) = 1.0;
  EXPECT_DOUBLE_EQ(eval_f(inst, e1, Vector::Zero(3)), 2.0);
}

TEST(EvalF, MatchesNaiveEvaluatorOnSeedOneInstance) {
  const auto inst = generate_instance({.d_u = 10, .d_l = 10, .k = 5, .seed = 1});
  const auto multi = generate_instance({.d_u = 10, .d_l = 10, .k = 5, .seed = 1, .components = 8});
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector x = uniform_vector(10, rng, -2, 2);
    const Vector y = uniform_vector(10, rng, -2, 2);
    EXPECT_NEAR(eval_f(inst, x, y), naive_f(inst, x, y), 1e-12);
    EXPECT_NEAR(eval_f(multi, x, y), naive_f(multi, x, y), 1e-12);
  }
}

TEST(EvalF, RejectsDimensionMismatch) {
  const auto inst = generate_instance({.d_u = 4, .d_l = 3, .k = 2, .seed = 1});
  try {
    eval_f(inst, Vector::Zero(3), Vector::Zero(3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}

TEST(Oracle, GradientsMatchCentralDifferences) {
  const auto inst = generate_instance({.d_u = 5, .d_l = 4, .k = 3, .seed = 7, .components = 3});
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector x = uniform_vector(5, rng);
    const Vector y = uniform_vector(4, rng);
    const UpperGradient g = inst.grad_f(x, y);
    const Vector fd_x = fd_gradient([&](const Vector& v) { return inst.f(v, y); }, x, 1e-5);
    const Vector fd_y = fd_gradient([&](const Vector& v) { return inst.f(x, v); }, y, 1e-5);
    EXPECT_LE((g.x - fd_x).norm(), 1e-6 * std::max(1.0, g.x.norm()));
    EXPECT_LE((g.y - fd_y).norm(), 1e-6 * std::max(1.0, g.y.norm()));
  }
}

TEST(Oracle, LowerLevelDerivativesMatchFiniteDifferences) {
  const auto inst = generate_instance({.d_u = 5, .d_l = 4, .k = 3, .seed = 9});
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const Vector x = uniform_vector(5, rng);
    const Vector y = uniform_vector(4, rng);
    const Matrix hess_fd =
        fd_jacobian([&](const Vector& v) { return inst.grad_y_g(x, v); }, y, 1e-5);
    const Matrix jac_fd =
        fd_jacobian([&](const Vector& v) { return inst.grad_y_g(v, y); }, x, 1e-5);
    EXPECT_LE((hess_fd - inst.hess_yy_g(x, y)).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LE((hess_fd - 2.0 * Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LE((jac_fd - inst.q2().transpose()).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LE((jac_fd - inst.jac_xy_g(x, y)).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(SampleComponent, SingleComponentAlwaysZero) {
  const auto inst = generate_instance({.d_u = 2, .d_l = 2, .k = 1, .seed = 1});
  Rng rng(1);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_component(inst, rng), 0);
}

TEST(SampleComponent, FrequenciesWithinThreeSigma) {
  const auto inst = generate_instance({.d_u = 2, .d_l = 2, .k = 1, .seed = 1, .components = 4});
  Rng rng(2024);
  const int draws = 100000;
  std::array<int, 4> counts{};
  for (int i = 0; i < draws; ++i) ++counts[static_cast<std::size_t>(sample_component(inst, rng))];
  const double p = 0.25;
  const double sigma = std::sqrt(draws * p * (1 - p));
  for (int c : counts) EXPECT_LE(std::abs(c - draws * p), 3 * sigma);
}

TEST(SampleComponent, ComponentMeanEqualsFullGradient) {
  const auto inst = generate_instance({.d_u = 6, .d_l = 5, .k = 3, .seed = 2, .components = 8});
  Rng rng(3);
  const Vector x = uniform_vector(6, rng);
  const Vector y = uniform_vector(5, rng);
  UpperGradient mean{Vector::Zero(6), Vector::Zero(5)};
  for (Index xi = 0; xi < 8; ++xi) {
    const auto g = inst.grad_f_component(x, y, xi);
    mean.x += g.x / 8.0;
    mean.y += g.y / 8.0;
  }
  const auto full = inst.grad_f(x, y);
  EXPECT_LE((mean.x - full.x).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((mean.y - full.y).cwiseAbs().maxCoeff(), 1e-12);
  // The component terms differ from each other.
  EXPECT_GT((inst.grad_f_component(x, y, 0).x - inst.grad_f_component(x, y, 1).x).norm(), 1e-3);
}

TEST(InstanceIo, RoundTripIsLossless) {
  const auto dir = std::filesystem::temp_directory_path() / "dsblo_io_test";
  std::filesystem::create_directories(dir);
  for (std::uint64_t seed : {1u, 2u, 99u}) {
    const auto inst = generate_instance({.d_u = 7, .d_l = 5, .k = 4, .seed = seed, .components = 3});
    const auto path = dir / ("inst" + std::to_string(seed) + ".json");
    save_instance(inst, path);
    const auto back = load_instance(path);
    EXPECT_EQ(fingerprint(inst), fingerprint(back));
    EXPECT_TRUE((inst.constraints().A.array() == back.constraints().A.array()).all());
    EXPECT_EQ(back.info().seed, seed);
    EXPECT_EQ(back.info().random_rows, 4);
    EXPECT_EQ(to_json(back), to_json(inst));
  }
}

TEST(InstanceIo, RejectsMalformedDocuments) {
  auto j = to_json(generate_instance({.d_u = 2, .d_l = 2, .k = 1, .seed = 1}));
  auto bad = j;
  bad["format"] = "something-else";
  EXPECT_THROW(instance_from_json(bad), Error);
  bad = j;
  bad["Q1"]["data"].erase(0);
  EXPECT_THROW(instance_from_json(bad), Error);
  bad = j;
  bad["dims"]["d_u"] = 3;
  EXPECT_THROW(instance_from_json(bad), Error);
  EXPECT_THROW(load_instance("/nonexistent/dir/file.json"), Error);
}

#include "dsblo/diagnostics.hpp"
#include "dsblo/dsblo.hpp"
#include "dsblo/verify/schedule_oracle.hpp"
#include "support/toy_problems.hpp"

#include <gtest/gtest.h>

#include <stop_token>

using namespace dsblo;
using dsblo::testing::vec1;

namespace {

DsbloParams smooth_params(std::int64_t T) {
  DsbloParams p;
  p.mode = ManualMode{.beta = 0.9, .gamma1 = 1.0, .gamma2 = 10.0, .K = 5, .delta_y = 1e-8};
  p.T = T;
  p.x1 = vec1(1.0);
  p.seed = 3;
  return p;
}

}  // namespace

TEST(Schedule, TheoryModeMatchesHighPrecisionOracle) {
  Rng rng(2026);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const double dv = 5.0 * u(rng);
    const double lf = 0.1 + 10.0 * u(rng);
    const double eps = (dv + 2 * lf) * (1e-3 + 0.999 * u(rng)) * (trial % 4 == 0 ? 0.01 : 1.0);
    const double dbar = 0.01 + 2.0 * u(rng);
    const double lfdelta = trial % 3 == 0 ? 1e-6 * u(rng) : std::numeric_limits<double>::infinity();
    DsbloParams p;
    p.epsilon = eps;
    p.delta_bar = dbar;
    p.mode = TheoryMode{dv, lf, lfdelta};
    const auto s = schedule(p);
    const auto o = verify::mpfr_schedule(eps, dv, lf, dbar, lfdelta);
    EXPECT_EQ(s.K, o.K) << "trial " << trial;
    EXPECT_EQ(s.beta, o.beta) << "trial " << trial;
    EXPECT_EQ(s.gamma1, o.gamma1) << "trial " << trial;
    EXPECT_EQ(s.gamma2, o.gamma2) << "trial " << trial;
    EXPECT_EQ(s.delta_y, o.delta_y) << "trial " << trial;
    EXPECT_EQ(s.delta_bar, dbar);
  }
}

TEST(Schedule, WorkedExample) {
  DsbloParams p;
  p.epsilon = 1.0;
  p.delta_bar = 1.0;
  p.mode = TheoryMode{.delta_v = 0.0, .lf_bar = 5.0};
  const auto s = schedule(p);
  EXPECT_EQ(s.beta, 0.9999791666666666);
  EXPECT_EQ(s.K, 276877);
  EXPECT_EQ(s.gamma1, 276877.0);
  EXPECT_EQ(s.gamma2, 11075080.0);
  EXPECT_EQ(s.delta_y, 7.8125e-05);
}

TEST(Schedule, ManualModePassesThrough) {
  DsbloParams p;
  p.mode = ManualMode{.beta = 0.9, .gamma1 = 2.0, .gamma2 = 4.0, .K = 10, .delta_y = 1e-3};
  const auto s = schedule(p);
  EXPECT_EQ(s.beta, 0.9);
  EXPECT_EQ(s.gamma1, 2.0);
  EXPECT_EQ(s.gamma2, 4.0);
  EXPECT_EQ(s.K, 10);
  EXPECT_EQ(s.delta_y, 1e-3);
  EXPECT_EQ(s.delta_bar, 5.0);
}

TEST(Schedule, InfeasibleInputsRejected) {
  auto code_of = [](const DsbloParams& p) {
    try {
      schedule(p);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::Internal;
  };
  DsbloParams p;
  p.mode = TheoryMode{.delta_v = 0.0, .lf_bar = 1.0};
  p.epsilon = 2.5;  // exceeds dv + 2 L = 2
  EXPECT_EQ(code_of(p), ErrorCode::ScheduleInfeasible);
  p.epsilon = 0.0;
  EXPECT_EQ(code_of(p), ErrorCode::ScheduleInfeasible);
  p.epsilon = 1.0;
  p.delta_bar = -1.0;
  EXPECT_EQ(code_of(p), ErrorCode::ScheduleInfeasible);
  p.delta_bar = 1.0;
  p.mode = ManualMode{.beta = 1.0};
  EXPECT_EQ(code_of(p), ErrorCode::ScheduleInfeasible);
  p.mode = ManualMode{.K = 0};
  EXPECT_EQ(code_of(p), ErrorCode::ScheduleInfeasible);
}

TEST(StepSize, Examples) {
  EXPECT_DOUBLE_EQ(step_size(3.0, 2.0, 4.0), 0.1);
  EXPECT_DOUBLE_EQ(step_size(0.0, 2.0, 4.0), 0.25);
  Vector m(2);
  m << 3.0, 4.0;
  EXPECT_DOUBLE_EQ(step_size(m, 1.0, 5.0), 0.1);
  EXPECT_THROW(step_size(1.0, 0.0, 1.0), Error);
}

TEST(RunDsblo, SmoothScalarConvergesToOrigin) {
  const auto p = dsblo::testing::smooth_scalar(1.0);
  const auto log = run_dsblo(p, smooth_params(500));
  ASSERT_EQ(log.records.size(), 501u);
  EXPECT_EQ(log.records.front().t, 1);
  EXPECT_EQ(log.records.back().t, 501);
  EXPECT_LE(std::abs(log.records.back().x(0)), 1e-2);
  EXPECT_EQ(log.algorithm, "dsblo-I");
}

TEST(RunDsblo, RecordsSatisfyUpdateRules) {
  const auto inst = generate_instance({.d_u = 4, .d_l = 4, .k = 3, .seed = 2});
  DsbloParams p;
  p.mode = ManualMode{.beta = 0.8, .gamma1 = 2.0, .gamma2 = 20.0, .K = 6, .delta_y = 1e-8};
  p.T = 80;
  p.seed = 11;
  const auto log = run_dsblo(inst, p);
  const auto& r = log.records;
  for (std::size_t i = 1; i < r.size(); ++i) {
    const auto& prev = r[i - 1];
    const auto& cur = r[i];
    EXPECT_EQ(cur.t, prev.t + 1);
    // x_{t+1} = x_t - eta_t m_t
    EXPECT_LE((cur.x - (prev.x - prev.eta * prev.m)).norm(), 1e-12);
    // m_{t+1} = beta m_t + (1 - beta) g_{t+1}
    EXPECT_LE((cur.m - (0.8 * prev.m + 0.2 * cur.grad)).norm(), 1e-10);
    EXPECT_DOUBLE_EQ(cur.eta, 1.0 / (2.0 * cur.m.norm() + 20.0));
    // x_bar_{t+1} on the segment [x_t, x_{t+1}]
    EXPECT_GE(cur.segment, 0.0);
    EXPECT_LE(cur.segment, 1.0);
    EXPECT_LE((cur.x_bar - ((1 - cur.segment) * prev.x + cur.segment * cur.x)).norm(), 1e-12);
    EXPECT_LE(cur.q_norm, p.perturb_radius);
  }
  EXPECT_EQ(r.front().m, r.front().grad);
  const auto check = check_window_displacement(log, 6, log.schedule.delta_bar);
  EXPECT_EQ(check.violations, 0);
  EXPECT_GT(check.windows, 0);
}

TEST(RunDsblo, SameSeedIsBitIdentical) {
  const auto inst = generate_instance({.d_u = 5, .d_l = 5, .k = 3, .seed = 4});
  DsbloParams p;
  p.mode = ManualMode{.beta = 0.9, .gamma1 = 1.0, .gamma2 = 10.0, .K = 5, .delta_y = 1e-8};
  p.T = 40;
  p.seed = 9;
  const auto a = run_dsblo(inst, p);
  const auto b = run_dsblo(inst, p);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_TRUE((a.records[i].x.array() == b.records[i].x.array()).all());
    EXPECT_TRUE((a.records[i].grad.array() == b.records[i].grad.array()).all());
  }
  p.seed = 10;
  const auto c = run_dsblo(inst, p);
  EXPECT_NE(a.records.back().x, c.records.back().x);
}

TEST(RunDsblo, PerturbationStreamIndependentOfOption) {
  const auto inst = generate_instance({.d_u = 4, .d_l = 4, .k = 3, .seed = 5, .components = 4});
  DsbloParams p;
  p.mode = ManualMode{.beta = 0.9, .gamma1 = 1.0, .gamma2 = 10.0, .K = 5, .delta_y = 1e-8};
  p.T = 30;
  p.seed = 21;
  const auto one = run_dsblo(inst, p);
  p.option = GradientOption::Sampled;
  const auto two = run_dsblo(inst, p);
  EXPECT_EQ(two.algorithm, "dsblo-II");
  ASSERT_EQ(one.records.size(), two.records.size());
  bool some_component_nonzero = false;
  for (std::size_t i = 0; i < one.records.size(); ++i) {
    // q and the segment draws come from their own streams.
    EXPECT_EQ(one.records[i].q_norm, two.records[i].q_norm);
    EXPECT_EQ(one.records[i].segment, two.records[i].segment);
    EXPECT_EQ(one.records[i].component, -1);
    EXPECT_GE(two.records[i].component, 0);
    EXPECT_LT(two.records[i].component, 4);
    some_component_nonzero |= two.records[i].component > 0;
  }
  EXPECT_TRUE(some_component_nonzero);
}

TEST(RunDsblo, TheoryModeRunKeepsWindowInvariant) {
  const auto inst = generate_instance({.d_u = 3, .d_l = 3, .k = 2, .seed = 7});
  DsbloParams p;
  p.epsilon = 5.0;
  p.delta_bar = 0.5;
  p.mode = TheoryMode{.delta_v = 0.0, .lf_bar = 10.0};
  p.T = schedule(p).K + 50;
  const auto log = run_dsblo(inst, p);
  const auto check = check_window_displacement(log, log.schedule.K, log.schedule.delta_bar);
  EXPECT_EQ(check.violations, 0);
  EXPECT_GE(check.windows, 50);
}

TEST(RunDsblo, RejectsBudgetNotExceedingK) {
  const auto p = dsblo::testing::smooth_scalar(1.0);
  EXPECT_THROW(run_dsblo(p, smooth_params(5)), Error);
}

TEST(RunDsblo, StopTokenCancelsRun) {
  const auto p = dsblo::testing::smooth_scalar(1.0);
  std::stop_source source;
  RunOptions opt;
  opt.stop = source.get_token();
  opt.on_iterate = [&](const IterateRecord& rec) {
    if (rec.t == 10) source.request_stop();
  };
  const auto log = run_dsblo(p, smooth_params(500), opt);
  EXPECT_TRUE(log.cancelled);
  EXPECT_EQ(log.records.size(), 10u);
}

TEST(RunDsblo, EvaluatesObjectiveOnSchedule) {
  const auto p = dsblo::testing::smooth_scalar(1.0);
  RunOptions opt;
  opt.eval_every = 100;
  const auto log = run_dsblo(p, smooth_params(250), opt);
  for (const auto& r : log.records) {
    const bool expected = r.t == 1 || r.t == 251 || r.t % 100 == 0;
    EXPECT_EQ(std::isfinite(r.F), expected) << "t " << r.t;
    if (expected) EXPECT_NEAR(r.F, 2.0 * r.x(0) * r.x(0), 1e-9);
  }
}

TEST(RunIgd, SmoothScalarConverges) {
  const auto p = dsblo::testing::smooth_scalar(1.0);
  IgdParams params{.step = 0.05, .T = 100, .x1 = vec1(1.0)};
  const auto log = run_igd_baseline(p, params);
  ASSERT_EQ(log.records.size(), 101u);
  EXPECT_LE(std::abs(log.records.back().x(0)), 1e-3);
  EXPECT_EQ(log.algorithm, "igd");
}

TEST(RunIgd, ZeroStepKeepsIterateFixed) {
  const auto p = dsblo::testing::smooth_scalar(1.0);
  IgdParams params{.step = 0.0, .T = 20, .x1 = vec1(0.7)};
  const auto log = run_igd_baseline(p, params);
  for (const auto& r : log.records) EXPECT_EQ(r.x(0), 0.7);
  EXPECT_THROW(run_igd_baseline(p, IgdParams{.step = -1.0}), Error);
}

#pragma once

#include "dsblo/implicit_grad.hpp"

#include <boost/multiprecision/cpp_bin_float.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stop_token>
#include <string>
#include <variant>
#include <vector>

namespace dsblo {

/// Parameters derived from problem constants (variance bound delta_v,
/// gradient bound L_F_bar, and the optional L_F * delta accuracy slot).
struct TheoryMode {
  double delta_v = 0.0;
  double lf_bar = 1.0;
  double lf_delta = std::numeric_limits<double>::infinity();
};

struct ManualMode {
  double beta = 0.9;
  double gamma1 = 1.0;
  double gamma2 = 10.0;
  std::int64_t K = 10;
  double delta_y = 1e-8;
};

enum class GradientOption { Deterministic, Sampled };

struct DsbloParams {
  double epsilon = 1.0;
  double delta_bar = 1.0;  // theory mode only; manual mode uses K / gamma1
  std::variant<TheoryMode, ManualMode> mode = ManualMode{};
  double perturb_radius = 1e-3;
  GradientOption option = GradientOption::Deterministic;
  std::int64_t T = 100;
  double ll_tol = 1e-8;
  std::uint64_t seed = 0;
  Vector x1;  // empty means the origin
  int max_resamples = 5;
};

struct ResolvedSchedule {
  double beta = 0.0;
  std::int64_t K = 0;
  double gamma1 = 0.0;
  double gamma2 = 0.0;
  double delta_y = 0.0;
  double delta_bar = 0.0;  // K / gamma1, the radius every window stays inside
};

/// Resolve the step-size constants.
///
/// Theory mode evaluates, in 50-digit binary floating point and then rounds
/// each result to double once:
///   beta    = 1 - eps^2 / (960 (dv^2 + 2 L^2))
///   K       = ceil( ln(32 (dv + 2 L) / eps) / ln(1 / beta) )
///   gamma1  = K / delta_bar
///   gamma2  = 4 gamma1 (dv + 2 L)
///   delta_y = min{ eps^2 / (1280 (dv + 2 L)), 2 eps / 3, L, L_F delta }
/// where dv = delta_v and L = L_F_bar. It needs eps <= dv + 2 L and
/// eps^2 <= 480 (dv^2 + 2 L^2) (so that beta >= 1/2).
inline ResolvedSchedule schedule(const DsbloParams& params) {
  ResolvedSchedule out;
  if (const auto* manual = std::get_if<ManualMode>(&params.mode)) {
    if (!(manual->beta > 0.0 && manual->beta < 1.0))
      throw Error(ErrorCode::ScheduleInfeasible, "manual mode needs 0 < beta < 1");
    if (!(manual->gamma1 > 0.0)) throw Error(ErrorCode::ScheduleInfeasible, "manual mode needs gamma1 > 0");
    if (!(manual->gamma2 > 0.0)) throw Error(ErrorCode::ScheduleInfeasible, "manual mode needs gamma2 > 0");
    if (!(manual->K >= 1)) throw Error(ErrorCode::ScheduleInfeasible, "manual mode needs K >= 1");
    if (!(manual->delta_y > 0.0)) throw Error(ErrorCode::ScheduleInfeasible, "manual mode needs delta_y > 0");
    out.beta = manual->beta;
    out.K = manual->K;
    out.gamma1 = manual->gamma1;
    out.gamma2 = manual->gamma2;
    out.delta_y = manual->delta_y;
    out.delta_bar = static_cast<double>(manual->K) / manual->gamma1;
    return out;
  }

  const auto& th = std::get<TheoryMode>(params.mode);
  if (!(params.epsilon > 0.0)) throw Error(ErrorCode::ScheduleInfeasible, "epsilon > 0 violated");
  if (!(params.delta_bar > 0.0)) throw Error(ErrorCode::ScheduleInfeasible, "delta_bar > 0 violated");
  if (!(th.delta_v >= 0.0)) throw Error(ErrorCode::ScheduleInfeasible, "delta_v >= 0 violated");
  if (!(th.lf_bar > 0.0)) throw Error(ErrorCode::ScheduleInfeasible, "L_F_bar > 0 violated");
  if (!(th.lf_delta > 0.0)) throw Error(ErrorCode::ScheduleInfeasible, "L_F * delta > 0 violated");

  using Big = boost::multiprecision::cpp_bin_float_50;
  const Big eps = params.epsilon;
  const Big dv = th.delta_v;
  const Big lf = th.lf_bar;
  const Big lin = dv + 2 * lf;
  const Big quad = dv * dv + 2 * lf * lf;

  if (eps > lin) {
    throw Error(ErrorCode::ScheduleInfeasible, "epsilon <= delta_v + 2 L_F_bar violated");
  }
  if (eps * eps > 480 * quad) {
    throw Error(ErrorCode::ScheduleInfeasible,
                "epsilon^2 <= 480 (delta_v^2 + 2 L_F_bar^2) violated (beta would drop below 1/2)");
  }

  const Big shrink = eps * eps / (960 * quad);
  const Big beta = 1 - shrink;
  const Big k_real = log(32 * lin / eps) / -boost::multiprecision::log1p(-shrink);
  const Big k_ceil = ceil(k_real);
  if (k_ceil > Big(std::numeric_limits<std::int64_t>::max() / 2)) {
    throw Error(ErrorCode::ScheduleInfeasible, "K does not fit in a 64-bit counter");
  }
  const Big gamma1 = k_ceil / Big(params.delta_bar);
  const Big gamma2 = 4 * gamma1 * lin;
  Big delta_y = eps * eps / (1280 * lin);
  delta_y = std::min(delta_y, Big(2 * eps / 3));
  delta_y = std::min(delta_y, lf);
  if (std::isfinite(th.lf_delta)) delta_y = std::min(delta_y, Big(th.lf_delta));

  out.beta = static_cast<double>(beta);
  out.K = static_cast<std::int64_t>(k_ceil);
  out.gamma1 = static_cast<double>(gamma1);
  out.gamma2 = static_cast<double>(gamma2);
  out.delta_y = static_cast<double>(delta_y);
  out.delta_bar = params.delta_bar;
  return out;
}

/// eta = 1 / (gamma1 |m| + gamma2).
inline double step_size(double m_norm, double gamma1, double gamma2) {
  require(gamma1 > 0.0 && gamma2 > 0.0, ErrorCode::InvalidArgument, "gamma1, gamma2 must be positive");
  return 1.0 / (gamma1 * m_norm + gamma2);
}

inline double step_size(const Vector& m, double gamma1, double gamma2) {
  return step_size(m.norm(), gamma1, gamma2);
}

struct IterateRecord {
  std::int64_t t = 0;
  Vector x;          // x_t
  Vector x_bar;      // point where the gradient was taken (x_bar_1 = x_1)
  double segment = 0.0;  // lambda with x_bar_t = (1 - lambda) x_{t-1} + lambda x_t
  double q_norm = 0.0;
  double eta = 0.0;  // step used to leave x_t
  Vector m;          // m_t
  double m_norm = 0.0;
  Vector grad;       // g_t
  double F = std::numeric_limits<double>::quiet_NaN();  // unperturbed F(x_t) when evaluated
  double wall_time = 0.0;
  std::int64_t component = -1;
  int resamples = 0;
};

struct RunLog {
  std::string algorithm;
  std::uint64_t seed = 0;
  ResolvedSchedule schedule;
  std::vector<IterateRecord> records;
  int resamples = 0;
  bool cancelled = false;
  double total_seconds = 0.0;
  double ll_seconds = 0.0;
  double eval_seconds = 0.0;
};

struct RunOptions {
  /// Evaluate the unperturbed F(x_t) every this many iterations (0 = never).
  /// The first and last iterates are always evaluated when nonzero.
  std::int64_t eval_every = 0;
  std::function<void(const IterateRecord&)> on_iterate;
  std::stop_token stop;
  LowerOptions lower;
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct GradientSample {
  Vector grad;
  double q_norm = 0.0;
  std::int64_t component = -1;
  int resamples = 0;
};

/// Fresh q, lower-level solve and implicit gradient at x. Degenerate active
/// sets trigger a new draw of q, up to `max_resamples` times.
template <BilevelProblem P>
GradientSample perturbed_gradient(const P& problem, const Vector& x, double radius, double ll_tol,
                                  bool sampled, int max_resamples, Rng& q_rng, Rng& xi_rng,
                                  const LowerOptions& lower, double& ll_seconds) {
  GradientSample out;
  out.component = sampled ? static_cast<std::int64_t>(sample_component(problem, xi_rng)) : -1;
  for (int attempt = 0;; ++attempt) {
    const Perturbation q = sample_perturbation(radius, problem.dim_lower(), q_rng);
    try {
      const auto start = Clock::now();
      const LLSolution sol = solve_lower(problem, x, q, ll_tol, lower);
      ll_seconds += seconds_since(start);
      const ImplicitGradient ig = sampled ? sampled_implicit_gradient(problem, x, sol, out.component)
                                          : implicit_gradient(problem, x, sol);
      out.grad = ig.grad;
      out.q_norm = q.q.norm();
      out.resamples = attempt;
      return out;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DegenerateActiveSet || attempt >= max_resamples) throw;
    }
  }
}

template <BilevelProblem P>
void maybe_eval(const P& problem, IterateRecord& rec, std::int64_t last_t, const RunOptions& opt,
                double ll_tol, RunLog& log) {
  if (opt.eval_every <= 0) return;
  if (rec.t == 1 || rec.t == last_t || rec.t % opt.eval_every == 0) {
    const auto start = Clock::now();
    rec.F = eval_F_exact(problem, rec.x, ll_tol, opt.lower);
    log.eval_seconds += seconds_since(start);
  }
}

}  // namespace detail

/// Checks the window bound on the newest record: with t the newest index,
/// sum_{j=t-K}^{t-1} eta_j |m_j| <= K/gamma1 and |x_{t-K} - x_bar_i| <= delta_bar
/// for every i in [t-K+1, t]. Records are indexed t = 1, 2, ...
inline void assert_window(const std::vector<IterateRecord>& recs, const ResolvedSchedule& s) {
  const auto t = static_cast<std::int64_t>(recs.size());
  if (t <= s.K) return;
  const double bound = static_cast<double>(s.K) / s.gamma1;
  const double slack = 1e-12 * std::max(1.0, bound);
  double travelled = 0.0;
  for (std::int64_t j = t - s.K; j <= t - 1; ++j) {
    const auto& r = recs[static_cast<std::size_t>(j - 1)];
    travelled += r.eta * r.m_norm;
  }
  if (travelled > bound + slack) {
    throw Error(ErrorCode::Internal, "window travel exceeds K / gamma1", travelled);
  }
  const Vector& anchor = recs[static_cast<std::size_t>(t - s.K - 1)].x;
  for (std::int64_t i = t - s.K + 1; i <= t; ++i) {
    const double d = (anchor - recs[static_cast<std::size_t>(i - 1)].x_bar).norm();
    if (d > s.delta_bar + slack) {
      throw Error(ErrorCode::Internal, "window point left the delta_bar ball", d);
    }
  }
}

/// The doubly stochastic outer loop:
///   x_{t+1}    = x_t - eta_t m_t,  eta_t = 1 / (gamma1 |m_t| + gamma2)
///   x_bar_{t+1} ~ U[x_t, x_{t+1}]
///   g_{t+1}    = implicit gradient at x_bar_{t+1} under a fresh q_{t+1}
///                (one fresh component xi_{t+1} under the sampled option)
///   m_{t+1}    = beta m_t + (1 - beta) g_{t+1},  m_1 = g_1.
/// Produces records t = 1 .. T+1.
template <BilevelProblem P>
RunLog run_dsblo(const P& problem, const DsbloParams& params, const RunOptions& opt = {}) {
  const ResolvedSchedule sched = schedule(params);
  require(params.T > sched.K, ErrorCode::InvalidArgument, "iteration budget T must exceed K");
  require(params.perturb_radius > 0.0, ErrorCode::InvalidArgument, "perturbation radius must be positive");
  const Index du = problem.dim_upper();
  Vector x = params.x1.size() == 0 ? Vector::Zero(du) : params.x1;
  require_dims(x.size(), du, "x1");
  const bool sampled = params.option == GradientOption::Sampled;

  Rng q_rng = make_stream(params.seed, streams::kPerturbation);
  Rng seg_rng = make_stream(params.seed, streams::kSegment);
  Rng xi_rng = make_stream(params.seed, streams::kComponent);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  RunLog log;
  log.algorithm = sampled ? "dsblo-II" : "dsblo-I";
  log.seed = params.seed;
  log.schedule = sched;
  log.records.reserve(static_cast<std::size_t>(params.T + 1));
  const auto start = detail::Clock::now();
  const std::int64_t last_t = params.T + 1;

  auto emit = [&](IterateRecord rec) {
    detail::maybe_eval(problem, rec, last_t, opt, params.ll_tol, log);
    rec.wall_time = detail::seconds_since(start);
    log.resamples += rec.resamples;
    log.records.push_back(std::move(rec));
    assert_window(log.records, sched);
    if (opt.on_iterate) opt.on_iterate(log.records.back());
  };

  auto first = detail::perturbed_gradient(problem, x, params.perturb_radius, params.ll_tol, sampled,
                                          params.max_resamples, q_rng, xi_rng, opt.lower,
                                          log.ll_seconds);
  Vector m = first.grad;

  IterateRecord rec;
  rec.t = 1;
  rec.x = x;
  rec.x_bar = x;
  rec.q_norm = first.q_norm;
  rec.m = m;
  rec.m_norm = m.norm();
  rec.eta = step_size(rec.m_norm, sched.gamma1, sched.gamma2);
  rec.grad = std::move(first.grad);
  rec.component = first.component;
  rec.resamples = first.resamples;
  emit(std::move(rec));

  for (std::int64_t t = 1; t <= params.T; ++t) {
    if (opt.stop.stop_requested()) {
      log.cancelled = true;
      break;
    }
    const double eta = log.records.back().eta;
    const Vector x_next = x - eta * m;
    const double lam = unit(seg_rng);
    const Vector x_bar = (1.0 - lam) * x + lam * x_next;

    auto sample = detail::perturbed_gradient(problem, x_bar, params.perturb_radius, params.ll_tol,
                                             sampled, params.max_resamples, q_rng, xi_rng,
                                             opt.lower, log.ll_seconds);
    m = sched.beta * m + (1.0 - sched.beta) * sample.grad;
    x = x_next;

    IterateRecord next;
    next.t = t + 1;
    next.x = x;
    next.x_bar = x_bar;
    next.segment = lam;
    next.q_norm = sample.q_norm;
    next.m = m;
    next.m_norm = m.norm();
    next.eta = step_size(next.m_norm, sched.gamma1, sched.gamma2);
    next.grad = std::move(sample.grad);
    next.component = sample.component;
    next.resamples = sample.resamples;
    emit(std::move(next));
  }
  log.total_seconds = detail::seconds_since(start);
  return log;
}

struct IgdParams {
  double step = 0.05;
  std::int64_t T = 100;
  double ll_tol = 1e-8;
  double perturb_radius = 1e-3;
  std::uint64_t seed = 0;
  Vector x1;
  int max_resamples = 5;
};

/// Plain inexact implicit-gradient descent, x_{t+1} = x_t - step * g_t, with
/// a fresh small q_t at every iterate. Records t = 1 .. T+1; `eta` holds the
/// step and `m` the gradient itself.
template <BilevelProblem P>
RunLog run_igd_baseline(const P& problem, const IgdParams& params, const RunOptions& opt = {}) {
  require(params.step >= 0.0, ErrorCode::InvalidArgument, "step must be nonnegative");
  require(params.perturb_radius > 0.0, ErrorCode::InvalidArgument, "perturbation radius must be positive");
  require(params.T >= 0, ErrorCode::InvalidArgument, "T must be nonnegative");
  const Index du = problem.dim_upper();
  Vector x = params.x1.size() == 0 ? Vector::Zero(du) : params.x1;
  require_dims(x.size(), du, "x1");

  Rng q_rng = make_stream(params.seed, streams::kPerturbation);
  Rng xi_rng = make_stream(params.seed, streams::kComponent);

  RunLog log;
  log.algorithm = "igd";
  log.seed = params.seed;
  log.records.reserve(static_cast<std::size_t>(params.T + 1));
  const auto start = detail::Clock::now();
  const std::int64_t last_t = params.T + 1;

  for (std::int64_t t = 1; t <= last_t; ++t) {
    if (opt.stop.stop_requested()) {
      log.cancelled = true;
      break;
    }
    auto sample = detail::perturbed_gradient(problem, x, params.perturb_radius, params.ll_tol, false,
                                             params.max_resamples, q_rng, xi_rng, opt.lower,
                                             log.ll_seconds);
    IterateRecord rec;
    rec.t = t;
    rec.x = x;
    rec.x_bar = x;
    rec.q_norm = sample.q_norm;
    rec.eta = params.step;
    rec.m = sample.grad;
    rec.m_norm = sample.grad.norm();
    rec.grad = sample.grad;
    rec.resamples = sample.resamples;
    detail::maybe_eval(problem, rec, last_t, opt, params.ll_tol, log);
    rec.wall_time = detail::seconds_since(start);
    log.resamples += rec.resamples;
    log.records.push_back(std::move(rec));
    if (opt.on_iterate) opt.on_iterate(log.records.back());
    x = x - params.step * sample.grad;
  }
  log.total_seconds = detail::seconds_since(start);
  return log;
}

}  // namespace dsblo

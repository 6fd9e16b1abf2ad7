#pragma once

#include "dsblo/dsblo.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <vector>

namespace dsblo {

// ---------------------------------------------------------------------------
// Windowed stationarity
// ---------------------------------------------------------------------------

struct StationarityWindow {
  std::int64_t t = 0;
  std::int64_t K = 0;
  std::vector<double> weights;  // alpha_i for i = t-K+1 .. t
  Vector combined;
  double norm = 0.0;
};

/// alpha_i = beta^(t-i) (1 - beta) / (1 - beta^K), listed oldest first.
inline std::vector<double> window_weights(double beta, std::int64_t K) {
  require(beta > 0.0 && beta < 1.0, ErrorCode::InvalidArgument, "beta must lie in (0, 1)");
  require(K >= 1, ErrorCode::InvalidArgument, "K must be >= 1");
  const double log_beta = std::log(beta);
  const double denom = -std::expm1(static_cast<double>(K) * log_beta);
  std::vector<double> w(static_cast<std::size_t>(K));
  for (std::int64_t k = 0; k < K; ++k) {
    const std::int64_t power = K - 1 - k;
    w[static_cast<std::size_t>(k)] = std::exp(static_cast<double>(power) * log_beta) * (1.0 - beta) / denom;
  }
  return w;
}

namespace detail {

inline const IterateRecord& record_at(const RunLog& log, std::int64_t t) {
  return log.records.at(static_cast<std::size_t>(t - 1));
}

inline StationarityWindow combine_window(std::int64_t t, std::int64_t K, double beta,
                                         const std::function<const Vector&(std::int64_t)>& grad_at) {
  if (t <= K) throw Error(ErrorCode::WindowIncomplete, "window needs t > K");
  StationarityWindow w;
  w.t = t;
  w.K = K;
  w.weights = window_weights(beta, K);
  for (std::int64_t k = 0; k < K; ++k) {
    const Vector& g = grad_at(t - K + 1 + k);
    if (k == 0) w.combined = Vector::Zero(g.size());
    w.combined += w.weights[static_cast<std::size_t>(k)] * g;
  }
  w.norm = w.combined.norm();
  return w;
}

}  // namespace detail

/// |sum_i alpha_i g_i| over i = t-K+1 .. t, from the gradients stored in the log.
inline StationarityWindow stationarity_window(const RunLog& log, std::int64_t t, double beta,
                                              std::int64_t K) {
  if (t <= K) throw Error(ErrorCode::WindowIncomplete, "window needs t > K");
  if (t > static_cast<std::int64_t>(log.records.size())) {
    throw Error(ErrorCode::WindowIncomplete, "log holds fewer than t records");
  }
  return detail::combine_window(t, K, beta,
                                [&](std::int64_t i) -> const Vector& { return detail::record_at(log, i).grad; });
}

/// Monte Carlo estimate of grad Fbar(x) = E_q grad F_q(x) from n fresh draws of q.
template <BilevelProblem P>
Vector mc_smoothed_gradient(const P& problem, const Vector& x, double radius, int n, Rng& rng,
                            double ll_tol = 1e-10, const LowerOptions& lower = {}) {
  require(n >= 1, ErrorCode::InvalidArgument, "need at least one sample");
  Vector sum = Vector::Zero(problem.dim_upper());
  int used = 0;
  int degenerate = 0;
  while (used < n) {
    const Perturbation q = sample_perturbation(radius, problem.dim_lower(), rng);
    try {
      const LLSolution sol = solve_lower(problem, x, q, ll_tol, lower);
      sum += implicit_gradient(problem, x, sol).grad;
      ++used;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DegenerateActiveSet || ++degenerate > n) throw;
    }
  }
  return sum / static_cast<double>(n);
}

struct StationaritySummary {
  std::vector<std::int64_t> t;
  std::vector<double> norm;     // window norm at each t > K
  double min_norm = std::numeric_limits<double>::quiet_NaN();
  std::int64_t min_t = 0;
  double trailing_average = std::numeric_limits<double>::quiet_NaN();
  std::int64_t trailing_from = 0;  // first t included in the trailing average
};

namespace detail {

inline void summarize(StationaritySummary& s, double trailing_fraction) {
  if (s.norm.empty()) return;
  const auto it = std::min_element(s.norm.begin(), s.norm.end());
  s.min_norm = *it;
  s.min_t = s.t[static_cast<std::size_t>(it - s.norm.begin())];
  const std::size_t n = s.norm.size();
  const auto count = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(trailing_fraction * static_cast<double>(n))));
  const std::size_t from = n - std::min(count, n);
  double acc = 0.0;
  for (std::size_t i = from; i < n; ++i) acc += s.norm[i];
  s.trailing_average = acc / static_cast<double>(n - from);
  s.trailing_from = s.t[from];
}

}  // namespace detail

/// Window norms for every t > K using the stored gradients. The trailing
/// average covers the last `trailing_fraction` of the windows.
inline StationaritySummary stationarity_series(const RunLog& log, double beta, std::int64_t K,
                                               double trailing_fraction = 0.1) {
  StationaritySummary s;
  const auto n = static_cast<std::int64_t>(log.records.size());
  for (std::int64_t t = K + 1; t <= n; ++t) {
    s.t.push_back(t);
    s.norm.push_back(stationarity_window(log, t, beta, K).norm);
  }
  detail::summarize(s, trailing_fraction);
  return s;
}

/// Same summary with every window point's gradient replaced by a Monte Carlo
/// estimate of grad Fbar(x_bar_i) over `n_q` fresh draws of q. Only the
/// windows of the trailing region are evaluated.
template <BilevelProblem P>
StationaritySummary stationarity_series_mc(const P& problem, const RunLog& log, double beta,
                                           std::int64_t K, double radius, int n_q, std::uint64_t seed,
                                           double trailing_fraction = 0.1,
                                           const LowerOptions& lower = {}) {
  StationaritySummary s;
  const auto n = static_cast<std::int64_t>(log.records.size());
  if (n <= K) return s;
  const auto windows = n - K;
  const auto count = std::max<std::int64_t>(
      1, static_cast<std::int64_t>(std::ceil(trailing_fraction * static_cast<double>(windows))));
  const std::int64_t first_t = n - std::min(count, windows) + 1;
  Rng rng = make_stream(seed, streams::kMonteCarlo);
  std::map<std::int64_t, Vector> cache;
  auto grad_at = [&](std::int64_t i) -> const Vector& {
    auto it = cache.find(i);
    if (it == cache.end()) {
      it = cache.emplace(i, mc_smoothed_gradient(problem, detail::record_at(log, i).x_bar, radius,
                                                 n_q, rng, 1e-10, lower))
               .first;
    }
    return it->second;
  };
  for (std::int64_t t = first_t; t <= n; ++t) {
    s.t.push_back(t);
    s.norm.push_back(detail::combine_window(t, K, beta, grad_at).norm);
  }
  detail::summarize(s, 1.0);
  return s;
}

/// Independent re-check of the window displacement: every x_bar_i with
/// i in [t-K+1, t] lies within delta_bar of x_{t-K}. Returns the largest
/// ratio |x_{t-K} - x_bar_i| / delta_bar seen and the number of violations.
struct WindowCheck {
  std::int64_t windows = 0;
  std::int64_t violations = 0;
  double worst_ratio = 0.0;
};

inline WindowCheck check_window_displacement(const RunLog& log, std::int64_t K, double delta_bar,
                                             double rel_tol = 1e-12) {
  WindowCheck out;
  const auto n = static_cast<std::int64_t>(log.records.size());
  for (std::int64_t t = K + 1; t <= n; ++t) {
    ++out.windows;
    const Vector& anchor = log.records[static_cast<std::size_t>(t - K - 1)].x;
    bool bad = false;
    for (std::int64_t i = t - K + 1; i <= t; ++i) {
      const double ratio = (log.records[static_cast<std::size_t>(i - 1)].x_bar - anchor).norm() / delta_bar;
      out.worst_ratio = std::max(out.worst_ratio, ratio);
      if (ratio > 1.0 + rel_tol) bad = true;
    }
    if (bad) ++out.violations;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Smoothed objective and the perturbation error bound
// ---------------------------------------------------------------------------

struct MonteCarloEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  int samples = 0;
};

/// Fbar(x) = E_q F_q(x) by plain Monte Carlo.
template <BilevelProblem P>
MonteCarloEstimate eval_Fbar_mc(const P& problem, const Vector& x, double radius, int n, Rng& rng,
                                double ll_tol = 1e-10, const LowerOptions& lower = {}) {
  require(n >= 2, ErrorCode::InvalidArgument, "need at least two samples");
  double mean = 0.0;
  double m2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const Perturbation q = sample_perturbation(radius, problem.dim_lower(), rng);
    const double v = eval_Fq(problem, x, q, ll_tol, lower);
    const double delta = v - mean;
    mean += delta / (i + 1);
    m2 += delta * (v - mean);
  }
  const double var = m2 / (n - 1);
  return {mean, std::sqrt(var / n), n};
}

/// 1.5 x the largest |grad f(x, y*_q(x))| over the given points and `draws`
/// perturbations of the given radius at each.
template <BilevelProblem P>
double estimate_lf_bar(const P& problem, const std::vector<Vector>& points, double radius, int draws,
                       Rng& rng, double ll_tol = 1e-10, const LowerOptions& lower = {}) {
  double worst = 0.0;
  for (const auto& x : points) {
    for (int k = 0; k <= draws; ++k) {
      const Perturbation q = k == 0 ? zero_perturbation(problem.dim_lower())
                                    : sample_perturbation(radius, problem.dim_lower(), rng);
      const LLSolution sol = solve_lower(problem, x, q, ll_tol, lower);
      const UpperGradient g = problem.grad_f(x, sol.y_hat);
      worst = std::max(worst, std::sqrt(g.x.squaredNorm() + g.y.squaredNorm()));
    }
  }
  return 1.5 * worst;
}

struct PerturbationBoundCheck {
  double F = 0.0;
  MonteCarloEstimate fbar;
  double bound = 0.0;  // L_f radius / mu_g + 3 stderr
  double gap = 0.0;    // |Fbar - F|
  bool ok = false;
};

/// |Fbar(x) - F(x)| <= L_f sup|q| / mu_g, checked with 3 standard errors of slack.
template <BilevelProblem P>
PerturbationBoundCheck check_perturbation_bound(const P& problem, const Vector& x, double radius,
                                                int n, double lf_hat, Rng& rng,
                                                const LowerOptions& lower = {}) {
  PerturbationBoundCheck out;
  out.F = eval_F_exact(problem, x, 1e-10, lower);
  out.fbar = eval_Fbar_mc(problem, x, radius, n, rng, 1e-10, lower);
  out.gap = std::abs(out.fbar.mean - out.F);
  out.bound = lf_hat * radius / problem.mu_g() + 3.0 * out.fbar.std_error;
  out.ok = out.gap <= out.bound;
  return out;
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

/// Central differences, one coordinate at a time.
inline Vector fd_gradient(const std::function<double(const Vector&)>& fn, const Vector& x, double step) {
  require(step > 0.0, ErrorCode::InvalidArgument, "finite-difference step must be positive");
  Vector g(x.size());
  Vector probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    probe(i) = x(i) + step;
    const double up = fn(probe);
    probe(i) = x(i) - step;
    const double down = fn(probe);
    probe(i) = x(i);
    g(i) = (up - down) / (2.0 * step);
  }
  return g;
}

/// Central-difference Jacobian of a vector map, one column per input coordinate.
inline Matrix fd_jacobian(const std::function<Vector(const Vector&)>& fn, const Vector& x, double step) {
  require(step > 0.0, ErrorCode::InvalidArgument, "finite-difference step must be positive");
  Matrix jac;
  Vector probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    probe(i) = x(i) + step;
    const Vector up = fn(probe);
    probe(i) = x(i) - step;
    const Vector down = fn(probe);
    probe(i) = x(i);
    if (i == 0) jac.resize(up.size(), x.size());
    jac.col(i) = (up - down) / (2.0 * step);
  }
  return jac;
}

// ---------------------------------------------------------------------------
// Per-run report
// ---------------------------------------------------------------------------

struct RunDiagnostics {
  StationaritySummary stored;
  std::optional<StationaritySummary> monte_carlo;
  WindowCheck window;
  bool has_window = false;
  double F_first = std::numeric_limits<double>::quiet_NaN();
  double F_last = std::numeric_limits<double>::quiet_NaN();
};

inline RunDiagnostics diagnose_run(const RunLog& log) {
  RunDiagnostics d;
  if (!log.records.empty()) {
    d.F_first = log.records.front().F;
    d.F_last = log.records.back().F;
  }
  if (log.schedule.K >= 1 && log.schedule.beta > 0.0) {
    d.has_window = true;
    d.stored = stationarity_series(log, log.schedule.beta, log.schedule.K);
    d.window = check_window_displacement(log, log.schedule.K, log.schedule.delta_bar);
  }
  return d;
}

inline nlohmann::json to_json(const StationaritySummary& s, const char* label) {
  return {{"label", label},
          {"windows", s.norm.size()},
          {"min_norm", s.min_norm},
          {"min_t", s.min_t},
          {"trailing_average", s.trailing_average},
          {"trailing_from_t", s.trailing_from}};
}

inline nlohmann::json to_json(const RunDiagnostics& d, const RunLog& log) {
  nlohmann::json j;
  j["algorithm"] = log.algorithm;
  j["seed"] = log.seed;
  j["iterations"] = log.records.empty() ? 0 : log.records.size() - 1;
  j["resamples"] = log.resamples;
  j["cancelled"] = log.cancelled;
  j["F_first"] = d.F_first;
  j["F_last"] = d.F_last;
  if (d.has_window) {
    j["schedule"] = {{"beta", log.schedule.beta},       {"K", log.schedule.K},
                     {"gamma1", log.schedule.gamma1},   {"gamma2", log.schedule.gamma2},
                     {"delta_y", log.schedule.delta_y}, {"delta_bar", log.schedule.delta_bar}};
    j["stationarity"] = nlohmann::json::array({to_json(d.stored, "stored-gradient")});
    if (d.monte_carlo) j["stationarity"].push_back(to_json(*d.monte_carlo, "monte-carlo"));
    j["window_displacement"] = {{"windows", d.window.windows},
                                {"violations", d.window.violations},
                                {"worst_ratio", d.window.worst_ratio}};
  }
  j["timing"] = {{"total_s", log.total_seconds},
                 {"lower_level_s", log.ll_seconds},
                 {"objective_eval_s", log.eval_seconds},
                 {"outer_s", log.total_seconds - log.ll_seconds - log.eval_seconds}};
  return j;
}

}  // namespace dsblo

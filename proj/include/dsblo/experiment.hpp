#pragma once

// Experiment orchestration: config parsing, step tuning, (algorithm, seed)
// runs on a worker pool, and the CSV / JSON / SVG outputs.
//
// Config schema (JSON):
//   {
//     "instance": {"d_u": 10, "d_l": 10, "k": 5, "seed": 1,
//                  "components": 1, "box_radius": 10.0},
//       or "instance_file": "inst.json"   (relative to the config file)
//     "algorithms": [
//       {"name": "dsblo", "label": "dsblo", "option": "I" | "II",
//        "mode": "manual", "beta": 0.9, "gamma1": 1.0, "gamma2": "auto" | number,
//        "K": 5, "delta_y": 1e-8,
//          or "mode": "theory", "epsilon": .., "delta_bar": .., "delta_v": ..,
//             "lf_bar": .., "lf_delta": ..
//        "perturb_radius": 1e-3, "ll_tol": 1e-8, "max_resamples": 5, "x1": [..]},
//       {"name": "igd", "label": "igd", "step": "auto" | number, ...}
//     ],
//     "iterations": 100,
//     "seeds": [1],
//     "eval_every": 1,                      (default 1 below d_u = 50, else 5)
//     "tune": {"grid": [1e-3, ..., 1e-1], "pilot_iterations": 100, "seed": 1},
//     "output": {"dir": "out", "formats": ["csv", "svg"]},
//     "wall_clock_budget_s": null,          (per run)
//     "threads": 1
//   }
// DSBLO_OUTPUT_DIR and DSBLO_THREADS override output.dir and threads.

#include "dsblo/diagnostics.hpp"
#include "dsblo/instance_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace dsblo {

inline const std::vector<double>& default_step_grid() {
  static const std::vector<double> grid{1e-3, 2e-3, 5e-3, 1e-2, 2e-2, 5e-2, 1e-1};
  return grid;
}

inline constexpr const char* kCsvHeader = "t,wall_time_s,F,eta,m_norm,stationarity_norm,q_norm";

struct AlgorithmSpec {
  std::string name;   // "dsblo" or "igd"
  std::string label;  // unique; names the output files
  DsbloParams dsblo;
  bool gamma2_auto = false;
  IgdParams igd;
  bool step_auto = false;
  nlohmann::json snapshot;
};

struct TuneSpec {
  std::vector<double> grid = default_step_grid();
  std::int64_t pilot_iterations = 100;
  std::optional<std::uint64_t> seed;  // defaults to the first run seed
};

struct ExperimentConfig {
  GeneratorOptions generator;
  std::optional<std::filesystem::path> instance_file;
  std::vector<AlgorithmSpec> algorithms;
  std::int64_t iterations = 100;
  std::vector<std::uint64_t> seeds{1};
  std::optional<std::int64_t> eval_every;
  TuneSpec tune;
  std::filesystem::path output_dir = "out";
  bool write_csv = true;
  bool write_svg = true;
  std::optional<double> wall_clock_budget_s;
  int threads = 1;
  nlohmann::json snapshot;
};

namespace detail {

[[noreturn]] inline void config_error(const std::string& msg) { throw Error(ErrorCode::Config, msg); }

template <class T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    config_error(std::string("field '") + key + "' has the wrong type");
  }
}

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) config_error("unknown field '" + key + "' in " + where);
  }
}

inline AlgorithmSpec parse_algorithm(const nlohmann::json& j, std::int64_t iterations) {
  if (!j.is_object()) config_error("each algorithm entry must be an object");
  AlgorithmSpec a;
  a.snapshot = j;
  a.name = get_or<std::string>(j, "name", "");
  const double radius = get_or(j, "perturb_radius", 1e-3);
  const double ll_tol = get_or(j, "ll_tol", 1e-8);
  const int max_resamples = get_or(j, "max_resamples", 5);
  Vector x1;
  if (j.contains("x1")) x1 = vector_from_json(j.at("x1"));

  if (a.name == "dsblo") {
    reject_unknown(j, {"name", "label", "option", "mode", "beta", "gamma1", "gamma2", "K", "delta_y",
                       "epsilon", "delta_bar", "delta_v", "lf_bar", "lf_delta", "perturb_radius",
                       "ll_tol", "max_resamples", "x1"},
                   "dsblo algorithm");
    DsbloParams& p = a.dsblo;
    const auto option = get_or<std::string>(j, "option", "I");
    if (option == "I") {
      p.option = GradientOption::Deterministic;
    } else if (option == "II") {
      p.option = GradientOption::Sampled;
    } else {
      config_error("dsblo option must be \"I\" or \"II\"");
    }
    const auto mode = get_or<std::string>(j, "mode", "manual");
    if (mode == "manual") {
      ManualMode m{.beta = get_or(j, "beta", 0.9),
                   .gamma1 = get_or(j, "gamma1", 1.0),
                   .gamma2 = 1.0,
                   .K = get_or<std::int64_t>(j, "K", 5),
                   .delta_y = get_or(j, "delta_y", 1e-8)};
      if (!j.contains("gamma2") || (j.at("gamma2").is_string() && j.at("gamma2") == "auto")) {
        a.gamma2_auto = true;
      } else {
        m.gamma2 = get_or(j, "gamma2", 1.0);
      }
      p.mode = m;
    } else if (mode == "theory") {
      for (const char* key : {"epsilon", "delta_bar", "lf_bar"})
        if (!j.contains(key)) config_error(std::string("theory mode needs '") + key + "'");
      p.epsilon = get_or(j, "epsilon", 1.0);
      p.delta_bar = get_or(j, "delta_bar", 1.0);
      p.mode = TheoryMode{.delta_v = get_or(j, "delta_v", 0.0),
                          .lf_bar = get_or(j, "lf_bar", 1.0),
                          .lf_delta = get_or(j, "lf_delta", std::numeric_limits<double>::infinity())};
    } else {
      config_error("dsblo mode must be \"manual\" or \"theory\"");
    }
    p.perturb_radius = radius;
    p.ll_tol = ll_tol;
    p.max_resamples = max_resamples;
    p.T = iterations;
    p.x1 = x1;
    a.label = get_or<std::string>(j, "label", p.option == GradientOption::Sampled ? "dsblo-II" : "dsblo");
  } else if (a.name == "igd") {
    reject_unknown(j, {"name", "label", "step", "perturb_radius", "ll_tol", "max_resamples", "x1"},
                   "igd algorithm");
    IgdParams& p = a.igd;
    if (!j.contains("step") || (j.at("step").is_string() && j.at("step") == "auto")) {
      a.step_auto = true;
    } else {
      p.step = get_or(j, "step", 0.05);
      if (!(p.step >= 0.0)) config_error("igd step must be nonnegative");
    }
    p.perturb_radius = radius;
    p.ll_tol = ll_tol;
    p.max_resamples = max_resamples;
    p.T = iterations;
    p.x1 = x1;
    a.label = get_or<std::string>(j, "label", "igd");
  } else {
    config_error("algorithm name must be \"dsblo\" or \"igd\"");
  }
  if (a.label.empty() || a.label.find_first_of("/\\ ") != std::string::npos) {
    config_error("algorithm label must be a nonempty file-name-safe string");
  }
  return a;
}

}  // namespace detail

/// Parse and validate a config document. Relative instance paths resolve
/// against `base_dir`.
inline ExperimentConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  using detail::config_error;
  using detail::get_or;
  if (!j.is_object()) config_error("config must be a JSON object");
  detail::reject_unknown(j, {"instance", "instance_file", "algorithms", "iterations", "seeds", "eval_every",
                             "tune", "output", "wall_clock_budget_s", "threads"},
                         "config");
  ExperimentConfig c;
  c.snapshot = j;

  if (j.contains("instance") == j.contains("instance_file")) {
    config_error("give exactly one of 'instance' and 'instance_file'");
  }
  if (j.contains("instance")) {
    const auto& s = j.at("instance");
    detail::reject_unknown(s, {"d_u", "d_l", "k", "seed", "components", "box_radius"}, "instance");
    c.generator.d_u = get_or<Index>(s, "d_u", 10);
    c.generator.d_l = get_or<Index>(s, "d_l", 10);
    c.generator.k = get_or<Index>(s, "k", 5);
    c.generator.seed = get_or<std::uint64_t>(s, "seed", 1);
    c.generator.components = get_or<Index>(s, "components", 1);
    c.generator.box_radius = get_or(s, "box_radius", 10.0);
  } else {
    std::filesystem::path p = get_or<std::string>(j, "instance_file", "");
    if (p.is_relative()) p = base_dir / p;
    if (!std::filesystem::exists(p)) config_error("instance file not found: " + p.string());
    c.instance_file = p;
  }

  c.iterations = get_or<std::int64_t>(j, "iterations", 100);
  if (c.iterations < 1) config_error("iterations must be >= 1");

  if (!j.contains("algorithms") || !j.at("algorithms").is_array() || j.at("algorithms").empty()) {
    config_error("config needs a nonempty 'algorithms' list");
  }
  std::set<std::string> labels;
  for (const auto& a : j.at("algorithms")) {
    c.algorithms.push_back(detail::parse_algorithm(a, c.iterations));
    if (!labels.insert(c.algorithms.back().label).second) {
      config_error("duplicate algorithm label '" + c.algorithms.back().label + "'");
    }
  }

  c.seeds = get_or<std::vector<std::uint64_t>>(j, "seeds", {1});
  if (c.seeds.empty()) config_error("'seeds' must not be empty");
  if (std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size()) {
    config_error("'seeds' must not repeat");
  }
  if (j.contains("eval_every") && !j.at("eval_every").is_null()) {
    c.eval_every = get_or<std::int64_t>(j, "eval_every", 1);
    if (*c.eval_every < 1) config_error("eval_every must be >= 1");
  }

  if (j.contains("tune")) {
    const auto& t = j.at("tune");
    detail::reject_unknown(t, {"grid", "pilot_iterations", "seed"}, "tune");
    c.tune.grid = get_or(t, "grid", default_step_grid());
    c.tune.pilot_iterations = get_or<std::int64_t>(t, "pilot_iterations", 100);
    if (t.contains("seed")) c.tune.seed = get_or<std::uint64_t>(t, "seed", 1);
    if (c.tune.grid.empty()) config_error("tune grid must not be empty");
    for (double s : c.tune.grid)
      if (!(s > 0.0)) config_error("tune grid steps must be positive");
    if (c.tune.pilot_iterations < 1) config_error("pilot_iterations must be >= 1");
  }

  if (j.contains("output")) {
    const auto& o = j.at("output");
    detail::reject_unknown(o, {"dir", "formats"}, "output");
    c.output_dir = get_or<std::string>(o, "dir", "out");
    if (o.contains("formats")) {
      const auto formats = get_or<std::vector<std::string>>(o, "formats", {});
      c.write_csv = c.write_svg = false;
      for (const auto& f : formats) {
        if (f == "csv") {
          c.write_csv = true;
        } else if (f == "svg") {
          c.write_svg = true;
        } else {
          config_error("unknown output format '" + f + "'");
        }
      }
    }
  }
  if (j.contains("wall_clock_budget_s") && !j.at("wall_clock_budget_s").is_null()) {
    c.wall_clock_budget_s = get_or(j, "wall_clock_budget_s", 0.0);
    if (!(*c.wall_clock_budget_s > 0.0)) config_error("wall_clock_budget_s must be positive");
  }
  c.threads = get_or(j, "threads", 1);
  if (c.threads < 1) config_error("threads must be >= 1");
  return c;
}

/// DSBLO_OUTPUT_DIR and DSBLO_THREADS, when set, replace the config values.
inline void apply_env_overrides(ExperimentConfig& c) {
  if (const char* dir = std::getenv("DSBLO_OUTPUT_DIR"); dir && *dir) c.output_dir = dir;
  if (const char* th = std::getenv("DSBLO_THREADS"); th && *th) {
    char* end = nullptr;
    const long n = std::strtol(th, &end, 10);
    if (*end != '\0' || n < 1) detail::config_error("DSBLO_THREADS must be a positive integer");
    c.threads = static_cast<int>(n);
  }
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Config, std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c = parse_config(j, path.parent_path());
  apply_env_overrides(c);
  return c;
}

// ---------------------------------------------------------------------------
// Step tuning
// ---------------------------------------------------------------------------

struct TuneCandidate {
  double step = 0.0;
  bool aborted = false;
  bool monotone = false;
  double F_last = std::numeric_limits<double>::quiet_NaN();
  std::string error;
};

struct TuneResult {
  double step = 0.0;
  std::vector<TuneCandidate> candidates;
};

/// Largest grid step whose IGD pilot run never increases F (relative slack
/// 1e-9) and completes without error.
template <BilevelProblem P>
TuneResult tune_step(const P& problem, const std::vector<double>& grid, std::int64_t pilot_iterations,
                     std::uint64_t seed, double ll_tol = 1e-8) {
  require(!grid.empty(), ErrorCode::InvalidArgument, "empty step grid");
  TuneResult out;
  std::vector<double> sorted = grid;
  std::sort(sorted.begin(), sorted.end());
  std::optional<double> best;
  for (double step : sorted) {
    TuneCandidate cand;
    cand.step = step;
    try {
      IgdParams p{.step = step, .T = pilot_iterations, .ll_tol = ll_tol, .seed = seed};
      RunOptions opt;
      opt.eval_every = 1;
      const RunLog log = run_igd_baseline(problem, p, opt);
      cand.monotone = true;
      for (std::size_t i = 1; i < log.records.size(); ++i) {
        const double prev = log.records[i - 1].F;
        if (log.records[i].F > prev + 1e-9 * (1.0 + std::abs(prev))) cand.monotone = false;
      }
      cand.F_last = log.records.back().F;
    } catch (const Error& e) {
      cand.aborted = true;
      cand.error = e.what();
    }
    if (!cand.aborted && cand.monotone) best = step;
    out.candidates.push_back(cand);
  }
  if (!best) throw Error(ErrorCode::Config, "no step in the tuning grid gives a monotone pilot run");
  out.step = *best;
  return out;
}

// ---------------------------------------------------------------------------
// Output writers
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt_double(double v) {
  if (!std::isfinite(v)) return {};
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

}  // namespace detail

/// Stationarity column: the windowed norm for DS-BLO (empty while t <= K),
/// |g_t| for the baseline.
inline std::vector<double> stationarity_column(const RunLog& log) {
  std::vector<double> col(log.records.size(), std::numeric_limits<double>::quiet_NaN());
  if (log.algorithm == "igd") {
    for (std::size_t i = 0; i < log.records.size(); ++i) col[i] = log.records[i].grad.norm();
    return col;
  }
  if (log.schedule.K < 1) return col;
  const auto s = stationarity_series(log, log.schedule.beta, log.schedule.K);
  for (std::size_t i = 0; i < s.t.size(); ++i) col[static_cast<std::size_t>(s.t[i] - 1)] = s.norm[i];
  return col;
}

inline std::string run_csv(const RunLog& log) {
  const auto stat = stationarity_column(log);
  std::string out = kCsvHeader;
  out += '\n';
  for (std::size_t i = 0; i < log.records.size(); ++i) {
    const auto& r = log.records[i];
    out += std::to_string(r.t);
    for (double v : {r.wall_time, r.F, r.eta, r.m_norm, stat[i], r.q_norm}) {
      out += ',';
      out += detail::fmt_double(v);
    }
    out += '\n';
  }
  return out;
}

struct SvgSeries {
  std::string label;
  std::vector<std::pair<double, double>> points;  // (wall time, F)
};

/// Line plot of F against wall time, one polyline per series.
inline std::string render_svg(const std::vector<SvgSeries>& series, const std::string& title) {
  constexpr double W = 800, H = 500, left = 90, right = 190, top = 40, bottom = 60;
  const double pw = W - left - right, ph = H - top - bottom;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 <= x0) x1 = x0 + 1.0;
  if (y1 <= y0) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto sx = [&](double x) { return left + pw * (x - x0) / (x1 - x0); };
  auto sy = [&](double y) { return top + ph * (1.0 - (y - y0) / (y1 - y0)); };
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return std::string(buf);
  };
  auto esc = [](const std::string& s) {
    std::string o;
    for (char ch : s) {
      if (ch == '<') {
        o += "&lt;";
      } else if (ch == '>') {
        o += "&gt;";
      } else if (ch == '&') {
        o += "&amp;";
      } else {
        o += ch;
      }
    }
    return o;
  };
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << left + pw / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">" << esc(title)
    << "</text>\n";
  o << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = x0 + (x1 - x0) * i / 5.0;
    const double yv = y0 + (y1 - y0) * i / 5.0;
    o << "<line x1=\"" << sx(xv) << "\" y1=\"" << top + ph << "\" x2=\"" << sx(xv) << "\" y2=\"" << top + ph + 5
      << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << sx(xv) << "\" y=\"" << top + ph + 20 << "\" text-anchor=\"middle\">" << num(xv)
      << "</text>\n";
    o << "<line x1=\"" << left - 5 << "\" y1=\"" << sy(yv) << "\" x2=\"" << left << "\" y2=\"" << sy(yv)
      << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << left - 8 << "\" y=\"" << sy(yv) + 4 << "\" text-anchor=\"end\">" << num(yv)
      << "</text>\n";
  }
  o << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 15 << "\" text-anchor=\"middle\">wall time (s)</text>\n";
  o << "<text x=\"20\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 20 "
    << top + ph / 2 << ")\">F(x)</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = palette[k % 10];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& [x, y] : series[k].points) o << num(sx(x)) << ',' << num(sy(y)) << ' ';
    o << "\"/>\n";
    const double ly = top + 10 + 18.0 * static_cast<double>(k);
    o << "<line x1=\"" << left + pw + 12 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 36 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << left + pw + 42 << "\" y=\"" << ly + 4 << "\">" << esc(series[k].label) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

enum class RunStatus { Ok, Failed, Cancelled };

inline const char* to_string(RunStatus s) {
  switch (s) {
    case RunStatus::Ok: return "ok";
    case RunStatus::Failed: return "failed";
    case RunStatus::Cancelled: return "cancelled";
  }
  return "?";
}

struct RunOutcome {
  std::string label;
  std::string algorithm;
  std::uint64_t seed = 0;
  RunStatus status = RunStatus::Ok;
  std::string error;
  RunLog log;
  RunDiagnostics diagnostics;
  std::filesystem::path csv_path;
  std::filesystem::path report_path;
};

struct ExperimentResult {
  std::string fingerprint;
  std::optional<TuneResult> tuning;
  std::vector<RunOutcome> runs;
  std::filesystem::path summary_path;
  std::filesystem::path svg_path;

  bool any_aborted() const {
    return std::any_of(runs.begin(), runs.end(), [](const RunOutcome& r) { return r.status != RunStatus::Ok; });
  }
};

inline QuadraticBilevel resolve_instance(const ExperimentConfig& c) {
  return c.instance_file ? load_instance(*c.instance_file) : generate_instance(c.generator);
}

namespace detail {

inline nlohmann::json tuning_json(const TuneResult& t) {
  nlohmann::json cands = nlohmann::json::array();
  for (const auto& c : t.candidates) {
    nlohmann::json e{{"step", c.step}, {"aborted", c.aborted}, {"monotone", c.monotone}, {"F_last", c.F_last}};
    if (!c.error.empty()) e["error"] = c.error;
    cands.push_back(e);
  }
  return {{"step", t.step}, {"candidates", cands}};
}

inline void execute_run(const QuadraticBilevel& inst, const ExperimentConfig& c, const AlgorithmSpec& spec,
                        std::optional<double> tuned, RunOutcome& out) {
  RunOptions opt;
  opt.eval_every = c.eval_every.value_or(inst.dim_upper() >= 50 ? 5 : 1);
  std::stop_source stop;
  opt.stop = stop.get_token();
  const auto start = Clock::now();
  if (c.wall_clock_budget_s) {
    const double budget = *c.wall_clock_budget_s;
    opt.on_iterate = [&stop, start, budget](const IterateRecord&) {
      if (seconds_since(start) > budget) stop.request_stop();
    };
  }
  try {
    if (spec.name == "dsblo") {
      DsbloParams p = spec.dsblo;
      p.seed = out.seed;
      if (spec.gamma2_auto) std::get<ManualMode>(p.mode).gamma2 = 1.0 / tuned.value();
      out.log = run_dsblo(inst, p, opt);
    } else {
      IgdParams p = spec.igd;
      p.seed = out.seed;
      if (spec.step_auto) p.step = tuned.value();
      out.log = run_igd_baseline(inst, p, opt);
    }
    out.status = out.log.cancelled ? RunStatus::Cancelled : RunStatus::Ok;
    if (out.log.cancelled) out.error = "wall-clock budget exhausted";
    out.diagnostics = diagnose_run(out.log);
  } catch (const Error& e) {
    out.status = RunStatus::Failed;
    out.error = e.what();
  }
}

inline nlohmann::json run_report(const RunOutcome& r, const AlgorithmSpec& spec, const ExperimentConfig& c,
                                 const std::string& fingerprint, std::optional<double> tuned) {
  nlohmann::json j;
  j["label"] = r.label;
  j["algorithm"] = r.algorithm;
  j["seed"] = r.seed;
  j["status"] = to_string(r.status);
  if (!r.error.empty()) j["error"] = r.error;
  j["instance_fingerprint"] = fingerprint;
  j["config"] = {{"experiment", c.snapshot}, {"algorithm", spec.snapshot}};
  if (tuned && (spec.gamma2_auto || spec.step_auto)) j["tuned_step"] = *tuned;
  if (r.status != RunStatus::Failed) j["diagnostics"] = to_json(r.diagnostics, r.log);
  return j;
}

}  // namespace detail

/// Run every (algorithm, seed) pair. Failures are recorded per run; the
/// remaining runs proceed.
inline ExperimentResult run_experiment(const ExperimentConfig& c) {
  ExperimentResult result;
  const QuadraticBilevel inst = resolve_instance(c);
  result.fingerprint = fingerprint_hex(inst);

  const bool needs_tuning = std::any_of(c.algorithms.begin(), c.algorithms.end(),
                                        [](const AlgorithmSpec& a) { return a.gamma2_auto || a.step_auto; });
  std::optional<double> tuned;
  if (needs_tuning) {
    result.tuning = tune_step(inst, c.tune.grid, c.tune.pilot_iterations, c.tune.seed.value_or(c.seeds.front()));
    tuned = result.tuning->step;
  }

  std::filesystem::create_directories(c.output_dir);

  struct Job {
    const AlgorithmSpec* spec;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& a : c.algorithms)
    for (auto s : c.seeds) jobs.push_back({&a, s});
  result.runs.resize(jobs.size());

  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::optional<Error> io_error;
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      RunOutcome& out = result.runs[i];
      const AlgorithmSpec& spec = *jobs[i].spec;
      out.label = spec.label;
      out.algorithm = spec.name;
      out.seed = jobs[i].seed;
      detail::execute_run(inst, c, spec, tuned, out);
      const std::string stem = spec.label + "_seed" + std::to_string(out.seed);
      try {
        if (c.write_csv && out.status != RunStatus::Failed) {
          out.csv_path = c.output_dir / (stem + ".csv");
          detail::write_text(out.csv_path, run_csv(out.log));
        }
        out.report_path = c.output_dir / (stem + ".json");
        detail::write_text(out.report_path,
                           detail::run_report(out, spec, c, result.fingerprint, tuned).dump(2) + "\n");
      } catch (const Error& e) {
        std::lock_guard lock(error_mutex);
        if (!io_error) io_error = e;
      }
    }
  };
  const std::size_t n_workers = std::min<std::size_t>(static_cast<std::size_t>(c.threads), jobs.size());
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(worker);
    worker();
  }
  if (io_error) throw *io_error;

  if (c.write_svg) {
    std::vector<SvgSeries> series;
    for (const auto& r : result.runs) {
      if (r.status == RunStatus::Failed) continue;
      SvgSeries s;
      s.label = c.seeds.size() > 1 ? r.label + " seed " + std::to_string(r.seed) : r.label;
      for (const auto& rec : r.log.records)
        if (std::isfinite(rec.F)) s.points.emplace_back(rec.wall_time, rec.F);
      series.push_back(std::move(s));
    }
    result.svg_path = c.output_dir / "F_vs_time.svg";
    detail::write_text(result.svg_path, render_svg(series, "F(x) vs wall time, instance " + result.fingerprint));
  }

  nlohmann::json summary;
  summary["instance_fingerprint"] = result.fingerprint;
  summary["instance"] = {{"d_u", inst.dim_upper()}, {"d_l", inst.dim_lower()},
                         {"rows", inst.constraints().rows()}, {"components", inst.num_components()}};
  if (result.tuning) summary["tuning"] = detail::tuning_json(*result.tuning);
  summary["runs"] = nlohmann::json::array();
  for (const auto& r : result.runs) {
    nlohmann::json e{{"label", r.label}, {"seed", r.seed}, {"status", to_string(r.status)}};
    if (!r.error.empty()) e["error"] = r.error;
    if (r.status != RunStatus::Failed) {
      e["F_first"] = r.diagnostics.F_first;
      e["F_last"] = r.diagnostics.F_last;
      e["iterations"] = r.log.records.size() - 1;
      e["total_s"] = r.log.total_seconds;
      e["lower_level_s"] = r.log.ll_seconds;
      if (r.diagnostics.has_window) {
        e["trailing_stationarity"] = r.diagnostics.stored.trailing_average;
        e["window_violations"] = r.diagnostics.window.violations;
      } else if (!r.log.records.empty()) {
        e["final_gradient_norm"] = r.log.records.back().grad.norm();
      }
    }
    summary["runs"].push_back(e);
  }
  summary["any_aborted"] = result.any_aborted();
  result.summary_path = c.output_dir / "summary.json";
  detail::write_text(result.summary_path, summary.dump(2) + "\n");
  return result;
}

}  // namespace dsblo

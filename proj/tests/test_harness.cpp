#include "dsblo/experiment.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>

using namespace dsblo;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dsblo_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string mask_wall_time(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) {
    const auto a = line.find(',');
    const auto b = line.find(',', a + 1);
    out += line.substr(0, a + 1) + "*" + line.substr(b) + "\n";
  }
  return out;
}

nlohmann::json small_config(const fs::path& out_dir) {
  auto j = nlohmann::json::parse(R"({
    "instance": {"d_u": 4, "d_l": 4, "k": 3, "seed": 7},
    "algorithms": [
      {"name": "dsblo", "label": "dsblo", "mode": "manual", "beta": 0.9, "gamma1": 1.0, "gamma2": 20.0, "K": 5},
      {"name": "igd", "label": "igd", "step": 0.02}
    ],
    "iterations": 40
  })");
  j["output"] = {{"dir", out_dir.string()}};
  return j;
}

void expect_config_error(const nlohmann::json& j) {
  try {
    parse_config(j);
    ADD_FAILURE() << "accepted: " << j.dump();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Config) << e.what();
  }
}

class ScopedEnv {
 public:
  ScopedEnv(const char* name, const std::string& value) : name_(name) { ::setenv(name, value.c_str(), 1); }
  ~ScopedEnv() { ::unsetenv(name_); }

 private:
  const char* name_;
};

}  // namespace

TEST(Csv, HeaderAndEmptyStationarityBeforeWindow) {
  const fs::path dir = scratch_dir("csv");
  const auto res = run_experiment(parse_config(small_config(dir)));
  ASSERT_FALSE(res.any_aborted());
  const std::string csv = slurp(dir / "dsblo_seed1.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "t,wall_time_s,F,eta,m_norm,stationarity_norm,q_norm");

  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
    if (cells.size() < 7) cells.resize(7);
    const long t = std::stol(cells[0]);
    EXPECT_EQ(t, rows);
    // stationarity_norm is defined only once a full window of K = 5 exists
    if (t <= 5) {
      EXPECT_TRUE(cells[5].empty()) << line;
    } else {
      EXPECT_FALSE(cells[5].empty()) << line;
    }
  }
  EXPECT_GE(rows, 40);

  const std::string igd = slurp(dir / "igd_seed1.csv");
  EXPECT_NE(igd.find("\n1,"), std::string::npos);
}

TEST(Experiment, DeterministicAcrossRunsAndThreads) {
  const fs::path a = scratch_dir("det_a"), b = scratch_dir("det_b");
  auto ja = small_config(a), jb = small_config(b);
  ja["seeds"] = {1, 2};
  jb["seeds"] = {1, 2};
  jb["threads"] = 3;
  run_experiment(parse_config(ja));
  run_experiment(parse_config(jb));
  for (const char* label : {"dsblo", "igd"}) {
    for (int seed : {1, 2}) {
      const std::string name = std::string(label) + "_seed" + std::to_string(seed) + ".csv";
      const std::string ca = slurp(a / name), cb = slurp(b / name);
      ASSERT_FALSE(ca.empty()) << name;
      EXPECT_EQ(mask_wall_time(ca), mask_wall_time(cb)) << name;
    }
  }
}

TEST(Experiment, SeedSuffixedOutputsAndPlot) {
  const fs::path dir = scratch_dir("seeds");
  auto j = small_config(dir);
  j["seeds"] = {1, 2, 3};
  j["threads"] = 2;
  const auto res = run_experiment(parse_config(j));
  EXPECT_EQ(res.runs.size(), 6u);
  for (const char* label : {"dsblo", "igd"}) {
    for (int seed : {1, 2, 3}) {
      const std::string stem = std::string(label) + "_seed" + std::to_string(seed);
      EXPECT_TRUE(fs::exists(dir / (stem + ".csv"))) << stem;
      const auto report = nlohmann::json::parse(slurp(dir / (stem + ".json")));
      EXPECT_EQ(report["seed"], seed);
      EXPECT_EQ(report["status"], "ok");
      EXPECT_EQ(report["instance_fingerprint"], res.fingerprint);
    }
  }
  const std::string svg = slurp(dir / "F_vs_time.svg");
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  const std::regex polyline("<polyline");
  EXPECT_EQ(std::distance(std::sregex_iterator(svg.begin(), svg.end(), polyline), std::sregex_iterator()), 6);

  const auto summary = nlohmann::json::parse(slurp(dir / "summary.json"));
  EXPECT_EQ(summary["runs"].size(), 6u);
  EXPECT_FALSE(summary["any_aborted"].get<bool>());
}

TEST(Experiment, DifferentSeedsGiveDifferentPaths) {
  const fs::path dir = scratch_dir("distinct");
  auto j = small_config(dir);
  j["seeds"] = {1, 2};
  run_experiment(parse_config(j));
  EXPECT_NE(mask_wall_time(slurp(dir / "dsblo_seed1.csv")), mask_wall_time(slurp(dir / "dsblo_seed2.csv")));
}

TEST(Config, Rejections) {
  const fs::path dir = scratch_dir("config");
  auto base = small_config(dir);

  auto empty_algos = base;
  empty_algos["algorithms"] = nlohmann::json::array();
  expect_config_error(empty_algos);

  auto missing_file = base;
  missing_file.erase("instance");
  missing_file["instance_file"] = (dir / "nope.json").string();
  expect_config_error(missing_file);

  auto both = base;
  both["instance_file"] = "x.json";
  expect_config_error(both);

  auto unknown = base;
  unknown["iteratons"] = 10;
  expect_config_error(unknown);

  auto unknown_algo_field = base;
  unknown_algo_field["algorithms"][0]["gama2"] = 1.0;
  expect_config_error(unknown_algo_field);

  auto dup = base;
  dup["algorithms"][1] = dup["algorithms"][0];
  expect_config_error(dup);

  auto bad_name = base;
  bad_name["algorithms"][0]["name"] = "sgd";
  expect_config_error(bad_name);

  auto bad_seeds = base;
  bad_seeds["seeds"] = {1, 1};
  expect_config_error(bad_seeds);

  auto bad_format = base;
  bad_format["output"]["formats"] = {"png"};
  expect_config_error(bad_format);
}

TEST(Config, InstanceFileResolvesAgainstConfigDir) {
  const fs::path dir = scratch_dir("instfile");
  const auto inst = generate_instance({.d_u = 3, .d_l = 3, .k = 2, .seed = 5});
  save_instance(inst, dir / "inst.json");
  auto j = small_config(dir / "out");
  j.erase("instance");
  j["instance_file"] = "inst.json";
  {
    std::ofstream(dir / "cfg.json") << j.dump(2);
  }
  const auto c = load_config(dir / "cfg.json");
  ASSERT_TRUE(c.instance_file.has_value());
  EXPECT_EQ(fingerprint_hex(resolve_instance(c)), fingerprint_hex(inst));
}

TEST(Config, MalformedJsonIsConfigError) {
  const fs::path dir = scratch_dir("malformed");
  std::ofstream(dir / "cfg.json") << "{ \"instance\": ";
  try {
    load_config(dir / "cfg.json");
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Config);
  }
}

TEST(Config, EnvironmentOverrides) {
  const fs::path dir = scratch_dir("env");
  std::ofstream(dir / "cfg.json") << small_config(dir / "from_config").dump();
  {
    ScopedEnv out("DSBLO_OUTPUT_DIR", (dir / "from_env").string());
    ScopedEnv threads("DSBLO_THREADS", "3");
    const auto c = load_config(dir / "cfg.json");
    EXPECT_EQ(c.output_dir, dir / "from_env");
    EXPECT_EQ(c.threads, 3);
  }
  {
    ScopedEnv threads("DSBLO_THREADS", "zero");
    EXPECT_THROW(load_config(dir / "cfg.json"), Error);
  }
  const auto c = load_config(dir / "cfg.json");
  EXPECT_EQ(c.output_dir, dir / "from_config");
  EXPECT_EQ(c.threads, 1);
}

TEST(Tuning, PicksLargestMonotoneStepOnReferenceInstance) {
  const auto inst = generate_instance({.d_u = 10, .d_l = 10, .k = 5, .seed = 1});
  const auto t = tune_step(inst, default_step_grid(), 100, 1);
  EXPECT_DOUBLE_EQ(t.step, 0.02);
  ASSERT_EQ(t.candidates.size(), default_step_grid().size());
  for (const auto& c : t.candidates) {
    if (c.step <= t.step) {
      EXPECT_TRUE(c.monotone && !c.aborted) << c.step;
    }
  }
}

TEST(Tuning, AutoStepsFlowIntoRuns) {
  const fs::path dir = scratch_dir("auto");
  auto j = small_config(dir);
  j["algorithms"][0]["gamma2"] = "auto";
  j["algorithms"][1]["step"] = "auto";
  j["tune"] = {{"grid", {0.001, 0.01}}, {"pilot_iterations", 20}};
  const auto res = run_experiment(parse_config(j));
  ASSERT_TRUE(res.tuning.has_value());
  const double s = res.tuning->step;
  for (const auto& r : res.runs) {
    ASSERT_EQ(r.status, RunStatus::Ok);
    if (r.algorithm == "igd") {
      EXPECT_DOUBLE_EQ(r.log.records.front().eta, s);
    } else {
      EXPECT_DOUBLE_EQ(r.log.schedule.gamma2, 1.0 / s);
    }
  }
  const auto report = nlohmann::json::parse(slurp(dir / "igd_seed1.json"));
  EXPECT_DOUBLE_EQ(report["tuned_step"].get<double>(), s);
}

TEST(Budget, ExhaustedBudgetMarksRunAborted) {
  const fs::path dir = scratch_dir("budget");
  auto j = small_config(dir);
  j["instance"] = {{"d_u", 30}, {"d_l", 30}, {"k", 10}, {"seed", 1}};
  j["algorithms"] = {{{"name", "igd"}, {"step", 0.001}}};
  j["iterations"] = 1000000;
  j["wall_clock_budget_s"] = 0.2;
  const auto res = run_experiment(parse_config(j));
  ASSERT_EQ(res.runs.size(), 1u);
  EXPECT_EQ(res.runs[0].status, RunStatus::Cancelled);
  EXPECT_TRUE(res.any_aborted());
  EXPECT_LT(res.runs[0].log.records.size(), 1000000u);
  const auto summary = nlohmann::json::parse(slurp(dir / "summary.json"));
  EXPECT_TRUE(summary["any_aborted"].get<bool>());
  EXPECT_EQ(summary["runs"][0]["status"], "cancelled");
}

TEST(Svg, EmptyAndDegenerateSeries) {
  const std::string empty = render_svg({}, "nothing");
  EXPECT_NE(empty.find("</svg>"), std::string::npos);
  const std::string flat = render_svg({{"flat", {{0.0, 1.0}, {0.0, 1.0}}}}, "flat & <odd>");
  EXPECT_NE(flat.find("</svg>"), std::string::npos);
  EXPECT_EQ(flat.find("<odd>"), std::string::npos);
  EXPECT_EQ(flat.find("nan"), std::string::npos);
}

#include "dsblo/experiment.hpp"
#include "dsblo/instance_io.hpp"
#include "dsblo/verify/acceptance.hpp"

#include <CLI11.hpp>
#include <fmt/core.h>

#include <cstdio>
#include <fstream>
#include <iostream>

namespace {

using namespace dsblo;

int cmd_generate(const GeneratorOptions& opts, const std::string& out) {
  const QuadraticBilevel inst = generate_instance(opts);
  save_instance(inst, out);
  fmt::print("wrote {}\nfingerprint {}\n", out, fingerprint_hex(inst));
  return 0;
}

int cmd_inspect(const std::string& path) {
  const QuadraticBilevel inst = load_instance(path);
  const auto& poly = inst.constraints();
  const auto& info = inst.info();
  const Vector slack0 = poly.slack(Vector::Zero(inst.dim_upper()), Vector::Zero(inst.dim_lower()));
  fmt::print("fingerprint      {}\n", fingerprint_hex(inst));
  fmt::print("d_u, d_l         {}, {}\n", inst.dim_upper(), inst.dim_lower());
  fmt::print("constraint rows  {} ({} random + {} box, R = {})\n", poly.rows(), info.random_rows,
             poly.rows() - info.random_rows, info.box_radius);
  fmt::print("components       {}\n", inst.num_components());
  fmt::print("generator seed   {}\n", info.seed);
  fmt::print("mu_g, L_g        {}, {}\n", inst.mu_g(), inst.lipschitz_g());
  fmt::print("min slack at 0   {:.6g}\n", poly.rows() > 0 ? slack0.minCoeff() : 0.0);
  return 0;
}

int cmd_run(const std::string& config_path) {
  const ExperimentConfig cfg = load_config(config_path);
  const ExperimentResult res = run_experiment(cfg);
  fmt::print("instance {}\n", res.fingerprint);
  if (res.tuning) fmt::print("tuned step {}\n", res.tuning->step);
  for (const auto& r : res.runs) {
    if (r.status == RunStatus::Failed) {
      fmt::print("{:<10} seed {:<4} FAILED  {}\n", r.label, r.seed, r.error);
      continue;
    }
    const auto& d = r.diagnostics;
    std::string stat;
    if (d.has_window) {
      stat = fmt::format("trailing stationarity {:.3e}", d.stored.trailing_average);
    } else if (!r.log.records.empty()) {
      stat = fmt::format("final |g| {:.3e}", r.log.records.back().grad.norm());
    }
    fmt::print("{:<10} seed {:<4} {:<9} F {:.6g} -> {:.6g}  {}  {:.2f}s (LL {:.2f}s)\n", r.label, r.seed,
               to_string(r.status), d.F_first, d.F_last, stat, r.log.total_seconds, r.log.ll_seconds);
  }
  fmt::print("summary {}\n", res.summary_path.string());
  if (!res.svg_path.empty()) fmt::print("plot {}\n", res.svg_path.string());
  return res.any_aborted() ? 1 : 0;
}

int cmd_verify(const std::string& level, bool inject_fault, const std::string& report_path,
               const std::string& scratch) {
  verify::AcceptanceOptions opt;
  opt.level = level == "full" ? verify::Level::Full : verify::Level::Fast;
  opt.inject_fault = inject_fault;
  if (!scratch.empty()) opt.scratch = scratch;
  opt.on_result = [](const verify::CriterionResult& c) {
    fmt::print("{}\n", verify::format_line(c));
    std::fflush(stdout);
  };
  const verify::AcceptanceReport report = verify::run_acceptance(opt);
  fmt::print("{} in {:.1f}s\n", report.passed() ? "ALL PASSED" : "FAILED", report.seconds);
  if (!report_path.empty()) {
    std::ofstream out(report_path);
    out << verify::to_json(report).dump(2) << "\n";
  }
  return report.passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Doubly stochastic bilevel optimization: instances, experiments, verification"};
  app.require_subcommand(1);

  GeneratorOptions gen;
  std::string gen_out;
  auto* generate = app.add_subcommand("generate", "Generate a random quadratic instance");
  generate->add_option("--du", gen.d_u, "Upper-level dimension")->required()->check(CLI::PositiveNumber);
  generate->add_option("--dl", gen.d_l, "Lower-level dimension")->required()->check(CLI::PositiveNumber);
  generate->add_option("--k", gen.k, "Number of random coupled constraint rows")->required()->check(CLI::NonNegativeNumber);
  generate->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
  generate->add_option("--components", gen.components, "Number of upper-level components N")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  generate->add_option("--box-radius", gen.box_radius, "Box radius R of the appended |y_j| <= R rows")
      ->capture_default_str();
  generate->add_option("-o,--output", gen_out, "Instance file to write")->required();

  std::string config_path;
  auto* run = app.add_subcommand("run", "Run an experiment config");
  run->add_option("config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);

  std::string level = "fast";
  bool inject_fault = false;
  std::string report_path, scratch;
  auto* verify_cmd = app.add_subcommand("verify", "Run the acceptance criteria");
  verify_cmd->add_option("level", level, "fast or full")->capture_default_str()->check(CLI::IsMember({"fast", "full"}));
  verify_cmd->add_flag("--inject-fault", inject_fault, "Flip the coupling sign in the gradient check fixture");
  verify_cmd->add_option("--report", report_path, "Write a JSON report here");
  verify_cmd->add_option("--scratch", scratch, "Working directory for the determinism runs");

  std::string inspect_path;
  auto* inspect = app.add_subcommand("inspect", "Print an instance summary");
  inspect->add_option("instance", inspect_path, "Instance file")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*generate) return cmd_generate(gen, gen_out);
    if (*run) return cmd_run(config_path);
    if (*verify_cmd) return cmd_verify(level, inject_fault, report_path, scratch);
    if (*inspect) return cmd_inspect(inspect_path);
  } catch (const Error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return e.code() == ErrorCode::Config ? 2 : 1;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}

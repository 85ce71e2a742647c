#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <sgsw/error.hpp>
#include <sgsw/parallel.hpp>
#include <sgsw/runner.hpp>

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::string output;
  int threads = 0;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "INI configuration file")->check(CLI::ExistingFile);
  cmd->add_option("-s,--set", c.overrides, "Override a key, e.g. --set solver.eps=0.03")->take_all();
  cmd->add_option("-o,--output", c.output, "Output directory (run.output)");
  cmd->add_option("-j,--threads", c.threads, "Worker threads (overrides SGSW_THREADS)")->check(CLI::PositiveNumber);
}

sgsw::RunConfig build_config(const Common& c) {
  sgsw::RunConfig cfg = c.config.empty() ? sgsw::RunConfig{} : sgsw::load_config(c.config);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw sgsw::ValidationError(kv, "expected key=value");
    sgsw::set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!c.output.empty()) cfg.output = c.output;
  if (c.threads > 0) sgsw::set_thread_count(c.threads);
  cfg.validate();
  return cfg;
}

int report(const sgsw::CommandResult& r) {
  (r.exit_code == sgsw::exit_ok ? std::cout : std::cerr) << r.message << '\n';
  return r.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-geostrophic shallow-water particle solver"};
  app.require_subcommand(1);

  Common sim_opts;
  auto* sim = app.add_subcommand("simulate", "Run a simulation and write snapshots");
  add_common(sim, sim_opts);
  bool binary = false;
  sim->add_flag("--binary", binary, "Also write binary particle snapshots");

  Common study_opts;
  std::string kind;
  auto* study = app.add_subcommand("study", "Run a diagnostic study");
  study->add_option("kind", kind, "energy | eps_convergence | pseudoconvergence | ageostrophic")->required();
  add_common(study, study_opts);

  std::string report_path;
  auto* verify = app.add_subcommand("verify", "Check the solvers against small-instance oracles");
  verify->add_option("-r,--report", report_path, "Also write the JSON report to this file");

  std::string run_dir, bundle_dir;
  auto* render = app.add_subcommand("render-data", "Convert a run directory into a plotting bundle");
  render->add_option("run_dir", run_dir, "Directory written by simulate")->required();
  render->add_option("bundle_dir", bundle_dir, "Bundle output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? sgsw::exit_ok : sgsw::exit_validation;
  }

  try {
    if (*sim) {
      auto cfg = build_config(sim_opts);
      if (binary) cfg.binary = true;
      return report(sgsw::cmd_simulate(cfg));
    }
    if (*study) return report(sgsw::cmd_study(build_config(study_opts), kind));
    if (*verify) {
      sgsw::VerifyOptions opts;
      opts.report = report_path;
      return report(sgsw::cmd_verify(opts, std::cout));
    }
    if (*render) return report(sgsw::cmd_render_data(run_dir, bundle_dir));
  } catch (const sgsw::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return sgsw::exit_validation;
  } catch (const sgsw::SolverError& e) {
    std::cerr << "solver error: " << e.what() << '\n';
    return sgsw::exit_solver;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return sgsw::exit_solver;
  }
  return sgsw::exit_validation;
}

#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "sgsw/diagnostics.hpp"
#include "sgsw/dynamics.hpp"
#include "sgsw/scenarios.hpp"

namespace sgsw {

/// Process exit codes shared by every subcommand.
enum ExitCode : int { exit_ok = 0, exit_validation = 1, exit_solver = 2, exit_partial = 3 };

struct StudySettings {
  std::vector<double> eps_list{0.08, 0.04, 0.02};
  int reference_n = 64;
  double loss_eps = 0.01;
  double loss_tol = 1e-9;
  std::vector<double> pseudo_eps_list{0.1, 0.07, 0.05};
  double pseudo_reference_eps = 0.035;
  std::vector<double> pseudo_times{0.0, 1.0};
};

/// Everything a run or study needs. Serialised as an INI document with the
/// sections [scenario] [physics] [grid] [solver] [time] [run] [study].
struct RunConfig {
  Scenario scenario = make_scenario("jet");
  PhysicalParams params;
  int n1 = 32;
  int n2 = 32;
  SolverConfig solver;
  double saddle_relaxation = 0.5;
  Stepper stepper;
  double horizon = 10.0;
  int snapshot_every = 10;
  VelocityMode mode = VelocityMode::debiased;
  std::filesystem::path output = "sgsw_run";
  bool binary = false;
  unsigned long seed = 0;
  StudySettings study;

  /// Throws ValidationError naming the offending key.
  void validate() const;
  Grid grid() const { return Grid(n1, n2, scenario.domain); }
  FlowModel model() const;
};

/// Keys are "section.key". Unknown keys and malformed values throw
/// ValidationError naming the key.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
std::string to_ini(const RunConfig& cfg);
/// Starts from defaults, applies every key in the document. Setting
/// scenario.name first resets the scenario parameters to that preset.
RunConfig config_from_ini(std::istream& is);
RunConfig load_config(const std::filesystem::path& path);

struct CommandResult {
  int exit_code = exit_ok;
  std::string message;
  std::filesystem::path output;
};

/// Runs the configured simulation into cfg.output: config.ini, one text (and
/// optionally binary) particle table and one potential table per snapshot,
/// stats.tsv, residuals.tsv, energy.tsv and manifest.json.
CommandResult cmd_simulate(const RunConfig& cfg);

/// kind is energy | eps_convergence | pseudoconvergence | ageostrophic.
/// Writes <kind>.tsv and manifest.json into cfg.output.
CommandResult cmd_study(const RunConfig& cfg, const std::string& kind);

struct VerifyOptions {
  /// Replaces the W0 implementation under test (fault injection).
  std::function<double(double)> lambert;
  std::filesystem::path report;  // empty: no file
};

/// Small-instance oracle checks. Prints one JSON report on `out`.
CommandResult cmd_verify(const VerifyOptions& opts, std::ostream& out);

/// Converts a run directory into a viz bundle: per-snapshot projection tables
/// (Y, reconstructed X, velocity, initial y1) and height tables, plus copies
/// of the run's stats, residual and energy tables.
CommandResult cmd_render_data(const std::filesystem::path& run_dir, const std::filesystem::path& bundle_dir);

struct SnapshotTable {
  double t = 0.0;
  long step_index = 0;
  DiscreteMeasure particles;
  std::vector<double> psi;
  std::vector<double> psi_sym;  // empty when not stored
  std::vector<Point2> velocity;
};

void write_snapshot_table(std::ostream& os, const Snapshot& snap);
SnapshotTable read_snapshot_table(std::istream& is);
/// Same schema as the text table: magic "SGSWSNP1", t, step, row count, then
/// rows of seven doubles (x1 x2 weight psi psi_sym v1 v2), little endian.
void write_snapshot_binary(std::ostream& os, const Snapshot& snap);
SnapshotTable read_snapshot_binary(std::istream& is);

struct PotentialTable {
  std::vector<double> phi;
  std::vector<double> h;
  std::vector<double> u;  // empty when not stored
};

void write_potential_table(std::ostream& os, const Grid& grid, const Snapshot& snap, const FlowModel& model);
PotentialTable read_potential_table(std::istream& is);

}  // namespace sgsw

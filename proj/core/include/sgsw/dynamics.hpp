#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "sgsw/entropic_ot.hpp"
#include "sgsw/saddle.hpp"

namespace sgsw {

/// biased: f J grad psi. debiased: f J grad(psi - psi_sym).
/// saddle: debiased velocity with phi, psi taken from the saddle solve.
enum class VelocityMode { biased, debiased, saddle };
enum class StepperKind { euler, heun, rk4 };

std::string_view to_string(VelocityMode m);
std::string_view to_string(StepperKind k);
/// Throws ValidationError naming `field` on unknown names.
VelocityMode parse_velocity_mode(std::string_view s, const std::string& field = "mode");
StepperKind parse_stepper(std::string_view s, const std::string& field = "stepper");

struct Stepper {
  StepperKind kind = StepperKind::heun;
  double dt = 0.1;

  void validate() const;
  int stages() const;
  /// Classical order of the scheme.
  int order() const;
};

/// J(a, b) = (b, -a).
inline Point2 rotate_j(Point2 v) { return {v.x2, -v.x1}; }

struct SimulationState {
  double t = 0.0;
  /// Positions Y and the fixed weights h_0 / N.
  DiscreteMeasure particles;
  /// Last converged potentials; seeds the next solve when warm starts are on.
  DualPotentials pots;
  long step_index = 0;
};

struct FlowModel {
  DiscreteMeasure grid_measure;
  PhysicalParams params;
  SolverConfig cfg;
  VelocityMode mode = VelocityMode::debiased;
  Domain domain;
  double saddle_relaxation = 0.5;
};

struct VelocityResult {
  std::vector<Point2> velocity;
  /// Converged at the (remapped) positions the velocity was evaluated at.
  DualPotentials pots;
  SolveStats stats;
  SolveStats sym_stats;
  /// Saddle heights (saddle mode only).
  GridField saddle_h;
};

/// Solves for the potentials at `particles` (remapped in x1 first) and returns
/// the per-particle velocity for model.mode. `warm` seeds the solves when
/// model.cfg.warm_start is set. Throws SolverError on non-convergence with the
/// supplied context attached.
VelocityResult velocity_field(const DiscreteMeasure& particles, const FlowModel& model,
                              const DualPotentials* warm = nullptr, const std::string& context = {});

/// Velocity evaluator for rk_advance: positions and stage number -> velocities.
using VelocityFn = std::function<std::vector<Point2>(const std::vector<Point2>&, int)>;

/// One explicit Runge-Kutta step in unwrapped coordinates.
std::vector<Point2> rk_advance(const std::vector<Point2>& y, double dt, StepperKind kind, const VelocityFn& v);

struct StepResult {
  SimulationState state;
  /// Velocity at the start of the step (stage 1).
  std::vector<Point2> velocity;
  /// Potentials converged at the step's starting positions.
  DualPotentials start_pots;
  std::vector<SolveStats> stage_stats;
};

/// Advances one step, re-solving at every stage and warm-starting each stage
/// from the previous one. Positions are remapped once, after the last stage.
/// The input state is untouched, so a throwing step leaves the caller's state
/// as it was.
StepResult step(const SimulationState& state, const FlowModel& model, const Stepper& stepper);

struct Snapshot {
  SimulationState state;  // pots converged at state.particles
  std::vector<Point2> velocity;
  GridField saddle_h;
};

struct StepRecord {
  long step_index = 0;
  double t = 0.0;
  std::vector<SolveStats> stage_stats;
};

struct RunResult {
  std::vector<Snapshot> snapshots;
  std::vector<StepRecord> steps;
  bool completed = false;
  std::string failure;
};

struct RunOptions {
  double horizon = 10.0;
  /// Snapshot every this many steps (and always at t = 0 and the final step).
  int snapshot_every = 10;
  bool keep_snapshots = true;
  std::function<void(const Snapshot&)> on_snapshot;
  std::function<void(const StepRecord&)> on_step;
};

/// Number of steps covering `horizon` at `dt`.
long step_count(double horizon, double dt);

/// Steps from `initial` to the horizon. The first failing step ends the run
/// with completed = false; earlier snapshots are kept.
RunResult run(const SimulationState& initial, const FlowModel& model, const Stepper& stepper,
              const RunOptions& opts);

/// Evaluates the snapshot quantities (potentials, velocity) at the state's
/// current positions.
Snapshot snapshot_at(const SimulationState& state, const FlowModel& model);

/// Diagnostic physical positions X = Y - (b^S - b), i.e. Y - grad(psi - psi_sym),
/// remapped in x1, with the particle weights. Without psi_sym, X = b.
DiscreteMeasure reconstruct_physical_positions(const SimulationState& state, const FlowModel& model);

}  // namespace sgsw

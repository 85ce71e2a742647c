#include "sgsw/dynamics.hpp"

#include <cmath>
#include <sstream>

#include "sgsw/error.hpp"

namespace sgsw {

std::string_view to_string(VelocityMode m) {
  switch (m) {
    case VelocityMode::biased: return "biased";
    case VelocityMode::debiased: return "debiased";
    case VelocityMode::saddle: return "saddle";
  }
  return "?";
}

std::string_view to_string(StepperKind k) {
  switch (k) {
    case StepperKind::euler: return "euler";
    case StepperKind::heun: return "heun";
    case StepperKind::rk4: return "rk4";
  }
  return "?";
}

VelocityMode parse_velocity_mode(std::string_view s, const std::string& field) {
  for (auto m : {VelocityMode::biased, VelocityMode::debiased, VelocityMode::saddle})
    if (s == to_string(m)) return m;
  throw ValidationError(field, "unknown mode '" + std::string(s) + "' (biased | debiased | saddle)");
}

StepperKind parse_stepper(std::string_view s, const std::string& field) {
  for (auto k : {StepperKind::euler, StepperKind::heun, StepperKind::rk4})
    if (s == to_string(k)) return k;
  throw ValidationError(field, "unknown stepper '" + std::string(s) + "' (euler | heun | rk4)");
}

void Stepper::validate() const {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ValidationError("time.dt", "must be positive");
}

int Stepper::stages() const { return kind == StepperKind::euler ? 1 : kind == StepperKind::heun ? 2 : 4; }
int Stepper::order() const { return stages(); }

namespace {

void require_converged(const SolveStats& s, const std::string& what, const std::string& context) {
  if (s.converged) return;
  std::ostringstream msg;
  msg << what << " did not converge in " << s.iterations << " iterations (residual " << s.final_residual << ")";
  if (!context.empty()) msg << " at " << context;
  throw SolverError(msg.str());
}

std::vector<Point2> axpy(const std::vector<Point2>& y, double a, const std::vector<Point2>& k) {
  std::vector<Point2> out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = y[i] + a * k[i];
  return out;
}

}  // namespace

VelocityResult velocity_field(const DiscreteMeasure& particles, const FlowModel& model, const DualPotentials* warm,
                              const std::string& context) {
  const DiscreteMeasure y = remap_periodic(particles, model.domain);
  const std::size_t n = model.grid_measure.size();
  const bool use_warm = warm && model.cfg.warm_start;
  VelocityResult r;

  if (model.mode == VelocityMode::saddle) {
    SaddleState init;
    const SaddleState* init_ptr = nullptr;
    if (use_warm && warm->phi.size() == n && warm->u.size() == n && warm->psi.size() == y.size()) {
      init.phi = warm->phi;
      init.psi = warm->psi;
      init.u = warm->u;
      init_ptr = &init;
    }
    auto sol = saddle_sinkhorn(model.grid_measure, y, model.params, model.cfg, init_ptr, model.domain,
                               model.saddle_relaxation);
    require_converged(sol.stats, "saddle Sinkhorn", context);
    r.pots.phi = std::move(sol.state.phi);
    r.pots.psi = std::move(sol.state.psi);
    r.pots.u = std::move(sol.state.u);
    r.saddle_h = std::move(sol.state.h);
    r.stats = std::move(sol.stats);
  } else {
    auto sol = solve_swsg_dual(model.grid_measure, y, model.params, model.cfg, use_warm ? warm : nullptr,
                               model.domain);
    require_converged(sol.stats, "Sinkhorn", context);
    r.pots = std::move(sol.pots);
    r.stats = std::move(sol.stats);
  }

  std::vector<Point2> grad;
  if (model.mode == VelocityMode::biased) {
    grad = psi_gradient(r.pots, model.grid_measure, y, model.cfg.eps, model.domain);
  } else {
    std::span<const double> sym_init;
    if (use_warm && warm->psi_sym.size() == y.size()) sym_init = warm->psi_sym;
    auto sym = symmetric_sinkhorn(y, model.cfg.eps, model.cfg.tol, model.cfg.max_iters, sym_init, model.domain);
    require_converged(sym.stats, "symmetric Sinkhorn", context);
    r.pots.psi_sym = std::move(sym.psi_sym);
    r.sym_stats = std::move(sym.stats);
    grad = debiased_gradient(r.pots, model.grid_measure, y, model.cfg.eps, model.domain);
  }

  r.velocity.resize(grad.size());
  for (std::size_t j = 0; j < grad.size(); ++j) r.velocity[j] = model.params.f * rotate_j(grad[j]);
  return r;
}

std::vector<Point2> rk_advance(const std::vector<Point2>& y, double dt, StepperKind kind, const VelocityFn& v) {
  switch (kind) {
    case StepperKind::euler:
      return axpy(y, dt, v(y, 0));
    case StepperKind::heun: {
      const auto k1 = v(y, 0);
      const auto k2 = v(axpy(y, dt, k1), 1);
      std::vector<Point2> out(y.size());
      for (std::size_t i = 0; i < y.size(); ++i) out[i] = y[i] + 0.5 * dt * (k1[i] + k2[i]);
      return out;
    }
    case StepperKind::rk4: {
      const auto k1 = v(y, 0);
      const auto k2 = v(axpy(y, 0.5 * dt, k1), 1);
      const auto k3 = v(axpy(y, 0.5 * dt, k2), 2);
      const auto k4 = v(axpy(y, dt, k3), 3);
      std::vector<Point2> out(y.size());
      for (std::size_t i = 0; i < y.size(); ++i)
        out[i] = y[i] + (dt / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
      return out;
    }
  }
  throw ValidationError("stepper", "unknown stepper kind");
}

StepResult step(const SimulationState& state, const FlowModel& model, const Stepper& stepper) {
  stepper.validate();
  StepResult res;
  DualPotentials seed = state.pots;
  const auto velocity = [&](const std::vector<Point2>& pos, int stage) {
    std::ostringstream ctx;
    ctx << "t=" << state.t << " step " << state.step_index + 1 << " stage " << stage + 1;
    auto v = velocity_field(DiscreteMeasure{pos, state.particles.weights}, model, &seed, ctx.str());
    seed = v.pots;
    res.stage_stats.push_back(std::move(v.stats));
    if (stage == 0) {
      res.velocity = v.velocity;
      res.start_pots = v.pots;
    }
    return std::move(v.velocity);
  };
  const auto next = rk_advance(state.particles.points, stepper.dt, stepper.kind, velocity);

  res.state.t = state.t + stepper.dt;
  res.state.step_index = state.step_index + 1;
  res.state.particles.points = remap_periodic(next, model.domain);
  res.state.particles.weights = state.particles.weights;
  res.state.pots = std::move(seed);
  return res;
}

long step_count(double horizon, double dt) {
  if (!(horizon >= 0.0) || !std::isfinite(horizon)) throw ValidationError("time.T", "must be >= 0");
  if (!(dt > 0.0)) throw ValidationError("time.dt", "must be positive");
  return std::lround(horizon / dt);
}

Snapshot snapshot_at(const SimulationState& state, const FlowModel& model) {
  std::ostringstream ctx;
  ctx << "t=" << state.t << " (snapshot)";
  auto v = velocity_field(state.particles, model, &state.pots, ctx.str());
  Snapshot s;
  s.state = state;
  s.state.particles = remap_periodic(state.particles, model.domain);
  s.state.pots = std::move(v.pots);
  s.velocity = std::move(v.velocity);
  s.saddle_h = std::move(v.saddle_h);
  return s;
}

RunResult run(const SimulationState& initial, const FlowModel& model, const Stepper& stepper,
              const RunOptions& opts) {
  stepper.validate();
  const long n = step_count(opts.horizon, stepper.dt);
  const int every = std::max(1, opts.snapshot_every);
  RunResult out;

  const auto emit = [&](Snapshot&& s) {
    if (opts.on_snapshot) opts.on_snapshot(s);
    if (opts.keep_snapshots) out.snapshots.push_back(std::move(s));
  };

  SimulationState state = initial;
  try {
    Snapshot s0 = snapshot_at(state, model);
    state.pots = s0.state.pots;
    emit(std::move(s0));
  } catch (const Error& e) {
    out.failure = e.what();
    return out;
  }

  for (long k = 1; k <= n; ++k) {
    try {
      StepResult r = step(state, model, stepper);
      StepRecord rec{r.state.step_index, r.state.t, std::move(r.stage_stats)};
      if (opts.on_step) opts.on_step(rec);
      out.steps.push_back(std::move(rec));
      state = std::move(r.state);
      if (k % every == 0 || k == n) {
        Snapshot s = snapshot_at(state, model);
        state.pots = s.state.pots;
        emit(std::move(s));
      }
    } catch (const Error& e) {
      out.failure = e.what();
      return out;
    }
  }
  out.completed = true;
  return out;
}

DiscreteMeasure reconstruct_physical_positions(const SimulationState& state, const FlowModel& model) {
  const DiscreteMeasure y = remap_periodic(state.particles, model.domain);
  const auto b = barycentric_map(state.pots.phi, model.grid_measure, y, model.cfg.eps, model.domain);
  DiscreteMeasure x{b, y.weights};
  if (state.pots.has_psi_sym()) {
    const auto bs = symmetric_barycentric_map(state.pots.psi_sym, y, model.cfg.eps, model.domain);
    for (std::size_t j = 0; j < b.size(); ++j) x.points[j] = b[j] + (y.points[j] - bs[j]);
  }
  return remap_periodic(x, model.domain);
}

}  // namespace sgsw

#include "sgsw/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "sgsw/detail/sinkhorn.hpp"
#include "sgsw/error.hpp"
#include "sgsw/saddle.hpp"
#include "sgsw/warnings.hpp"

namespace sgsw {

namespace {

double weighted_sum(std::span<const double> w, std::span<const double> v) {
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * v[i];
  return s;
}

void require(const SolveStats& s, const std::string& what) {
  if (s.converged) return;
  std::ostringstream msg;
  msg << what << " did not converge in " << s.iterations << " iterations (residual " << s.final_residual << ")";
  throw SolverError(msg.str());
}

std::vector<Point2> velocity_from_gradient(const std::vector<Point2>& grad, double f) {
  std::vector<Point2> v(grad.size());
  for (std::size_t j = 0; j < grad.size(); ++j) v[j] = f * rotate_j(grad[j]);
  return v;
}

double loss_divergence(double cross, double self_a, double self_b) {
  return std::sqrt(std::max(0.0, cross - 0.5 * self_a - 0.5 * self_b));
}

}  // namespace

double uniform_energy_floor(const DiscreteMeasure& sigma, const DiscreteMeasure& grid_measure,
                            const PhysicalParams& params) {
  const double m_mu = total_mass(grid_measure);
  if (!(m_mu > 0.0)) throw ValidationError("grid", "total mass must be positive");
  const double hbar = total_mass(sigma) / m_mu;
  return 0.5 * params.g * hbar * hbar * m_mu;
}

double symmetric_ot_value(std::span<const double> psi_sym, const DiscreteMeasure& sigma, double eps,
                          const Domain& domain) {
  const double m = total_mass(sigma);
  return 2.0 * weighted_sum(sigma.weights, psi_sym) -
         eps * (coupling_mass(psi_sym, psi_sym, sigma, sigma, eps, domain) - m * m);
}

EnergyReport energy_report(const Snapshot& snap, const FlowModel& model, const EnergyReport* baseline,
                           double uniform_floor) {
  const auto& pots = snap.state.pots;
  const auto& sigma = snap.state.particles;
  const auto& mu = model.grid_measure;
  const auto& params = model.params;
  const double eps = model.cfg.eps;
  const double f2 = params.f * params.f;
  if (pots.phi.size() != mu.size() || pots.psi.size() != sigma.size())
    throw ValidationError("snapshot", "potentials do not match the grid and particle counts");

  EnergyReport r;
  r.t = snap.state.t;
  const double coupling = coupling_mass(pots.phi, pots.psi, mu, sigma, eps, model.domain);
  r.entropy_term = eps * (coupling - total_mass(mu) * total_mass(sigma));

  GridField h = model.mode == VelocityMode::saddle ? snap.saddle_h : height_from_phi(pots.phi, params);
  if (h.size() != mu.size()) throw ValidationError("snapshot", "saddle mode needs the saddle height");
  double h2 = 0.0, h_phi = 0.0, m_h = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    h2 += mu.weights[i] * h[i] * h[i];
    h_phi += mu.weights[i] * h[i] * pots.phi[i];
    m_h += mu.weights[i] * h[i];
  }
  r.potential = 0.5 * params.g * h2;

  switch (model.mode) {
    case VelocityMode::saddle: {
      if (pots.u.size() != mu.size()) throw ValidationError("snapshot", "saddle mode needs u");
      // At the u optimum the symmetric part of F equals -OT_eps(h mu, h mu)/2 + eps m_h / 2.
      const SaddleState s{h, pots.u, pots.phi, pots.psi};
      r.kinetic = f2 * (saddle_functional(s, mu, sigma, params, eps, model.domain) - 0.5 * eps * m_h) - r.potential;
      break;
    }
    case VelocityMode::debiased: {
      // OT_eps(h mu, h mu) against mu (x) mu is the self value against
      // (h mu) (x) (h mu) plus 2 eps sum mu h log h.
      DiscreteMeasure alpha{mu.points, std::vector<double>(h.size())};
      double h_log_h = 0.0;
      for (std::size_t i = 0; i < h.size(); ++i) {
        alpha.weights[i] = mu.weights[i] * h[i];
        if (h[i] > 0.0) h_log_h += alpha.weights[i] * std::log(h[i]);
      }
      const double self = ot_eps_self_value(alpha, eps, model.cfg.tol, model.domain, model.cfg.max_iters);
      r.kinetic = f2 * (weighted_sum(sigma.weights, pots.psi) + h_phi - r.entropy_term - 0.5 * self - eps * h_log_h);
      break;
    }
    case VelocityMode::biased:
      r.kinetic = f2 * (weighted_sum(sigma.weights, pots.psi) + h_phi - r.entropy_term);
      break;
  }
  if (model.mode != VelocityMode::biased) {
    if (!pots.has_psi_sym()) throw ValidationError("snapshot", "debiased energy needs psi_sym");
    r.kinetic -= 0.5 * f2 * symmetric_ot_value(pots.psi_sym, sigma, eps, model.domain);
  }
  r.total = r.kinetic + r.potential;
  if (baseline) {
    const double denom = baseline->total - uniform_floor;
    if (denom == 0.0) throw ValidationError("energy", "baseline equals the uniform floor");
    r.normalized_error = (r.total - baseline->total) / denom;
  }
  return r;
}

double ageostrophic_ratio(const Snapshot& prev, const Snapshot& cur, const Snapshot& next, const FlowModel& model) {
  const double dt0 = cur.state.t - prev.state.t;
  const double dt1 = next.state.t - cur.state.t;
  if (!(dt0 > 0.0) || std::abs(dt0 - dt1) > 1e-9 * std::max(dt0, dt1))
    throw ValidationError("snapshots", "need three equally spaced times");
  const std::size_t n = cur.state.particles.size();
  if (prev.state.particles.size() != n || next.state.particles.size() != n || cur.velocity.size() != n)
    throw ValidationError("snapshots", "particle counts differ");

  const auto xp = reconstruct_physical_positions(prev.state, model);
  const auto xn = reconstruct_physical_positions(next.state, model);
  const auto& w = cur.state.particles.weights;
  const double span = dt0 + dt1;
  double num = 0.0, den = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const Point2 u{image_offset(xp.points[j].x1, xn.points[j].x1, model.domain.x1_period) / span,
                   (xn.points[j].x2 - xp.points[j].x2) / span};
    num += w[j] * norm2(u - cur.velocity[j]);
    den += w[j] * norm2(cur.velocity[j]);
  }
  if (!(den > 0.0)) throw ValidationError("snapshots", "geostrophic velocity vanishes");
  return std::sqrt(num / den);
}

DiscreteMeasure normalized_measure(std::vector<Point2> points, std::vector<double> weights,
                                   const std::string& what) {
  if (points.size() != weights.size()) throw ValidationError(what, "points and weights differ in length");
  std::size_t clamped = 0;
  double total = 0.0;
  for (double& w : weights) {
    if (!std::isfinite(w)) throw ValidationError(what, "non-finite weight");
    if (w < 0.0) {
      w = 0.0;
      ++clamped;
    }
    total += w;
  }
  if (clamped > 0) warn(what + ": clamped " + std::to_string(clamped) + " negative values to zero");
  if (!(total > 0.0)) throw ValidationError(what, "total mass must be positive");
  for (double& w : weights) w /= total;
  return {std::move(points), std::move(weights)};
}

LossReference make_height_reference(const Grid& grid, const GridField& h, double loss_eps, double tol) {
  LossReference ref;
  ref.measure = normalized_measure(grid.nodes(), h, "reference height");
  ref.loss_eps = loss_eps;
  ref.tol = tol;
  ref.self_value = ot_eps_self_value(ref.measure, loss_eps, tol, grid.domain());
  return ref;
}

double height_error(const GridField& h, const Grid& grid, const LossReference& ref) {
  if (h.size() != grid.size()) throw ValidationError("height", "size does not match the grid");
  const auto a = normalized_measure(grid.nodes(), h, "height");
  const double cross = ot_eps_value(a, ref.measure, ref.loss_eps, ref.tol, grid.domain());
  return loss_divergence(cross, ot_eps_self_value(a, ref.loss_eps, ref.tol, grid.domain()), ref.self_value);
}

double bilinear_sample(const GridField& field, const Grid& grid, Point2 p) {
  const auto& d = grid.domain();
  const int n1 = grid.n1(), n2 = grid.n2();
  const Point2 q = remap_periodic(p, d);
  const double s1 = q.x1 / grid.dx1() - 0.5;
  const double f1 = std::floor(s1);
  const double t1 = s1 - f1;
  const int i0 = (static_cast<int>(f1) % n1 + n1) % n1;
  const int i1 = (i0 + 1) % n1;

  int j0 = 0, j1 = 0;
  double t2 = 0.0;
  if (n2 > 1) {
    const double s2 = std::clamp((q.x2 - d.x2_min) / grid.dx2() - 0.5, 0.0, static_cast<double>(n2 - 1));
    j0 = std::min(static_cast<int>(std::floor(s2)), n2 - 2);
    j1 = j0 + 1;
    t2 = s2 - j0;
  }
  const auto at = [&](int a, int b) { return field[grid.index(a, b)]; };
  return (1 - t1) * ((1 - t2) * at(i0, j0) + t2 * at(i0, j1)) + t1 * ((1 - t2) * at(i1, j0) + t2 * at(i1, j1));
}

double l2_height_error(const GridField& h, const Grid& grid, const GridField& h_ref, const Grid& ref_grid) {
  if (h.size() != grid.size() || h_ref.size() != ref_grid.size())
    throw ValidationError("height", "size does not match the grid");
  double s = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double e = h[i] - bilinear_sample(h_ref, ref_grid, grid.node(i));
    s += e * e;
  }
  return std::sqrt(s / static_cast<double>(h.size()));
}

double phase_cost(const PhasePoint& a, const PhasePoint& b, const Domain& domain) {
  return periodic_cost(a.y, b.y, domain) + norm2(a.v - b.v);
}

PhaseReference make_phase_reference(const Grid& grid, const HeightFn& height, const PhysicalParams& params,
                                    double loss_eps, double tol) {
  PhaseReference ref;
  ref.loss_eps = loss_eps;
  ref.tol = tol;
  ref.domain = grid.domain();
  const double k = params.hoskins_scale();
  std::vector<double> w;
  for (const Point2& x : grid.nodes()) {
    const auto s = height(x);
    ref.cloud.points.push_back({remap_periodic(x + k * s.grad, ref.domain), params.f * k * rotate_j(s.grad)});
    w.push_back(s.h);
  }
  const std::size_t n = w.size();
  ref.cloud.weights = normalized_measure(std::vector<Point2>(n), std::move(w), "reference height").weights;
  const auto& pts = ref.cloud.points;
  const auto cost = [&](std::size_t i, std::size_t j) { return phase_cost(pts[i], pts[j], ref.domain); };
  ref.self_value = detail::ot_eps_self_value(ref.cloud.weights, cost, loss_eps, tol, 100000);
  return ref;
}

double phase_space_error(const DiscreteMeasure& particles, const std::vector<Point2>& velocity,
                         const PhaseReference& ref) {
  if (velocity.size() != particles.size()) throw ValidationError("velocity", "size does not match the particles");
  PhaseCloud a;
  a.weights = normalized_measure(particles.points, particles.weights, "particle weights").weights;
  for (std::size_t j = 0; j < particles.size(); ++j)
    a.points.push_back({remap_periodic(particles.points[j], ref.domain), velocity[j]});

  const auto& pa = a.points;
  const auto& pb = ref.cloud.points;
  const auto self_cost = [&](std::size_t i, std::size_t j) { return phase_cost(pa[i], pa[j], ref.domain); };
  const auto cross_cost = [&](std::size_t i, std::size_t j) { return phase_cost(pa[i], pb[j], ref.domain); };
  const double cross =
      detail::ot_eps_value(a.weights, ref.cloud.weights, cross_cost, ref.loss_eps, ref.tol, 100000);
  const double self = detail::ot_eps_self_value(a.weights, self_cost, ref.loss_eps, ref.tol, 100000);
  return loss_divergence(cross, self, ref.self_value);
}

double cloud_error(const DiscreteMeasure& a, const DiscreteMeasure& b, double loss_eps, double tol,
                   const Domain& domain) {
  const auto na = normalized_measure(remap_periodic(a.points, domain), a.weights, "cloud");
  const auto nb = normalized_measure(remap_periodic(b.points, domain), b.weights, "reference cloud");
  return std::sqrt(std::max(0.0, sinkhorn_divergence(na, nb, loss_eps, tol, domain)));
}

GridField debiased_potential_height(std::span<const double> u, std::span<const double> phi,
                                    const PhysicalParams& params, double eps) {
  if (u.size() != phi.size()) throw ValidationError("u", "size does not match phi");
  GridField h(u.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (!(u[i] > 0.0)) throw ValidationError("u", "must be positive");
    h[i] = params.height_factor() * (eps * std::log(u[i]) - phi[i]);
  }
  return h;
}

GridField snapshot_height(const Snapshot& snap, const FlowModel& model) {
  const auto& pots = snap.state.pots;
  switch (model.mode) {
    case VelocityMode::saddle:
      if (snap.saddle_h.size() != model.grid_measure.size())
        throw ValidationError("snapshot", "saddle mode needs the saddle height");
      return snap.saddle_h;
    case VelocityMode::debiased: {
      // The dynamics only solved the biased problem; the debiased height
      // needs its own saddle solve at the snapshot positions.
      SaddleState init{{}, std::vector<double>(pots.phi.size(), 1.0), pots.phi, pots.psi};
      const auto sad = saddle_sinkhorn(model.grid_measure, snap.state.particles, model.params, model.cfg, &init,
                                       model.domain, model.saddle_relaxation);
      require(sad.stats, "saddle Sinkhorn");
      return sad.state.h;
    }
    case VelocityMode::biased:
      break;
  }
  return height_from_phi(pots.phi, model.params);
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ValidationError("fit", "need at least two points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw ValidationError("fit", "log-log fit needs positive values");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= x.size();
  my /= y.size();
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  if (!(sxx > 0.0)) throw ValidationError("fit", "abscissae must differ");
  return sxy / sxx;
}

EpsConvergenceResult eps_convergence_study(const Scenario& scenario, const PhysicalParams& params,
                                           const EpsConvergenceOptions& opts) {
  const Domain& domain = scenario.domain;
  const auto height = scenario.height_fn();
  const Grid ref_grid(opts.reference_n, opts.reference_n, domain);
  const GridField h_ref = sample_height(ref_grid, height);
  const auto href = make_height_reference(ref_grid, h_ref, opts.loss_eps, opts.loss_tol);
  const auto pref = make_phase_reference(ref_grid, height, params, opts.loss_eps, opts.loss_tol);

  EpsConvergenceResult out;
  for (double eps : opts.eps_list) {
    EpsConvergenceRow row;
    row.eps = eps;
    row.n = static_cast<int>(std::lround(1.0 / eps));
    try {
      const Grid grid(row.n, row.n, domain);
      const auto mu = grid.uniform_measure();
      const auto sigma = initial_sigma(grid, height, params);
      SolverConfig cfg;
      cfg.eps = eps;
      cfg.tol = opts.solver_tol;
      cfg.max_iters = opts.max_iters;
      cfg.validate();

      auto biased = solve_swsg_dual(mu, sigma, params, cfg, nullptr, domain);
      require(biased.stats, "Sinkhorn");
      row.sinkhorn_iterations = biased.stats.iterations;
      const GridField h_b = height_from_phi(biased.pots.phi, params);

      SaddleState init{h_b, std::vector<double>(mu.size(), 1.0), biased.pots.phi, biased.pots.psi};
      const auto sad = saddle_sinkhorn(mu, sigma, params, cfg, &init, domain, opts.saddle_relaxation);
      require(sad.stats, "saddle Sinkhorn");
      row.saddle_iterations = sad.stats.iterations;

      const GridField h_p = debiased_potential_height(sad.state.u, sad.state.phi, params, eps);
      row.eh_biased = height_error(h_b, grid, href);
      row.eh_saddle = height_error(sad.state.h, grid, href);
      row.eh_potential = height_error(h_p, grid, href);
      row.l2_biased = l2_height_error(h_b, grid, h_ref, ref_grid);
      row.l2_saddle = l2_height_error(sad.state.h, grid, h_ref, ref_grid);

      const auto v_b = velocity_from_gradient(psi_gradient(biased.pots, mu, sigma, eps, domain), params.f);
      row.eu_biased = phase_space_error(sigma, v_b, pref);
      const auto sym = symmetric_sinkhorn(sigma, eps, cfg.tol, cfg.max_iters, {}, domain);
      require(sym.stats, "symmetric Sinkhorn");
      biased.pots.psi_sym = sym.psi_sym;
      const auto v_d = velocity_from_gradient(debiased_gradient(biased.pots, mu, sigma, eps, domain), params.f);
      row.eu_debiased = phase_space_error(sigma, v_d, pref);
    } catch (const Error& e) {
      row.ok = false;
      row.failure = e.what();
    }
    out.rows.push_back(std::move(row));
  }

  std::vector<double> x;
  std::vector<std::vector<double>> ys(5);
  for (const auto& r : out.rows) {
    if (!r.ok) continue;
    x.push_back(r.eps);
    ys[0].push_back(r.eh_biased);
    ys[1].push_back(r.eh_saddle);
    ys[2].push_back(r.eh_potential);
    ys[3].push_back(r.eu_biased);
    ys[4].push_back(r.eu_debiased);
  }
  if (x.size() >= 2) {
    const auto fit = [&](int k) {
      try {
        return loglog_slope(x, ys[k]);
      } catch (const ValidationError&) {
        return std::nan("");
      }
    };
    out.slopes = {fit(0), fit(1), fit(2), fit(3), fit(4)};
  } else {
    const double nan = std::nan("");
    out.slopes = {nan, nan, nan, nan, nan};
  }
  return out;
}

namespace {

struct TimedSnapshots {
  std::vector<Snapshot> snaps;  // one per requested time, in order
  Grid grid;
  FlowModel model;
};

TimedSnapshots run_at_times(const Scenario& scenario, const PhysicalParams& params, double eps, VelocityMode mode,
                            const PseudoconvergenceOptions& opts) {
  const int n = static_cast<int>(std::lround(1.0 / eps));
  TimedSnapshots out{{}, Grid(n, n, scenario.domain), {}};
  out.model.grid_measure = out.grid.uniform_measure();
  out.model.params = params;
  out.model.cfg.eps = eps;
  out.model.cfg.tol = opts.solver_tol;
  out.model.cfg.max_iters = opts.max_iters;
  out.model.mode = mode;
  out.model.domain = scenario.domain;

  std::vector<long> wanted;
  double horizon = 0.0;
  for (double t : opts.times) {
    wanted.push_back(step_count(t, opts.stepper.dt));
    horizon = std::max(horizon, t);
  }
  out.snaps.resize(wanted.size());
  std::vector<bool> seen(wanted.size(), false);

  RunOptions ro;
  ro.horizon = horizon;
  ro.snapshot_every = 1;
  ro.keep_snapshots = false;
  ro.on_snapshot = [&](const Snapshot& s) {
    for (std::size_t k = 0; k < wanted.size(); ++k)
      if (wanted[k] == s.state.step_index) {
        out.snaps[k] = s;
        seen[k] = true;
      }
  };
  const auto res = run(initial_state(out.grid, scenario, params), out.model, opts.stepper, ro);
  if (!res.completed) throw SolverError(res.failure);
  for (bool s : seen)
    if (!s) throw SolverError("requested time was not reached");
  return out;
}

}  // namespace

PseudoconvergenceResult pseudoconvergence_study(const Scenario& scenario, const PhysicalParams& params,
                                                const PseudoconvergenceOptions& opts) {
  opts.stepper.validate();
  PseudoconvergenceResult out;
  for (VelocityMode mode : opts.modes) {
    const std::string mode_name(to_string(mode));
    std::vector<PseudoRow> rows;
    std::string ref_failure;
    std::optional<TimedSnapshots> ref;
    std::vector<GridField> ref_h;
    std::vector<LossReference> ref_loss;
    try {
      ref = run_at_times(scenario, params, opts.reference_eps, mode, opts);
      for (const auto& s : ref->snaps) {
        ref_h.push_back(snapshot_height(s, ref->model));
        ref_loss.push_back(make_height_reference(ref->grid, ref_h.back(), opts.loss_eps, opts.loss_tol));
      }
    } catch (const Error& e) {
      ref_failure = std::string("reference run: ") + e.what();
    }

    for (double eps : opts.eps_list) {
      std::vector<PseudoRow> eps_rows;
      for (double t : opts.times) {
        PseudoRow r;
        r.eps = eps;
        r.n = static_cast<int>(std::lround(1.0 / eps));
        r.t = t;
        r.mode = mode_name;
        eps_rows.push_back(r);
      }
      try {
        if (!ref) throw SolverError(ref_failure);
        const auto run_snaps = run_at_times(scenario, params, eps, mode, opts);
        for (std::size_t k = 0; k < eps_rows.size(); ++k) {
          const auto& s = run_snaps.snaps[k];
          eps_rows[k].e_sigma = cloud_error(s.state.particles, ref->snaps[k].state.particles, opts.loss_eps,
                                            opts.loss_tol, scenario.domain);
          const GridField h = snapshot_height(s, run_snaps.model);
          eps_rows[k].e_h = height_error(h, run_snaps.grid, ref_loss[k]);
          eps_rows[k].e_h_l2 = l2_height_error(h, run_snaps.grid, ref_h[k], ref->grid);
        }
      } catch (const Error& e) {
        for (auto& r : eps_rows) {
          r.ok = false;
          r.failure = e.what();
        }
      }
      rows.insert(rows.end(), eps_rows.begin(), eps_rows.end());
    }

    for (double t : opts.times) {
      std::vector<double> x, ys, yh;
      for (const auto& r : rows)
        if (r.ok && r.t == t) {
          x.push_back(r.eps);
          ys.push_back(r.e_sigma);
          yh.push_back(r.e_h);
        }
      PseudoconvergenceResult::Fit fit{mode_name, t, std::nan(""), std::nan("")};
      try {
        fit.sigma_slope = loglog_slope(x, ys);
      } catch (const ValidationError&) {
      }
      try {
        fit.h_slope = loglog_slope(x, yh);
      } catch (const ValidationError&) {
      }
      out.fits.push_back(fit);
    }
    out.rows.insert(out.rows.end(), rows.begin(), rows.end());
  }
  return out;
}

}  // namespace sgsw

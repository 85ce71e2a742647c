#include "sgsw/saddle.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <string>

#include "sgsw/error.hpp"
#include "sgsw/numerics.hpp"

namespace sgsw {
namespace {

double sup_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double r = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) r = std::max(r, std::abs(a[i] - b[i]));
  return r;
}

double sup_norm(const std::vector<double>& a) {
  double r = 0.0;
  for (double v : a) r = std::max(r, std::abs(v));
  return r;
}

// log_w + pot / eps, evaluated exactly as in the plain Sinkhorn sweep.
std::vector<double> scaled_logs(const std::vector<double>& log_w, const std::vector<double>& pot, double eps) {
  std::vector<double> out(log_w);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += pot[i] / eps;
  return out;
}

std::vector<double> plus(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> out(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

// log B_i = log sum_k mu_k u_k K_ik
std::vector<double> log_self_kernel(const std::vector<double>& log_mu, const std::vector<double>& log_u,
                                    const DiscreteMeasure& grid_measure, double eps, const Domain& domain) {
  std::vector<double> out(grid_measure.size());
  log_kernel_sums(grid_measure.points, plus(log_mu, log_u), grid_measure.points, eps, domain, out);
  return out;
}

void check_state(const SaddleState& s, const DiscreteMeasure& grid_measure, const DiscreteMeasure& sigma) {
  const std::size_t n = grid_measure.size();
  if (s.phi.size() != n || s.u.size() != n || s.h.size() != n || s.psi.size() != sigma.size())
    throw SolverError("saddle state does not match the measure sizes");
}

struct SweepResult {
  std::vector<double> phi, psi, log_u;
};

SweepResult sweep(const std::vector<double>& phi, const std::vector<double>& log_u,
                  const DiscreteMeasure& grid_measure, const DiscreteMeasure& sigma, const PhysicalParams& params,
                  double eps, const Domain& domain, double relaxation) {
  const auto log_mu = log_weights(grid_measure.weights);
  const auto log_sigma = log_weights(sigma.weights);
  const std::size_t n = grid_measure.size();
  SweepResult r;

  r.psi.resize(sigma.size());
  log_kernel_sums(grid_measure.points, scaled_logs(log_mu, phi, eps), sigma.points, eps, domain, r.psi);
  for (double& v : r.psi) v *= -eps;

  std::vector<double> log_a(n);
  log_kernel_sums(sigma.points, scaled_logs(log_sigma, r.psi, eps), grid_measure.points, eps, domain, log_a);
  const double log_coef = std::log(params.g) - std::log(eps) - 2.0 * std::log(params.f);
  std::vector<double> w(n);
  r.phi.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = lambert_w0_from_log(log_coef + log_u[i] + log_a[i]);
    r.phi[i] = eps * log_u[i] - eps * w[i];
  }

  // (g/f^2) u B(u) = eps log u - phi = eps w, solved for the new u in log form.
  const auto log_b = log_self_kernel(log_mu, log_u, grid_measure, eps, domain);
  const double log_gf = std::log(params.g) - 2.0 * std::log(params.f);
  r.log_u.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double target = std::log(eps * w[i]) - log_b[i] - log_gf;
    r.log_u[i] = (1.0 - relaxation) * log_u[i] + relaxation * target;
    if (!std::isfinite(r.log_u[i]))
      throw SolverError("saddle_sinkhorn: u left (0, inf) at grid node " + std::to_string(i));
  }
  return r;
}

GridField height_from_u(const std::vector<double>& log_u, const DiscreteMeasure& grid_measure, double eps,
                        const Domain& domain) {
  const auto log_b = log_self_kernel(log_weights(grid_measure.weights), log_u, grid_measure, eps, domain);
  GridField h(log_u.size());
  for (std::size_t i = 0; i < h.size(); ++i) h[i] = std::exp(log_u[i] + log_b[i]);
  return h;
}

std::vector<double> logs_of(const std::vector<double>& u) {
  std::vector<double> out(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (!(u[i] > 0.0) || !std::isfinite(u[i]))
      throw SolverError("saddle: u must lie in (0, inf), node " + std::to_string(i));
    out[i] = std::log(u[i]);
  }
  return out;
}

std::vector<double> exps_of(const std::vector<double>& lu) {
  std::vector<double> out(lu.size());
  for (std::size_t i = 0; i < lu.size(); ++i) out[i] = std::exp(lu[i]);
  return out;
}

// Dense kernels for the small problems the ascent-descent method is meant for.
struct DenseProblem {
  std::size_t n, m;
  std::vector<double> mu, sigma;
  std::vector<double> cost_xy;  // n x m, already divided by eps
  std::vector<double> k_xx;     // n x n
  double eps, g_over_f2;
  double mass_mu, mass_sigma;

  DenseProblem(const DiscreteMeasure& grid_measure, const DiscreteMeasure& sig, const PhysicalParams& params,
               double eps_, const Domain& domain)
      : n(grid_measure.size()), m(sig.size()), mu(grid_measure.weights), sigma(sig.weights), eps(eps_) {
    g_over_f2 = params.g / (params.f * params.f);
    cost_xy.resize(n * m);
    k_xx.resize(n * n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j)
        cost_xy[i * m + j] = periodic_cost(grid_measure.points[i], sig.points[j], domain) / eps;
      for (std::size_t k = 0; k < n; ++k)
        k_xx[i * n + k] = std::exp(-periodic_cost(grid_measure.points[i], grid_measure.points[k], domain) / eps);
    }
    mass_mu = total_mass(mu);
    mass_sigma = total_mass(sigma);
  }

  // Row sums sum_j sigma_j E_ij and column sums sum_i mu_i E_ij; returns sum_ij mu sigma E.
  double coupling(const std::vector<double>& phi, const std::vector<double>& psi, std::vector<double>& rows,
                  std::vector<double>& cols) const {
    rows.assign(n, 0.0);
    cols.assign(m, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        const double e = std::exp((phi[i] + psi[j]) / eps - cost_xy[i * m + j]);
        rows[i] += sigma[j] * e;
        cols[j] += mu[i] * e;
      }
      total += mu[i] * rows[i];
    }
    return total;
  }

  std::vector<double> self_kernel(const std::vector<double>& u) const {
    std::vector<double> b(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < n; ++k) b[i] += mu[k] * u[k] * k_xx[i * n + k];
    return b;
  }
};

// Preconditioned descent direction in (h, u); zero-mass nodes carry no gradient.
void primal_gradient(const DenseProblem& p, const SaddleState& s, bool sym, std::vector<double>& gh,
                     std::vector<double>& gu) {
  gh.resize(p.n);
  gu.assign(p.n, 0.0);
  const std::vector<double> b = sym ? p.self_kernel(s.u) : std::vector<double>{};
  for (std::size_t i = 0; i < p.n; ++i) {
    const double log_u = sym ? std::log(s.u[i]) : 0.0;
    gh[i] = p.mu[i] > 0.0 ? s.phi[i] - p.eps * log_u + p.g_over_f2 * s.h[i] : 0.0;
    if (sym && p.mu[i] > 0.0) gu[i] = p.eps * (b[i] - s.h[i] / s.u[i]);
  }
}

void dual_gradient(const DenseProblem& p, const SaddleState& s, const std::vector<double>& rows,
                   const std::vector<double>& cols, std::vector<double>& gphi, std::vector<double>& gpsi) {
  gphi.resize(p.n);
  gpsi.resize(p.m);
  for (std::size_t i = 0; i < p.n; ++i) gphi[i] = p.mu[i] > 0.0 ? s.h[i] - rows[i] : 0.0;
  for (std::size_t j = 0; j < p.m; ++j) gpsi[j] = p.sigma[j] > 0.0 ? 1.0 - cols[j] : 0.0;
}

bool all_finite(const SaddleState& s) {
  for (const auto* v : {&s.h, &s.u, &s.phi, &s.psi})
    for (double x : *v)
      if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace

double SaddleResiduals::max() const { return std::max({dpsi, dphi, dh, du}); }

SaddleState saddle_sinkhorn_sweep(const SaddleState& s, const DiscreteMeasure& grid_measure,
                                  const DiscreteMeasure& sigma, const PhysicalParams& params, double eps,
                                  const Domain& domain, double relaxation) {
  const auto r = sweep(s.phi, logs_of(s.u), grid_measure, sigma, params, eps, domain, relaxation);
  SaddleState out;
  out.phi = r.phi;
  out.psi = r.psi;
  out.u = exps_of(r.log_u);
  out.h = height_from_u(r.log_u, grid_measure, eps, domain);
  return out;
}

SaddleSolution saddle_sinkhorn(const DiscreteMeasure& grid_measure, const DiscreteMeasure& sigma,
                               const PhysicalParams& params, const SolverConfig& cfg, const SaddleState* init,
                               const Domain& domain, double relaxation) {
  cfg.validate();
  params.validate();
  if (!(relaxation > 0.0 && relaxation <= 1.0)) throw ValidationError("solver.relaxation", "must lie in (0, 1]");
  const std::size_t n = grid_measure.size();
  std::vector<double> phi(n, 0.0), psi(sigma.size(), 0.0), log_u(n, 0.0);
  if (init && init->phi.size() == n && init->u.size() == n && init->psi.size() == sigma.size()) {
    phi = init->phi;
    psi = init->psi;
    log_u = logs_of(init->u);
  }

  SaddleSolution sol;
  std::vector<double> u = exps_of(log_u);
  for (int k = 0; k < cfg.max_iters; ++k) {
    auto r = sweep(phi, log_u, grid_measure, sigma, params, cfg.eps, domain, relaxation);
    auto u_new = exps_of(r.log_u);
    const double res = std::max({sup_diff(r.phi, phi), sup_diff(r.psi, psi), sup_diff(u_new, u)});
    if (!std::isfinite(res)) throw SolverError("saddle_sinkhorn: iterates became non-finite");
    phi.swap(r.phi);
    psi.swap(r.psi);
    log_u.swap(r.log_u);
    u.swap(u_new);
    sol.stats.record(res);
    if (res < cfg.tol) {
      sol.stats.converged = true;
      break;
    }
  }
  sol.state.h = height_from_u(log_u, grid_measure, cfg.eps, domain);
  sol.state.u = std::move(u);
  sol.state.phi = std::move(phi);
  sol.state.psi = std::move(psi);
  return sol;
}

AscentDescentSolution saddle_ascent_descent(const DiscreteMeasure& grid_measure, const DiscreteMeasure& sigma,
                                            const PhysicalParams& params, const AscentDescentConfig& cfg,
                                            const SaddleState* init, const Domain& domain) {
  params.validate();
  if (!(cfg.eps > 0.0)) throw ValidationError("solver.eps", "must be positive");
  if (!(cfg.tol > 0.0)) throw ValidationError("solver.tol", "must be positive");
  const DenseProblem p(grid_measure, sigma, params, cfg.eps, domain);
  const bool sym = cfg.symmetric_terms;

  SaddleState s;
  if (init) {
    check_state(*init, grid_measure, sigma);
    s = *init;
  } else {
    s.h.assign(p.n, total_mass(sigma) / std::max(p.mass_mu, 1e-300));
    s.u.assign(p.n, 1.0);
    s.phi.assign(p.n, 0.0);
    s.psi.assign(p.m, 0.0);
  }

  AscentDescentSolution sol;
  double t = cfg.step > 0.0 ? cfg.step : 0.5 * cfg.eps;
  constexpr int kWindow = 100;
  constexpr int kStallWindow = 5000;
  constexpr int kMaxHalvings = 40;

  std::vector<double> gh, gu, gphi, gpsi, rows, cols;
  auto full_norm = [&](const SaddleState& st) {
    primal_gradient(p, st, sym, gh, gu);
    p.coupling(st.phi, st.psi, rows, cols);
    dual_gradient(p, st, rows, cols, gphi, gpsi);
    return std::max({sup_norm(gh), sup_norm(gu), sup_norm(gphi), sup_norm(gpsi)});
  };

  double norm = full_norm(s);
  SaddleState best = s;
  double best_norm = norm;
  double stall_ref = norm;
  int since_progress = 0;
  std::deque<double> recent{norm};

  auto restart = [&](const SaddleState& from) {
    if (++sol.step_halvings > kMaxHalvings)
      throw SolverError("saddle_ascent_descent: step halved " + std::to_string(kMaxHalvings) +
                        " times without converging; try a smaller step");
    t *= 0.5;
    s = from;
    norm = full_norm(s);
    recent.assign(1, norm);
    stall_ref = norm;
    since_progress = 0;
  };

  for (int k = 0; k < cfg.max_iters && norm >= cfg.tol; ++k) {
    // Descent in (h, u) with the gradient at the current point.
    for (std::size_t i = 0; i < p.n; ++i) {
      s.h[i] -= t * gh[i];
      if (sym) s.u[i] -= t * gu[i];
    }
    bool diverged = sym && std::any_of(s.u.begin(), s.u.end(), [](double v) { return !(v > 0.0); });
    if (!diverged) {
      // Ascent in (phi, psi) against the updated primal variables.
      dual_gradient(p, s, rows, cols, gphi, gpsi);
      for (std::size_t i = 0; i < p.n; ++i) s.phi[i] += t * gphi[i];
      for (std::size_t j = 0; j < p.m; ++j) s.psi[j] += t * gpsi[j];
      norm = full_norm(s);
      diverged = !std::isfinite(norm) || !all_finite(s);
    }
    recent.push_back(norm);
    if (recent.size() > kWindow + 1) recent.pop_front();
    if (!diverged && recent.size() == kWindow + 1 && norm > 10.0 * recent.front()) diverged = true;
    if (diverged) {
      restart(best);
      continue;
    }

    sol.stats.record(norm);
    if (norm < best_norm) {
      best_norm = norm;
      best = s;
    }
    if (norm < 0.9 * stall_ref) {
      stall_ref = norm;
      since_progress = 0;
    } else if (++since_progress > kStallWindow) {
      restart(best);
    }
  }

  sol.stats.converged = norm < cfg.tol;
  sol.state = std::move(s);
  sol.step = t;
  if (!sym) sol.state.u.assign(p.n, 1.0);
  return sol;
}

double saddle_functional(const SaddleState& s, const DiscreteMeasure& grid_measure, const DiscreteMeasure& sigma,
                         const PhysicalParams& params, double eps, const Domain& domain, bool symmetric_terms) {
  check_state(s, grid_measure, sigma);
  const DenseProblem p(grid_measure, sigma, params, eps, domain);
  std::vector<double> rows, cols;
  double v = 0.0;
  for (std::size_t i = 0; i < p.n; ++i) {
    const double log_u = symmetric_terms ? std::log(s.u[i]) : 0.0;
    v += p.mu[i] * (s.h[i] * s.phi[i] - eps * s.h[i] * log_u + 0.5 * p.g_over_f2 * s.h[i] * s.h[i]);
  }
  if (symmetric_terms) {
    const auto b = p.self_kernel(s.u);
    for (std::size_t i = 0; i < p.n; ++i) v += 0.5 * eps * p.mu[i] * s.u[i] * b[i];
  }
  for (std::size_t j = 0; j < p.m; ++j) v += p.sigma[j] * s.psi[j];
  return v - eps * (p.coupling(s.phi, s.psi, rows, cols) - p.mass_mu * p.mass_sigma);
}

SaddleState saddle_gradient(const SaddleState& s, const DiscreteMeasure& grid_measure, const DiscreteMeasure& sigma,
                            const PhysicalParams& params, double eps, const Domain& domain, bool symmetric_terms) {
  check_state(s, grid_measure, sigma);
  const DenseProblem p(grid_measure, sigma, params, eps, domain);
  SaddleState g;
  std::vector<double> rows, cols;
  primal_gradient(p, s, symmetric_terms, g.h, g.u);
  p.coupling(s.phi, s.psi, rows, cols);
  dual_gradient(p, s, rows, cols, g.phi, g.psi);
  // Undo the zero-mass masking and the L2(mu)/L2(sigma) scaling.
  for (std::size_t i = 0; i < p.n; ++i) {
    g.h[i] *= p.mu[i];
    g.u[i] *= p.mu[i];
    g.phi[i] *= p.mu[i];
  }
  for (std::size_t j = 0; j < p.m; ++j) g.psi[j] *= p.sigma[j];
  return g;
}

SaddleResiduals saddle_residuals(const SaddleState& s, const DiscreteMeasure& grid_measure,
                                 const DiscreteMeasure& sigma, const PhysicalParams& params, double eps,
                                 const Domain& domain) {
  check_state(s, grid_measure, sigma);
  SaddleResiduals r;
  r.dpsi = particle_marginal_residual(s.phi, s.psi, grid_measure, sigma, eps, domain);
  r.dphi = grid_marginal_residual(s.h, s.phi, s.psi, grid_measure, sigma, eps, domain);
  const auto log_u = logs_of(s.u);
  const auto log_b = log_self_kernel(log_weights(grid_measure.weights), log_u, grid_measure, eps, domain);
  const double k = params.g / (params.f * params.f);
  for (std::size_t i = 0; i < s.h.size(); ++i) {
    r.dh = std::max(r.dh, std::abs(eps * log_u[i] - s.phi[i] - k * s.h[i]));
    r.du = std::max(r.du, std::abs(s.h[i] - std::exp(log_u[i] + log_b[i])));
  }
  return r;
}

}  // namespace sgsw

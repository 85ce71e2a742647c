#include "sgsw/entropic_ot.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sgsw/detail/sinkhorn.hpp"
#include "sgsw/error.hpp"
#include "sgsw/numerics.hpp"

namespace sgsw {
namespace {

double sup_diff(std::span<const double> a, std::span<const double> b) {
  double r = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) r = std::max(r, std::abs(a[i] - b[i]));
  return r;
}

// log(e^{pot/eps} * weight) per point.
std::vector<double> scaled_logs(std::span<const double> pot, std::span<const double> weights, double eps) {
  std::vector<double> out(weights.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = (weights[i] > 0.0 ? std::log(weights[i]) : kNegInf) + (pot.empty() ? 0.0 : pot[i] / eps);
  return out;
}

void check_sizes(const DualPotentials& p, const DiscreteMeasure& grid, const DiscreteMeasure& sigma) {
  if (p.phi.size() != grid.size()) throw SolverError("potentials: phi does not match the grid size");
  if (p.psi.size() != sigma.size()) throw SolverError("potentials: psi does not match the particle count");
}

// Weighted mean of nearest-image offsets from `at` to `points`, with log weights.
template <class LogWeight>
Point2 conditional_mean(Point2 at, std::span<const Point2> points, const LogWeight& logw, const Domain& domain,
                        std::vector<double>& scratch, std::size_t particle) {
  double m = kNegInf;
  for (std::size_t i = 0; i < points.size(); ++i) {
    scratch[i] = logw(i);
    m = std::max(m, scratch[i]);
  }
  if (m == kNegInf || !std::isfinite(m))
    throw SolverError("barycentric map: coupling row of particle " + std::to_string(particle) + " is empty");
  double s = 0.0, d1 = 0.0, d2 = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double w = std::exp(scratch[i] - m);
    const Point2 d = periodic_displacement(at, points[i], domain);
    s += w;
    d1 += w * d.x1;
    d2 += w * d.x2;
  }
  return {at.x1 + d1 / s, at.x2 + d2 / s};
}

}  // namespace

void PhysicalParams::validate() const {
  if (!(f > 0.0) || !std::isfinite(f)) throw ValidationError("physics.f", "must be positive");
  if (!(g > 0.0) || !std::isfinite(g)) throw ValidationError("physics.g", "must be positive");
}

void SolverConfig::validate() const {
  if (!(eps > 0.0) || !std::isfinite(eps)) throw ValidationError("solver.eps", "must be positive");
  if (!(tol > 0.0)) throw ValidationError("solver.tol", "must be positive");
  if (max_iters < 1) throw ValidationError("solver.max_iters", "must be >= 1");
}

DualPotentials swsg_sinkhorn_step(const DualPotentials& pots, const DiscreteMeasure& grid_measure,
                                  const DiscreteMeasure& sigma, const PhysicalParams& params,
                                  const SolverConfig& cfg, const Domain& domain, long* large_lambert_arguments) {
  check_sizes(pots, grid_measure, sigma);
  const double eps = cfg.eps;
  DualPotentials next = pots;

  // psi(Y) = -eps log sum_i mu_i e^{(phi_i - c(X_i, Y))/eps}
  log_kernel_sums(grid_measure.points, scaled_logs(pots.phi, grid_measure.weights, eps), sigma.points, eps, domain,
                  next.psi);
  for (double& v : next.psi) v *= -eps;

  // phi(X) = -eps W0( g/(eps f^2) sum_j sigma_j e^{(psi_j - c(X, Y_j))/eps} )
  std::vector<double> log_a(grid_measure.size());
  log_kernel_sums(sigma.points, scaled_logs(next.psi, sigma.weights, eps), grid_measure.points, eps, domain, log_a);
  const double log_coef = std::log(params.g) - std::log(eps) - 2.0 * std::log(params.f);
  long large = 0;
  for (std::size_t i = 0; i < log_a.size(); ++i) {
    const double log_arg = log_coef + log_a[i];
    if (log_arg > 700.0) ++large;
    next.phi[i] = -eps * lambert_w0_from_log(log_arg);
  }
  if (large_lambert_arguments) *large_lambert_arguments += large;
  return next;
}

DualSolution solve_swsg_dual(const DiscreteMeasure& grid_measure, const DiscreteMeasure& sigma,
                             const PhysicalParams& params, const SolverConfig& cfg, const DualPotentials* init,
                             const Domain& domain) {
  cfg.validate();
  params.validate();
  if (grid_measure.empty() || sigma.empty()) throw SolverError("solve_swsg_dual: empty measure");

  DualSolution sol;
  if (init && init->phi.size() == grid_measure.size() && init->psi.size() == sigma.size()) {
    sol.pots.phi = init->phi;
    sol.pots.psi = init->psi;
  } else {
    sol.pots.phi.assign(grid_measure.size(), 0.0);
    sol.pots.psi.assign(sigma.size(), 0.0);
  }
  for (int k = 0; k < cfg.max_iters; ++k) {
    DualPotentials next =
        swsg_sinkhorn_step(sol.pots, grid_measure, sigma, params, cfg, domain, &sol.stats.large_lambert_arguments);
    const double r = std::max(sup_diff(next.phi, sol.pots.phi), sup_diff(next.psi, sol.pots.psi));
    if (!std::isfinite(r)) throw SolverError("solve_swsg_dual: potentials became non-finite");
    sol.pots.phi.swap(next.phi);
    sol.pots.psi.swap(next.psi);
    sol.stats.record(r);
    if (r < cfg.tol) {
      sol.stats.converged = true;
      break;
    }
  }
  return sol;
}

GridField height_from_phi(std::span<const double> phi, const PhysicalParams& params) {
  GridField h(phi.size());
  const double k = params.height_factor();
  for (std::size_t i = 0; i < h.size(); ++i) h[i] = -k * phi[i];
  return h;
}

SymmetricSolution symmetric_sinkhorn(const DiscreteMeasure& sigma, double eps, double tol, int max_iters,
                                     std::span<const double> init, const Domain& domain) {
  if (sigma.empty()) throw SolverError("symmetric_sinkhorn: empty measure");
  if (!(eps > 0.0)) throw ValidationError("solver.eps", "must be positive");
  const auto cost = [&](std::size_t i, std::size_t j) { return periodic_cost(sigma.points[i], sigma.points[j], domain); };
  auto res = detail::symmetric_sinkhorn(sigma.weights, cost, eps, tol, max_iters, init);
  return {std::move(res.potential), std::move(res.stats)};
}

double ot_eps_value(const DiscreteMeasure& mu_a, const DiscreteMeasure& mu_b, double eps, double tol,
                    const Domain& domain, int max_iters) {
  const auto cost = [&](std::size_t i, std::size_t j) { return periodic_cost(mu_a.points[i], mu_b.points[j], domain); };
  return detail::ot_eps_value(mu_a.weights, mu_b.weights, cost, eps, tol, max_iters);
}

double ot_eps_self_value(const DiscreteMeasure& mu, double eps, double tol, const Domain& domain, int max_iters) {
  const auto cost = [&](std::size_t i, std::size_t j) { return periodic_cost(mu.points[i], mu.points[j], domain); };
  return detail::ot_eps_self_value(mu.weights, cost, eps, tol, max_iters);
}

double sinkhorn_divergence(const DiscreteMeasure& mu_a, const DiscreteMeasure& mu_b, double eps, double tol,
                           const Domain& domain, int max_iters) {
  const double ab = ot_eps_value(mu_a, mu_b, eps, tol, domain, max_iters);
  const double aa = ot_eps_self_value(mu_a, eps, tol, domain, max_iters);
  const double bb = ot_eps_self_value(mu_b, eps, tol, domain, max_iters);
  return ab - 0.5 * aa - 0.5 * bb;
}

std::vector<Point2> barycentric_map(std::span<const double> phi, const DiscreteMeasure& grid_measure,
                                    const DiscreteMeasure& sigma, double eps, const Domain& domain) {
  if (phi.size() != grid_measure.size()) throw SolverError("barycentric_map: phi does not match the grid size");
  const auto logs = scaled_logs(phi, grid_measure.weights, eps);
  std::vector<Point2> out(sigma.size());
  parallel_for(sigma.size(), [&](std::size_t begin, std::size_t end) {
    std::vector<double> scratch(grid_measure.size());
    for (std::size_t j = begin; j < end; ++j) {
      const Point2 y = sigma.points[j];
      out[j] = conditional_mean(
          y, grid_measure.points,
          [&](std::size_t i) { return logs[i] - periodic_cost(grid_measure.points[i], y, domain) / eps; }, domain,
          scratch, j);
    }
  });
  return out;
}

std::vector<Point2> symmetric_barycentric_map(std::span<const double> psi_sym, const DiscreteMeasure& sigma,
                                              double eps, const Domain& domain) {
  if (psi_sym.size() != sigma.size()) throw SolverError("symmetric_barycentric_map: psi_sym size mismatch");
  const auto logs = scaled_logs(psi_sym, sigma.weights, eps);
  std::vector<Point2> out(sigma.size());
  parallel_for(sigma.size(), [&](std::size_t begin, std::size_t end) {
    std::vector<double> scratch(sigma.size());
    for (std::size_t j = begin; j < end; ++j) {
      const Point2 y = sigma.points[j];
      out[j] = conditional_mean(
          y, sigma.points, [&](std::size_t i) { return logs[i] - periodic_cost(sigma.points[i], y, domain) / eps; },
          domain, scratch, j);
    }
  });
  return out;
}

std::vector<Point2> psi_gradient(const DualPotentials& pots, const DiscreteMeasure& grid_measure,
                                 const DiscreteMeasure& sigma, double eps, const Domain& domain) {
  auto b = barycentric_map(pots.phi, grid_measure, sigma, eps, domain);
  for (std::size_t j = 0; j < b.size(); ++j) b[j] = sigma.points[j] - b[j];
  return b;
}

std::vector<Point2> debiased_gradient(const DualPotentials& pots, const DiscreteMeasure& grid_measure,
                                      const DiscreteMeasure& sigma, double eps, const Domain& domain) {
  if (!pots.has_psi_sym()) throw SolverError("debiased_gradient: symmetric potential missing");
  const auto b = barycentric_map(pots.phi, grid_measure, sigma, eps, domain);
  auto bs = symmetric_barycentric_map(pots.psi_sym, sigma, eps, domain);
  for (std::size_t j = 0; j < bs.size(); ++j) bs[j] = bs[j] - b[j];
  return bs;
}

double coupling_mass(std::span<const double> phi, std::span<const double> psi, const DiscreteMeasure& grid_measure,
                     const DiscreteMeasure& sigma, double eps, const Domain& domain) {
  std::vector<double> col(sigma.size());
  log_kernel_sums(grid_measure.points, scaled_logs(phi, grid_measure.weights, eps), sigma.points, eps, domain, col);
  double s = 0.0;
  for (std::size_t j = 0; j < col.size(); ++j)
    if (sigma.weights[j] > 0.0) s += sigma.weights[j] * std::exp(psi[j] / eps + col[j]);
  return s;
}

double swsg_dual_value(const DualPotentials& pots, const DiscreteMeasure& grid_measure, const DiscreteMeasure& sigma,
                       const PhysicalParams& params, double eps, const Domain& domain) {
  check_sizes(pots, grid_measure, sigma);
  double v = 0.0;
  for (std::size_t j = 0; j < sigma.size(); ++j) v += sigma.weights[j] * pots.psi[j];
  const double k = params.height_factor() / 2.0;
  for (std::size_t i = 0; i < grid_measure.size(); ++i) v -= k * grid_measure.weights[i] * pots.phi[i] * pots.phi[i];
  const double mass = total_mass(grid_measure) * total_mass(sigma);
  return v - eps * (coupling_mass(pots.phi, pots.psi, grid_measure, sigma, eps, domain) - mass);
}

double coupled_transport_value(const DualPotentials& pots, const DiscreteMeasure& grid_measure,
                               const DiscreteMeasure& sigma, const PhysicalParams& params, double eps,
                               const Domain& domain) {
  check_sizes(pots, grid_measure, sigma);
  double v = 0.0;
  for (std::size_t j = 0; j < sigma.size(); ++j) v += sigma.weights[j] * pots.psi[j];
  const double k = params.height_factor();
  for (std::size_t i = 0; i < grid_measure.size(); ++i) v -= k * grid_measure.weights[i] * pots.phi[i] * pots.phi[i];
  const double mass = total_mass(grid_measure) * total_mass(sigma);
  return v - eps * (coupling_mass(pots.phi, pots.psi, grid_measure, sigma, eps, domain) - mass);
}

double particle_marginal_residual(std::span<const double> phi, std::span<const double> psi,
                                  const DiscreteMeasure& grid_measure, const DiscreteMeasure& sigma, double eps,
                                  const Domain& domain) {
  std::vector<double> col(sigma.size());
  log_kernel_sums(grid_measure.points, scaled_logs(phi, grid_measure.weights, eps), sigma.points, eps, domain, col);
  double r = 0.0;
  for (std::size_t j = 0; j < col.size(); ++j) r = std::max(r, std::abs(1.0 - std::exp(psi[j] / eps + col[j])));
  return r;
}

double grid_marginal_residual(std::span<const double> h, std::span<const double> phi, std::span<const double> psi,
                              const DiscreteMeasure& grid_measure, const DiscreteMeasure& sigma, double eps,
                              const Domain& domain) {
  std::vector<double> row(grid_measure.size());
  log_kernel_sums(sigma.points, scaled_logs(psi, sigma.weights, eps), grid_measure.points, eps, domain, row);
  double r = 0.0;
  for (std::size_t i = 0; i < row.size(); ++i) r = std::max(r, std::abs(h[i] - std::exp(phi[i] / eps + row[i])));
  return r;
}

double symmetric_residual(std::span<const double> psi_sym, const DiscreteMeasure& sigma, double eps,
                          const Domain& domain) {
  std::vector<double> t(sigma.size());
  log_kernel_sums(sigma.points, scaled_logs(psi_sym, sigma.weights, eps), sigma.points, eps, domain, t);
  double r = 0.0;
  for (std::size_t j = 0; j < t.size(); ++j) r = std::max(r, std::abs(-eps * t[j] - psi_sym[j]));
  return r;
}

}  // namespace sgsw

#pragma once

#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "sgsw/measures.hpp"

namespace sgsw {

/// Nondimensional rotation and gravity constants.
struct PhysicalParams {
  double f = 1.0;
  double g = 0.1;

  void validate() const;
  /// Displacement of a particle per unit height gradient under the squared
  /// distance cost: Y = X + hoskins_scale() * grad h. The Kantorovich pair for
  /// c = |X - Y|^2 moves X by -grad(phi)/2, and h = -(f^2/g) phi.
  double hoskins_scale() const { return g / (2.0 * f * f); }
  /// h = -height_factor() * phi.
  double height_factor() const { return f * f / g; }
};

struct SolverConfig {
  double eps = 0.03;
  double tol = 1e-11;
  int max_iters = 20000;
  bool warm_start = true;

  void validate() const;
};

/// Heights on the grid nodes, in flat grid order.
using GridField = std::vector<double>;

/// Per-point potentials. `phi` and `u` live on the grid, `psi` and `psi_sym`
/// on the particles. Empty `psi_sym` / `u` mean "not computed".
struct DualPotentials {
  std::vector<double> phi;
  std::vector<double> psi;
  std::vector<double> psi_sym;
  std::vector<double> u;

  bool has_psi_sym() const { return !psi_sym.empty(); }
  bool has_u() const { return !u.empty(); }
};

struct SolveStats {
  int iterations = 0;
  double final_residual = std::numeric_limits<double>::infinity();
  std::vector<double> residual_history;
  bool converged = false;
  /// Lambert evaluations whose argument exceeded exp(700) and were solved in
  /// log form. Nonzero means eps is small relative to the potentials.
  long large_lambert_arguments = 0;

  void record(double residual) {
    residual_history.push_back(residual);
    final_residual = residual;
    ++iterations;
  }
};

struct DualSolution {
  DualPotentials pots;
  SolveStats stats;
};

struct SymmetricSolution {
  std::vector<double> psi_sym;
  SolveStats stats;
};

/// One Sinkhorn sweep of the height-coupled dual: a log update of psi on the
/// particles followed by the Lambert W0 update of phi on the grid.
DualPotentials swsg_sinkhorn_step(const DualPotentials& pots, const DiscreteMeasure& grid_measure,
                                  const DiscreteMeasure& sigma, const PhysicalParams& params,
                                  const SolverConfig& cfg, const Domain& domain = {},
                                  long* large_lambert_arguments = nullptr);

/// Iterates swsg_sinkhorn_step until max(|dphi|_inf, |dpsi|_inf) < tol or
/// max_iters. Starts from `init` when given (warm start), else phi = psi = 0.
DualSolution solve_swsg_dual(const DiscreteMeasure& grid_measure, const DiscreteMeasure& sigma,
                             const PhysicalParams& params, const SolverConfig& cfg,
                             const DualPotentials* init = nullptr, const Domain& domain = {});

GridField height_from_phi(std::span<const double> phi, const PhysicalParams& params);

/// Self-transport potential of sigma, iterated with half-step averaging.
/// Stops once the fixed-point residual |T(psi) - psi|_inf drops below tol and
/// returns that psi (not the averaged update).
SymmetricSolution symmetric_sinkhorn(const DiscreteMeasure& sigma, double eps, double tol, int max_iters,
                                     std::span<const double> init = {}, const Domain& domain = {});

/// Entropic transport cost between two measures of equal mass, KL relative to
/// mu_a (x) mu_b, evaluated as the dual objective at the Sinkhorn fixed point.
/// Throws ValidationError when the masses differ by more than 1e-12 (relative).
double ot_eps_value(const DiscreteMeasure& mu_a, const DiscreteMeasure& mu_b, double eps, double tol,
                    const Domain& domain = {}, int max_iters = 100000);

/// OT_eps(a, a) through the symmetric iteration.
double ot_eps_self_value(const DiscreteMeasure& mu, double eps, double tol, const Domain& domain = {},
                         int max_iters = 100000);

/// S_eps(a, b) = OT_eps(a, b) - OT_eps(a, a)/2 - OT_eps(b, b)/2.
double sinkhorn_divergence(const DiscreteMeasure& mu_a, const DiscreteMeasure& mu_b, double eps, double tol,
                           const Domain& domain = {}, int max_iters = 100000);

/// Conditional mean of the grid under the entropic coupling, one per particle.
/// Grid nodes enter at their x1 image nearest to the particle.
/// Throws SolverError naming the particle if its coupling row is empty.
std::vector<Point2> barycentric_map(std::span<const double> phi, const DiscreteMeasure& grid_measure,
                                    const DiscreteMeasure& sigma, double eps, const Domain& domain = {});

/// Conditional mean of sigma under its own symmetric entropic coupling.
std::vector<Point2> symmetric_barycentric_map(std::span<const double> psi_sym, const DiscreteMeasure& sigma,
                                              double eps, const Domain& domain = {});

/// grad psi(Y_j) = Y_j - b_j, with b from barycentric_map.
std::vector<Point2> psi_gradient(const DualPotentials& pots, const DiscreteMeasure& grid_measure,
                                 const DiscreteMeasure& sigma, double eps, const Domain& domain = {});

/// grad(psi - psi_sym)(Y_j) = b^S_j - b_j. Requires psi_sym.
std::vector<Point2> debiased_gradient(const DualPotentials& pots, const DiscreteMeasure& grid_measure,
                                      const DiscreteMeasure& sigma, double eps, const Domain& domain = {});

/// Objective of the height-coupled regularised dual:
/// sum sigma psi - f^2/(2g) sum mu phi^2 - eps sum mu sigma (e^{(phi+psi-c)/eps} - 1).
double swsg_dual_value(const DualPotentials& pots, const DiscreteMeasure& grid_measure,
                       const DiscreteMeasure& sigma, const PhysicalParams& params, double eps,
                       const Domain& domain = {});

/// Dual objective of OT_eps(h mu, sigma) at the given potentials, with h taken
/// from phi and the entropy measured against mu (x) sigma.
double coupled_transport_value(const DualPotentials& pots, const DiscreteMeasure& grid_measure,
                               const DiscreteMeasure& sigma, const PhysicalParams& params, double eps,
                               const Domain& domain = {});

/// sum_ij mu_i sigma_j e^{(phi_i + psi_j - c_ij)/eps}
double coupling_mass(std::span<const double> phi, std::span<const double> psi, const DiscreteMeasure& grid_measure,
                     const DiscreteMeasure& sigma, double eps, const Domain& domain = {});

/// max_j |1 - sum_i mu_i e^{(phi_i + psi_j - c_ij)/eps}|
double particle_marginal_residual(std::span<const double> phi, std::span<const double> psi,
                                  const DiscreteMeasure& grid_measure, const DiscreteMeasure& sigma, double eps,
                                  const Domain& domain = {});

/// max_i |h_i - sum_j sigma_j e^{(phi_i + psi_j - c_ij)/eps}|
double grid_marginal_residual(std::span<const double> h, std::span<const double> phi, std::span<const double> psi,
                              const DiscreteMeasure& grid_measure, const DiscreteMeasure& sigma, double eps,
                              const Domain& domain = {});

/// Self-consistency residual of the symmetric potential, |T(psi) - psi|_inf.
double symmetric_residual(std::span<const double> psi_sym, const DiscreteMeasure& sigma, double eps,
                          const Domain& domain = {});

}  // namespace sgsw

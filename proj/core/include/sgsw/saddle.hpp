#pragma once

#include <vector>

#include "sgsw/entropic_ot.hpp"

namespace sgsw {

// Debiased height problem written as a saddle point in (h, u) x (phi, psi):
//
//   F = sum_i mu_i [h_i phi_i - eps h_i log u_i + g/(2 f^2) h_i^2]
//     + eps/2 sum_ik mu_i mu_k u_i u_k K_ik
//     + sum_j sigma_j psi_j - eps sum_ij mu_i sigma_j (e^{(phi_i + psi_j - c_ij)/eps} - 1)
//
// with K_ik = e^{-c(X_i, X_k)/eps}. Minimised in (h, u), maximised in
// (phi, psi). Dropping the u terms ("symmetric terms deleted") leaves the
// Lagrangian of the biased height-coupled dual.

struct SaddleState {
  GridField h;
  std::vector<double> u;
  std::vector<double> phi;
  std::vector<double> psi;
};

/// Sup-norm residuals of the four optimality conditions:
///   dpsi: 1   = sum_i mu_i e^{(phi_i + psi_j - c_ij)/eps}
///   dphi: h_i = sum_j sigma_j e^{(phi_i + psi_j - c_ij)/eps}
///   dh:   eps log u_i = phi_i + (g/f^2) h_i
///   du:   h_i = u_i sum_k mu_k u_k K_ik
struct SaddleResiduals {
  double dpsi = 0.0;
  double dphi = 0.0;
  double dh = 0.0;
  double du = 0.0;

  double max() const;
};

struct SaddleSolution {
  SaddleState state;
  SolveStats stats;
};

/// One sweep: psi log-update, phi Lambert update with u inside the argument,
/// then the u update (relaxed in log u by `relaxation`, 1 = undamped).
/// The returned h is u * sum_k mu_k u_k K_ik.
/// Throws SolverError if u leaves (0, inf).
SaddleState saddle_sinkhorn_sweep(const SaddleState& s, const DiscreteMeasure& grid_measure,
                                  const DiscreteMeasure& sigma, const PhysicalParams& params, double eps,
                                  const Domain& domain = {}, double relaxation = 0.5);

/// Iterates saddle_sinkhorn_sweep until the sup-norm increment of phi, psi and
/// u falls below cfg.tol. Cold start is phi = psi = 0, u = 1.
SaddleSolution saddle_sinkhorn(const DiscreteMeasure& grid_measure, const DiscreteMeasure& sigma,
                               const PhysicalParams& params, const SolverConfig& cfg,
                               const SaddleState* init = nullptr, const Domain& domain = {},
                               double relaxation = 0.5);

struct AscentDescentConfig {
  double eps = 0.03;
  /// Initial step; <= 0 selects 0.5 * eps.
  double step = 0.0;
  double tol = 1e-10;
  int max_iters = 500000;
  /// false drops u and the self-interaction term from F.
  bool symmetric_terms = true;
};

struct AscentDescentSolution {
  SaddleState state;
  SolveStats stats;
  double step = 0.0;
  int step_halvings = 0;
};

/// Alternating gradient descent in (h, u) and ascent in (phi, psi), with the
/// gradients taken in L2(mu) / L2(sigma). Stops when the sup-norm of that
/// gradient is below tol. The step halves (from the best state seen) when the
/// gradient grows 10x over 100 iterations, turns non-finite, u leaves
/// (0, inf), or progress stalls.
AscentDescentSolution saddle_ascent_descent(const DiscreteMeasure& grid_measure, const DiscreteMeasure& sigma,
                                            const PhysicalParams& params, const AscentDescentConfig& cfg,
                                            const SaddleState* init = nullptr, const Domain& domain = {});

double saddle_functional(const SaddleState& s, const DiscreteMeasure& grid_measure, const DiscreteMeasure& sigma,
                         const PhysicalParams& params, double eps, const Domain& domain = {},
                         bool symmetric_terms = true);

/// Plain partial derivatives of saddle_functional (no preconditioning).
SaddleState saddle_gradient(const SaddleState& s, const DiscreteMeasure& grid_measure,
                            const DiscreteMeasure& sigma, const PhysicalParams& params, double eps,
                            const Domain& domain = {}, bool symmetric_terms = true);

SaddleResiduals saddle_residuals(const SaddleState& s, const DiscreteMeasure& grid_measure,
                                 const DiscreteMeasure& sigma, const PhysicalParams& params, double eps,
                                 const Domain& domain = {});

}  // namespace sgsw

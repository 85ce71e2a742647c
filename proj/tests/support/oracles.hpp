#pragma once

// Independent reference computations for the solvers. Nothing here calls the
// library's Sinkhorn, Lambert or log-sum-exp code.

#include <vector>

#include <sgsw/entropic_ot.hpp>
#include <sgsw/measures.hpp>

namespace oracle {

/// W0 by bisection in long double.
double lambert_w0(double z);

/// Objective of the height-coupled entropic dual, dense kernels.
double dual_value(const std::vector<double>& phi, const std::vector<double>& psi, const sgsw::DiscreteMeasure& mu,
                  const sgsw::DiscreteMeasure& sigma, const sgsw::PhysicalParams& params, double eps,
                  const sgsw::Domain& domain = {});

struct DualMaximizer {
  std::vector<double> phi;
  std::vector<double> psi;
  double grad_norm = 0.0;
  int ascent_iterations = 0;
  int newton_iterations = 0;
};

/// Maximises the dual by gradient ascent with Armijo backtracking, then
/// polishes with Newton steps on the dense Hessian.
DualMaximizer dense_dual_ascent(const sgsw::DiscreteMeasure& mu, const sgsw::DiscreteMeasure& sigma,
                                const sgsw::PhysicalParams& params, double eps, const sgsw::Domain& domain = {});

struct Bounds {
  double upper = 0.0;
  double lower = 0.0;
};

/// Optimal value of the unregularised problem
///   min sum pi c + g/(2 f^2) sum_i (sum_j pi_ij)^2 / mu_i,  columns of pi summing to sigma,
/// bracketed by Frank-Wolfe (primal value above, primal minus duality gap below).
Bounds unregularized_value(const sgsw::DiscreteMeasure& mu, const sgsw::DiscreteMeasure& sigma,
                           const sgsw::PhysicalParams& params, const sgsw::Domain& domain = {},
                           int max_iters = 200000);

/// Dense two-marginal entropic OT dual value, solved by Newton on the dense
/// dual (gauge fixed by psi_0 = 0).
double dense_ot_eps(const sgsw::DiscreteMeasure& a, const sgsw::DiscreteMeasure& b, double eps,
                    const sgsw::Domain& domain = {});

}  // namespace oracle

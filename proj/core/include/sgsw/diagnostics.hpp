#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sgsw/dynamics.hpp"
#include "sgsw/entropic_ot.hpp"
#include "sgsw/scenarios.hpp"

namespace sgsw {

struct EnergyReport {
  double t = 0.0;
  double kinetic = 0.0;
  double potential = 0.0;
  double total = 0.0;
  double normalized_error = 0.0;
  /// eps * sum mu sigma (e^{(phi + psi - c)/eps} - 1); zero at exact convergence.
  double entropy_term = 0.0;
};

/// (g/2) hbar^2 with hbar the mean height carried by sigma over the grid.
double uniform_energy_floor(const DiscreteMeasure& sigma, const DiscreteMeasure& grid_measure,
                            const PhysicalParams& params);

/// Energies of a snapshot whose potentials are converged at its positions.
/// Kinetic is f^2 OT_eps(h mu, sigma) in biased mode and f^2 S_eps(h mu, sigma)
/// otherwise, with h = -(f^2/g) phi, or the saddle height in saddle mode.
/// Potential is (g/2) sum mu h^2. With a baseline, normalized_error is
/// (E - E_0) / (E_0 - floor).
EnergyReport energy_report(const Snapshot& snap, const FlowModel& model, const EnergyReport* baseline = nullptr,
                           double uniform_floor = 0.0);

/// OT_eps(sigma, sigma) from a converged symmetric potential.
double symmetric_ot_value(std::span<const double> psi_sym, const DiscreteMeasure& sigma, double eps,
                          const Domain& domain = {});

/// |U - U_g|_2 / |U_g|_2 at the middle snapshot, weighted by the particle
/// weights. U is the central difference of the reconstructed physical
/// positions (x1 differenced through the nearest image); U_g is the snapshot
/// velocity. Throws ValidationError if the triple is not consecutive in time
/// or the particle counts differ.
double ageostrophic_ratio(const Snapshot& prev, const Snapshot& cur, const Snapshot& next, const FlowModel& model);

/// Weighted measure normalised to unit mass. Negative weights are clamped to
/// zero with a warning.
DiscreteMeasure normalized_measure(std::vector<Point2> points, std::vector<double> weights, const std::string& what);

/// A reference measure with its self transport value cached.
struct LossReference {
  DiscreteMeasure measure;
  double self_value = 0.0;
  double loss_eps = 0.01;
  double tol = 1e-9;
};

LossReference make_height_reference(const Grid& grid, const GridField& h, double loss_eps = 0.01, double tol = 1e-9);

/// sqrt(S_loss_eps) between the grid height measure and the reference, both
/// normalised to unit mass. Negative heights are clamped with a warning.
double height_error(const GridField& h, const Grid& grid, const LossReference& ref);

/// Bilinear interpolation of a cell-centred grid field (periodic in x1,
/// clamped to the outermost nodes in x2).
double bilinear_sample(const GridField& field, const Grid& grid, Point2 p);

/// sqrt(mean (h - I h_ref)^2) with I the bilinear restriction of the fine field.
double l2_height_error(const GridField& h, const Grid& grid, const GridField& h_ref, const Grid& ref_grid);

struct PhasePoint {
  Point2 y;
  Point2 v;
};

/// Periodic squared distance on positions plus Euclidean on velocities.
double phase_cost(const PhasePoint& a, const PhasePoint& b, const Domain& domain);

struct PhaseCloud {
  std::vector<PhasePoint> points;
  std::vector<double> weights;
};

struct PhaseReference {
  PhaseCloud cloud;
  double self_value = 0.0;
  double loss_eps = 0.01;
  double tol = 1e-9;
  Domain domain;
};

/// Fine reference (Y, U) = (X + k grad h, f k J grad h) on `grid`, weights h,
/// with k the Hoskins scale.
PhaseReference make_phase_reference(const Grid& grid, const HeightFn& height, const PhysicalParams& params,
                                    double loss_eps = 0.01, double tol = 1e-9);

/// sqrt of the 4D Sinkhorn divergence between (Y_j, U_j) with weights and the reference.
double phase_space_error(const DiscreteMeasure& particles, const std::vector<Point2>& velocity,
                         const PhaseReference& ref);

/// sqrt(S_loss_eps) between two particle clouds (both normalised to unit mass).
double cloud_error(const DiscreteMeasure& a, const DiscreteMeasure& b, double loss_eps = 0.01, double tol = 1e-9,
                   const Domain& domain = {});

/// Debiased height in potential form, (f^2/g)(phi_S - phi), with
/// phi_S = eps log u the symmetric potential of (h mu) written against mu and
/// (u, phi) from the saddle solve. Equals the saddle height up to the
/// residual of the eps log u = phi + (g/f^2) h condition.
GridField debiased_potential_height(std::span<const double> u, std::span<const double> phi,
                                    const PhysicalParams& params, double eps);

/// Height reported for a snapshot: -(f^2/g) phi in biased mode, the saddle
/// height otherwise (solved at the snapshot positions in debiased mode).
GridField snapshot_height(const Snapshot& snap, const FlowModel& model);

/// Least-squares slope of log y against log x.
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

struct EpsConvergenceRow {
  double eps = 0.0;
  int n = 0;  // grid is n x n, N = n^2 particles
  double eh_biased = 0.0;
  double eh_saddle = 0.0;
  double eh_potential = 0.0;
  double l2_biased = 0.0;
  double l2_saddle = 0.0;
  double eu_biased = 0.0;
  double eu_debiased = 0.0;
  int sinkhorn_iterations = 0;
  int saddle_iterations = 0;
  bool ok = true;
  std::string failure;
};

struct EpsConvergenceOptions {
  std::vector<double> eps_list{0.08, 0.04, 0.02};
  int reference_n = 64;
  double loss_eps = 0.01;
  double loss_tol = 1e-9;
  double solver_tol = 1e-11;
  int max_iters = 100000;
  double saddle_relaxation = 0.5;
};

struct Slopes {
  double eh_biased = 0.0;
  double eh_saddle = 0.0;
  double eh_potential = 0.0;
  double eu_biased = 0.0;
  double eu_debiased = 0.0;
};

struct EpsConvergenceResult {
  std::vector<EpsConvergenceRow> rows;
  Slopes slopes;
};

/// t = 0 accuracy against the analytic initial data, one row per eps with an
/// n x n grid, n = round(1/eps).
EpsConvergenceResult eps_convergence_study(const Scenario& scenario, const PhysicalParams& params,
                                           const EpsConvergenceOptions& opts);

struct PseudoRow {
  double eps = 0.0;
  int n = 0;
  double t = 0.0;
  std::string mode;
  double e_sigma = 0.0;
  double e_h = 0.0;
  double e_h_l2 = 0.0;
  bool ok = true;
  std::string failure;
};

struct PseudoconvergenceOptions {
  std::vector<double> eps_list{0.1, 0.07, 0.05};
  double reference_eps = 0.035;
  std::vector<double> times{0.0, 1.0};
  Stepper stepper{StepperKind::heun, 0.1};
  std::vector<VelocityMode> modes{VelocityMode::biased, VelocityMode::debiased};
  double loss_eps = 0.01;
  double loss_tol = 1e-9;
  double solver_tol = 1e-10;
  int max_iters = 100000;
};

struct PseudoconvergenceResult {
  std::vector<PseudoRow> rows;
  /// Per (mode, t): slope of E^sigma and E^h over eps.
  struct Fit {
    std::string mode;
    double t = 0.0;
    double sigma_slope = 0.0;
    double h_slope = 0.0;
  };
  std::vector<Fit> fits;
};

/// Runs the scenario at each eps with n = round(1/eps) and at the reference
/// eps, then compares clouds and heights at the requested times.
PseudoconvergenceResult pseudoconvergence_study(const Scenario& scenario, const PhysicalParams& params,
                                                const PseudoconvergenceOptions& opts);

}  // namespace sgsw

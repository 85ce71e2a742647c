#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sgsw/dynamics.hpp"
#include "sgsw/entropic_ot.hpp"
#include "sgsw/measures.hpp"

namespace sgsw {

/// h0 = a tanh(b (x2 - c)) + d
struct JetParams {
  double a = 0.1;
  double b = 10.0;
  double c = 0.5;
  double d = 1.0;

  void validate() const;
  static JetParams steep() { return {}; }
  static JetParams shallow() { return {0.1, 5.0, 0.5, 1.0}; }
};

/// Isotropic Gaussian bump alpha / (2 pi sigma0^2) exp(-|x - mu|^2 / (2 sigma0^2)).
struct BumpParams {
  double mu1 = 0.5;
  double mu2 = 0.3;
  double sigma0 = 0.1;
  double alpha = 0.001;

  void validate() const;
};

struct HeightSample {
  double h = 0.0;
  Point2 grad;
};

using HeightFn = std::function<HeightSample(Point2)>;

HeightSample jet_height(Point2 p, const JetParams& jet);

/// Jet plus bump; the bump's x1 distance uses the nearest periodic image.
HeightSample perturbed_height(Point2 p, const JetParams& jet, const BumpParams& bump, const Domain& domain = {});

/// Cullen stability condition for the jet: a b^2 < 3 sqrt(3) f / (4 g).
bool csp_check(const JetParams& jet, const PhysicalParams& params);

/// Particles at X_i + hoskins_scale * grad h0(X_i) with weight h0(X_i) / N,
/// remapped in x1. Throws ValidationError on a negative height; nodes with
/// zero height are dropped with a warning.
DiscreteMeasure initial_sigma(const Grid& grid, const HeightFn& height, const PhysicalParams& params);

/// Inverse of the jet's Hoskins map in x2: the x2 with
/// x2 + hoskins_scale * dh/dx2(x2) = y2, by bisection to 1e-12.
double hoskins_inverse_x2(double y2, const JetParams& jet, const PhysicalParams& params);

/// Named initial condition: "jet" (steep), "shallow_jet", "perturbed_jet".
struct Scenario {
  std::string name = "jet";
  JetParams jet;
  std::optional<BumpParams> bump;
  Domain domain;

  HeightFn height_fn() const;
  HeightSample height(Point2 p) const;
};

/// Throws ValidationError("scenario", ...) on unknown names.
Scenario make_scenario(const std::string& name);

/// Grid heights h0(X_i) in flat order.
GridField sample_height(const Grid& grid, const HeightFn& height);

/// Initial SimulationState (t = 0, no potentials). Warns on CSP violation.
SimulationState initial_state(const Grid& grid, const Scenario& scenario, const PhysicalParams& params);

/// Drops zero-weight points, warning once with the count. Returns the number dropped.
std::size_t drop_zero_weights(DiscreteMeasure& m, const std::string& what);

}  // namespace sgsw

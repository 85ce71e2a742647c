#include "sgsw/scenarios.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "sgsw/error.hpp"
#include "sgsw/warnings.hpp"

namespace sgsw {

void JetParams::validate() const {
  if (!std::isfinite(a) || !std::isfinite(b) || !std::isfinite(c) || !std::isfinite(d))
    throw ValidationError("jet", "parameters must be finite");
  if (!(d - std::abs(a) > 0.0)) throw ValidationError("jet.d", "d - |a| must be positive");
}

void BumpParams::validate() const {
  if (!(sigma0 > 0.0)) throw ValidationError("bump.sigma0", "must be positive");
  if (!std::isfinite(alpha) || !std::isfinite(mu1) || !std::isfinite(mu2))
    throw ValidationError("bump", "parameters must be finite");
}

HeightSample jet_height(Point2 p, const JetParams& jet) {
  const double s = jet.b * (p.x2 - jet.c);
  const double th = std::tanh(s);
  return {jet.a * th + jet.d, {0.0, jet.a * jet.b * (1.0 - th * th)}};
}

HeightSample perturbed_height(Point2 p, const JetParams& jet, const BumpParams& bump, const Domain& domain) {
  HeightSample s = jet_height(p, jet);
  // Nearest image without the tie rule of image_offset: at half a period the
  // distance must stay 0.5, not collapse to 0.
  double d1 = p.x1 - bump.mu1;
  d1 -= domain.x1_period * std::nearbyint(d1 / domain.x1_period);
  const double d2 = p.x2 - bump.mu2;
  const double s2 = bump.sigma0 * bump.sigma0;
  const double gauss = bump.alpha / (2.0 * std::numbers::pi * s2) * std::exp(-(d1 * d1 + d2 * d2) / (2.0 * s2));
  s.h += gauss;
  s.grad.x1 += -d1 / s2 * gauss;
  s.grad.x2 += -d2 / s2 * gauss;
  return s;
}

bool csp_check(const JetParams& jet, const PhysicalParams& params) {
  return jet.a * jet.b * jet.b < 3.0 * std::sqrt(3.0) * params.f / (4.0 * params.g);
}

DiscreteMeasure initial_sigma(const Grid& grid, const HeightFn& height, const PhysicalParams& params) {
  const double k = params.hoskins_scale();
  const double n = static_cast<double>(grid.size());
  DiscreteMeasure sigma;
  sigma.points.reserve(grid.size());
  sigma.weights.reserve(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const Point2 x = grid.node(i);
    const HeightSample s = height(x);
    if (s.h < 0.0 || !std::isfinite(s.h)) {
      std::ostringstream msg;
      msg << "initial height " << s.h << " at (" << x.x1 << ", " << x.x2 << ") is not a valid mass";
      throw ValidationError("scenario", msg.str());
    }
    sigma.points.push_back(remap_periodic(x + k * s.grad, grid.domain()));
    sigma.weights.push_back(s.h / n);
  }
  drop_zero_weights(sigma, "initial particles");
  return sigma;
}

double hoskins_inverse_x2(double y2, const JetParams& jet, const PhysicalParams& params) {
  const double k = params.hoskins_scale();
  const double reach = k * std::abs(jet.a * jet.b) + 1e-12;
  double lo = y2 - reach, hi = y2 + reach;
  const auto forward = [&](double x2) { return x2 + k * jet_height({0.0, x2}, jet).grad.x2 - y2; };
  if (forward(lo) > 0.0 || forward(hi) < 0.0) throw DomainError("hoskins_inverse_x2: root not bracketed");
  while (hi - lo > 1e-12) {
    const double mid = 0.5 * (lo + hi);
    (forward(mid) > 0.0 ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

HeightFn Scenario::height_fn() const {
  if (bump) return [jet = jet, bump = *bump, domain = domain](Point2 p) { return perturbed_height(p, jet, bump, domain); };
  return [jet = jet](Point2 p) { return jet_height(p, jet); };
}

HeightSample Scenario::height(Point2 p) const {
  return bump ? perturbed_height(p, jet, *bump, domain) : jet_height(p, jet);
}

Scenario make_scenario(const std::string& name) {
  Scenario s;
  s.name = name;
  if (name == "jet") {
    s.jet = JetParams::steep();
  } else if (name == "shallow_jet") {
    s.jet = JetParams::shallow();
  } else if (name == "perturbed_jet") {
    s.jet = JetParams::steep();
    s.bump = BumpParams{};
  } else {
    throw ValidationError("scenario", "unknown scenario '" + name + "' (jet | shallow_jet | perturbed_jet)");
  }
  return s;
}

GridField sample_height(const Grid& grid, const HeightFn& height) {
  GridField h(grid.size());
  for (std::size_t i = 0; i < h.size(); ++i) h[i] = height(grid.node(i)).h;
  return h;
}

SimulationState initial_state(const Grid& grid, const Scenario& scenario, const PhysicalParams& params) {
  scenario.jet.validate();
  if (scenario.bump) scenario.bump->validate();
  if (!csp_check(scenario.jet, params)) {
    std::ostringstream msg;
    msg << "jet violates the Cullen stability condition (a b^2 = " << scenario.jet.a * scenario.jet.b * scenario.jet.b
        << ", bound " << 3.0 * std::sqrt(3.0) * params.f / (4.0 * params.g) << ")";
    warn(msg.str());
  }
  SimulationState s;
  s.particles = initial_sigma(grid, scenario.height_fn(), params);
  return s;
}

std::size_t drop_zero_weights(DiscreteMeasure& m, const std::string& what) {
  std::size_t kept = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m.weights[i] > 0.0) {
      m.points[kept] = m.points[i];
      m.weights[kept] = m.weights[i];
      ++kept;
    }
  }
  const std::size_t dropped = m.size() - kept;
  m.points.resize(kept);
  m.weights.resize(kept);
  if (dropped > 0) warn("dropped " + std::to_string(dropped) + " zero-weight " + what);
  return dropped;
}

}  // namespace sgsw

#include <doctest.h>

#include <cmath>
#include <random>

#include <sgsw/diagnostics.hpp>
#include <sgsw/error.hpp>
#include <sgsw/scenarios.hpp>
#include <sgsw/warnings.hpp>

#include "fixtures.hpp"

using namespace sgsw;

namespace {

const PhysicalParams kParams{1.0, 0.1};

FlowModel model_for(const Grid& grid, double eps, VelocityMode mode) {
  FlowModel m;
  m.grid_measure = grid.uniform_measure();
  m.params = kParams;
  m.cfg.eps = eps;
  m.cfg.tol = 1e-11;
  m.cfg.max_iters = 100000;
  m.mode = mode;
  return m;
}

}  // namespace

TEST_SUITE("diagnostics") {
  TEST_CASE("uniform height at rest") {
    const Grid grid(8, 8);
    for (auto mode : {VelocityMode::biased, VelocityMode::debiased, VelocityMode::saddle}) {
      CAPTURE(to_string(mode));
      const auto model = model_for(grid, 0.03, mode);
      SimulationState s;
      s.particles = grid.uniform_measure();
      const auto snap = snapshot_at(s, model);
      const auto e = energy_report(snap, model);
      CHECK(e.total == doctest::Approx(e.kinetic + e.potential).epsilon(1e-15));
      // Potential is g/2 up to the small wall distortion of the entropic height.
      CHECK(e.potential == doctest::Approx(0.05).epsilon(2e-2));
      CHECK(std::abs(e.entropy_term) < 1e-9);
      if (mode == VelocityMode::biased) {
        // OT_eps(mu, mu) is O(eps) and negative in this normalisation.
        CHECK(std::abs(e.kinetic) < 0.1);
      } else {
        CHECK(std::abs(e.kinetic) < 2e-3);
      }
      CHECK(uniform_energy_floor(snap.state.particles, model.grid_measure, kParams) ==
            doctest::Approx(0.05).epsilon(1e-14));
    }
  }

  TEST_CASE("normalized energy error vanishes at the baseline") {
    const Grid grid(6, 6);
    const auto model = model_for(grid, 0.06, VelocityMode::debiased);
    const auto snap = snapshot_at(initial_state(grid, make_scenario("perturbed_jet"), kParams), model);
    const auto e0 = energy_report(snap, model);
    const double floor = uniform_energy_floor(snap.state.particles, model.grid_measure, kParams);
    CHECK(energy_report(snap, model, &e0, floor).normalized_error == 0.0);
  }

  TEST_CASE("symmetric OT value matches the generic self value") {
    std::mt19937_64 rng(41);
    const auto m = fixture::random_measure(rng, 12, true);
    const auto sym = symmetric_sinkhorn(m, 0.05, 1e-13, 100000);
    CHECK(symmetric_ot_value(sym.psi_sym, m, 0.05) == doctest::Approx(ot_eps_self_value(m, 0.05, 1e-13)).epsilon(1e-10));
  }

  TEST_CASE("losses vanish on identical inputs and are positive otherwise") {
    const Grid grid(6, 6);
    const auto sc = make_scenario("jet");
    const auto h = sample_height(grid, sc.height_fn());
    const auto ref = make_height_reference(grid, h);
    CHECK(height_error(h, grid, ref) < 1e-4);
    auto h2 = h;
    h2[0] *= 1.5;
    CHECK(height_error(h2, grid, ref) > 1e-3);

    const auto pref = make_phase_reference(grid, sc.height_fn(), kParams);
    DiscreteMeasure cloud;
    std::vector<Point2> vel;
    for (std::size_t i = 0; i < pref.cloud.points.size(); ++i) {
      cloud.points.push_back(pref.cloud.points[i].y);
      cloud.weights.push_back(3.0 * pref.cloud.weights[i]);  // mass is normalised away
      vel.push_back(pref.cloud.points[i].v);
    }
    CHECK(phase_space_error(cloud, vel, pref) < 1e-4);
    vel[3].x1 += 0.5;
    CHECK(phase_space_error(cloud, vel, pref) > 1e-3);

    CHECK(cloud_error(cloud, cloud) < 1e-4);
  }

  TEST_CASE("single-point height loss against the exact height") {
    const Grid one(1, 1);
    const GridField h{1.0};
    const auto ref = make_height_reference(one, h);
    CHECK(height_error({1.0}, one, ref) <= 1e-4);
  }

  TEST_CASE("negative heights are clamped with a warning") {
    std::vector<std::string> msgs;
    set_warning_handler([&](std::string_view m) { msgs.emplace_back(m); });
    const auto m = normalized_measure({{0.1, 0.1}, {0.5, 0.5}}, {-1.0, 2.0}, "height");
    CHECK(m.weights[0] == 0.0);
    CHECK(m.weights[1] == 1.0);
    CHECK(msgs.size() == 1);
    CHECK_THROWS_AS(normalized_measure({{0.1, 0.1}}, {-1.0}, "height"), ValidationError);
    set_warning_handler(nullptr);
  }

  TEST_CASE("bilinear sampling is exact on fields linear in x2 and periodic-linear in x1") {
    const Grid grid(5, 4);
    GridField f(grid.size());
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = 2.0 + 3.0 * grid.node(i).x2;
    for (Point2 p : {Point2{0.01, 0.3}, Point2{0.99, 0.6}, Point2{0.5, 0.125}, Point2{0.33, 0.875}})
      CHECK(bilinear_sample(f, grid, p) == doctest::Approx(2.0 + 3.0 * p.x2).epsilon(1e-14));
    // Beyond the outermost nodes the value is clamped.
    CHECK(bilinear_sample(f, grid, {0.2, 0.0}) == doctest::Approx(2.0 + 3.0 * 0.125).epsilon(1e-14));
    // Across the seam, interpolation runs between the last and first columns.
    GridField g(grid.size(), 0.0);
    for (int i2 = 0; i2 < 4; ++i2) g[grid.index(0, i2)] = 1.0;
    CHECK(bilinear_sample(g, grid, {0.0, 0.5}) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(l2_height_error(f, grid, f, grid) < 1e-14);
  }

  TEST_CASE("log-log slope of a power law") {
    const std::vector<double> x{0.1, 0.05, 0.025};
    std::vector<double> y;
    for (double v : x) y.push_back(3.0 * std::pow(v, 1.5));
    CHECK(loglog_slope(x, y) == doctest::Approx(1.5).epsilon(1e-12));
    CHECK_THROWS_AS(loglog_slope({0.1}, {1.0}), ValidationError);
  }

  TEST_CASE("potential-form debiased height matches the saddle height") {
    const Grid grid(6, 6);
    const auto model = model_for(grid, 0.06, VelocityMode::saddle);
    const auto sigma = initial_sigma(grid, make_scenario("jet").height_fn(), kParams);
    const auto sad = saddle_sinkhorn(model.grid_measure, sigma, kParams, model.cfg);
    REQUIRE(sad.stats.converged);
    const auto h_p = debiased_potential_height(sad.state.u, sad.state.phi, kParams, model.cfg.eps);
    double d = 0.0;
    for (std::size_t i = 0; i < h_p.size(); ++i) d = std::max(d, std::abs(h_p[i] - sad.state.h[i]));
    CHECK(d < 1e-8);
    CHECK_THROWS_AS(debiased_potential_height(std::vector<double>{0.0}, std::vector<double>{0.0}, kParams, 0.1),
                    ValidationError);
  }

  TEST_CASE("ageostrophic ratio input checks") {
    Snapshot a, b, c;
    a.state.t = 0.0;
    b.state.t = 0.1;
    c.state.t = 0.3;
    FlowModel m;
    CHECK_THROWS_AS(ageostrophic_ratio(a, b, c, m), ValidationError);
  }

  TEST_CASE("ageostrophic ratio of a stationary jet is small") {
    // Coarse grids see wall and shear artefacts in the reconstruction, so the
    // bound here is loose; the desk-scale check lives in the acceptance suite.
    const Grid grid(20, 20);
    const auto model = model_for(grid, 0.04, VelocityMode::debiased);
    RunOptions ro;
    ro.horizon = 0.2;
    ro.snapshot_every = 1;
    const auto r = run(initial_state(grid, make_scenario("jet"), kParams), model, Stepper{StepperKind::heun, 0.1}, ro);
    REQUIRE(r.snapshots.size() == 3);
    const double ratio = ageostrophic_ratio(r.snapshots[0], r.snapshots[1], r.snapshots[2], model);
    MESSAGE("stationary ratio " << ratio);
    CHECK(ratio < 0.05);
  }

  TEST_CASE("eps study rows and slopes") {
    EpsConvergenceOptions opts;
    opts.eps_list = {0.25, 0.125};
    opts.reference_n = 16;
    const auto res = eps_convergence_study(make_scenario("shallow_jet"), kParams, opts);
    REQUIRE(res.rows.size() == 2);
    for (const auto& r : res.rows) {
      CHECK(r.ok);
      CHECK(r.eh_biased > 0.0);
    }
    CHECK(res.rows[1].n == 8);
    CHECK(std::isfinite(res.slopes.eh_biased));
  }

  TEST_CASE("pseudoconvergence with N = N0 gives zero errors") {
    PseudoconvergenceOptions opts;
    opts.eps_list = {0.2};
    opts.reference_eps = 0.2;
    opts.times = {0.0, 0.2};
    opts.modes = {VelocityMode::biased};
    const auto res = pseudoconvergence_study(make_scenario("jet"), kParams, opts);
    REQUIRE(res.rows.size() == 2);
    for (const auto& r : res.rows) {
      CHECK(r.ok);
      CHECK(r.e_sigma < 1e-4);
      CHECK(r.e_h < 1e-4);
      CHECK(r.e_h_l2 < 1e-12);
    }
  }
}

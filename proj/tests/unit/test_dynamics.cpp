#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include <sgsw/diagnostics.hpp>
#include <sgsw/dynamics.hpp>
#include <sgsw/error.hpp>
#include <sgsw/scenarios.hpp>

#include "fixtures.hpp"

using namespace sgsw;

namespace {

const PhysicalParams kParams{1.0, 0.1};

FlowModel jet_model(const Grid& grid, double eps, VelocityMode mode = VelocityMode::debiased) {
  FlowModel m;
  m.grid_measure = grid.uniform_measure();
  m.params = kParams;
  m.cfg.eps = eps;
  m.cfg.tol = 1e-11;
  m.cfg.max_iters = 100000;
  m.mode = mode;
  return m;
}

// Rotation about the origin, exact solution after time t.
std::vector<Point2> rotate(const std::vector<Point2>& y, double t) {
  std::vector<Point2> out;
  for (auto p : y) out.push_back({std::cos(t) * p.x1 + std::sin(t) * p.x2, -std::sin(t) * p.x1 + std::cos(t) * p.x2});
  return out;
}

double rotation_error(StepperKind kind, int steps) {
  const std::vector<Point2> y0{{1.0, 0.0}, {0.3, -0.7}};
  const double period = 2 * std::numbers::pi;
  const double dt = period / steps;
  const VelocityFn field = [](const std::vector<Point2>& y, int) {
    std::vector<Point2> v;
    for (auto p : y) v.push_back(rotate_j(p));
    return v;
  };
  auto y = y0;
  for (int k = 0; k < steps; ++k) y = rk_advance(y, dt, kind, field);
  double e = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) e = std::max(e, std::sqrt(norm2(y[i] - y0[i])));
  return e;
}

}  // namespace

TEST_SUITE("dynamics") {
  TEST_CASE("J rotates clockwise") {
    CHECK(rotate_j({1.0, 0.0}) == Point2{0.0, -1.0});
    CHECK(rotate_j({0.0, 1.0}) == Point2{1.0, 0.0});
  }

  TEST_CASE("names parse and unknown names name the field") {
    CHECK(parse_velocity_mode("saddle") == VelocityMode::saddle);
    CHECK(parse_stepper("rk4") == StepperKind::rk4);
    try {
      parse_stepper("leapfrog", "stepper");
      FAIL("expected a validation error");
    } catch (const ValidationError& e) {
      CHECK(e.field() == "stepper");
    }
    CHECK_THROWS_AS(Stepper({StepperKind::heun, 0.0}).validate(), ValidationError);
  }

  TEST_CASE("one particle on one grid point has zero velocity") {
    const Grid grid(1, 1);
    FlowModel m = jet_model(grid, 0.05);
    for (auto mode : {VelocityMode::biased, VelocityMode::debiased, VelocityMode::saddle}) {
      m.mode = mode;
      const auto v = velocity_field(fixture::dirac(grid.node(0)), m);
      CHECK(std::abs(v.velocity[0].x1) < 1e-12);
      CHECK(std::abs(v.velocity[0].x2) < 1e-12);
    }
  }

  TEST_CASE("constant field under Heun moves by dt v") {
    const std::vector<Point2> y{{0.1, 0.2}, {0.7, 0.9}};
    const Point2 c{0.3, -0.2};
    const VelocityFn field = [&](const std::vector<Point2>& p, int) { return std::vector<Point2>(p.size(), c); };
    const auto out = rk_advance(y, 0.25, StepperKind::heun, field);
    for (std::size_t i = 0; i < y.size(); ++i) {
      CHECK(out[i].x1 == doctest::Approx(y[i].x1 + 0.25 * c.x1).epsilon(1e-15));
      CHECK(out[i].x2 == doctest::Approx(y[i].x2 + 0.25 * c.x2).epsilon(1e-15));
    }
    const VelocityFn zero = [](const std::vector<Point2>& p, int) { return std::vector<Point2>(p.size()); };
    CHECK(rk_advance(y, 0.25, StepperKind::rk4, zero) == y);
  }

  TEST_CASE("steppers reach their classical order on a rotation") {
    for (auto kind : {StepperKind::euler, StepperKind::heun, StepperKind::rk4}) {
      std::vector<double> dt, err;
      for (int steps : {64, 128, 256, 512}) {
        dt.push_back(1.0 / steps);
        err.push_back(rotation_error(kind, steps));
      }
      const int order = Stepper{kind, 0.1}.order();
      CHECK(loglog_slope(dt, err) == doctest::Approx(order).epsilon(0.3 / order));
    }
  }

  TEST_CASE("T = 0 gives exactly the initial snapshot") {
    const Grid grid(6, 6);
    const auto model = jet_model(grid, 0.08);
    const auto init = initial_state(grid, make_scenario("jet"), kParams);
    RunOptions ro;
    ro.horizon = 0.0;
    const auto r = run(init, model, Stepper{}, ro);
    CHECK(r.completed);
    REQUIRE(r.snapshots.size() == 1);
    CHECK(r.snapshots[0].state.t == 0.0);
    CHECK(r.snapshots[0].state.particles.points == init.particles.points);
    CHECK(r.steps.empty());
  }

  TEST_CASE("weights are bitwise constant and snapshots land on the cadence") {
    const Grid grid(6, 6);
    const auto model = jet_model(grid, 0.08);
    const auto init = initial_state(grid, make_scenario("perturbed_jet"), kParams);
    RunOptions ro;
    ro.horizon = 0.5;
    ro.snapshot_every = 2;
    const auto r = run(init, model, Stepper{StepperKind::heun, 0.1}, ro);
    REQUIRE(r.completed);
    REQUIRE(r.snapshots.size() == 4);  // steps 0, 2, 4, 5
    CHECK(r.snapshots[1].state.step_index == 2);
    CHECK(r.snapshots[3].state.step_index == 5);
    CHECK(r.snapshots[3].state.t == doctest::Approx(0.5).epsilon(1e-14));
    for (const auto& s : r.snapshots) {
      CHECK(s.state.particles.weights == init.particles.weights);
      for (auto p : s.state.particles.points) {
        CHECK(p.x1 >= 0.0);
        CHECK(p.x1 < 1.0);
      }
    }
  }

  TEST_CASE("one jet step commutes with x1 translation by whole cells") {
    const Grid grid(8, 6);
    const auto model = jet_model(grid, 0.06);
    const auto init = initial_state(grid, make_scenario("jet"), kParams);
    const double shift = 3 * grid.dx1();
    SimulationState moved = init;
    for (auto& p : moved.particles.points) p = remap_periodic({p.x1 + shift, p.x2}, model.domain);
    const Stepper st{StepperKind::heun, 0.1};
    const auto a = step(init, model, st).state.particles.points;
    const auto b = step(moved, model, st).state.particles.points;
    double err = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
      const Point2 d = periodic_displacement({a[j].x1 + shift, a[j].x2}, b[j], model.domain);
      err = std::max(err, std::sqrt(norm2(d)));
    }
    CHECK(err < 1e-9);
  }

  TEST_CASE("a failing stage leaves the input state untouched") {
    const Grid grid(4, 4);
    auto model = jet_model(grid, 0.05);
    model.cfg.max_iters = 1;
    const auto init = initial_state(grid, make_scenario("jet"), kParams);
    const auto before = init.particles.points;
    CHECK_THROWS_AS(step(init, model, Stepper{}), SolverError);
    CHECK(init.particles.points == before);
    RunOptions ro;
    ro.horizon = 1.0;
    const auto r = run(init, model, Stepper{}, ro);
    CHECK_FALSE(r.completed);
    CHECK(r.failure.find("did not converge") != std::string::npos);
  }

  TEST_CASE("stationary jet has small x2 velocity") {
    const Grid grid(12, 12);
    const auto model = jet_model(grid, 0.05);
    const auto snap = snapshot_at(initial_state(grid, make_scenario("jet"), kParams), model);
    double v2 = 0.0;
    for (auto v : snap.velocity) v2 = std::max(v2, std::abs(v.x2));
    CHECK(v2 < 1e-10);
  }

  TEST_CASE("warm and cold solves agree") {
    const Grid grid(8, 8);
    auto model = jet_model(grid, 0.05, VelocityMode::biased);
    auto state = initial_state(grid, make_scenario("perturbed_jet"), kParams);
    const auto s0 = snapshot_at(state, model);
    const auto next = step(s0.state, model, Stepper{StepperKind::heun, 0.1}).state;
    const auto warm = solve_swsg_dual(model.grid_measure, next.particles, kParams, model.cfg, &next.pots);
    const auto cold = solve_swsg_dual(model.grid_measure, next.particles, kParams, model.cfg);
    double d = 0.0;
    for (std::size_t i = 0; i < warm.pots.phi.size(); ++i) d = std::max(d, std::abs(warm.pots.phi[i] - cold.pots.phi[i]));
    CHECK(d < 10 * model.cfg.tol);
    CHECK(warm.stats.iterations < cold.stats.iterations);
  }

  TEST_CASE("reconstruction of simple cases") {
    SUBCASE("one point maps to its grid node") {
      const Grid grid(1, 1);
      SimulationState s;
      s.particles = fixture::dirac({0.5, 0.6});
      const auto model = jet_model(grid, 0.05);
      s.pots = velocity_field(s.particles, model).pots;
      const auto x = reconstruct_physical_positions(s, model);
      CHECK(x.points[0].x1 == doctest::Approx(0.5).epsilon(1e-12));
      CHECK(x.points[0].x2 == doctest::Approx(0.5).epsilon(1e-12));
    }
    SUBCASE("sigma on the grid with uniform height") {
      const Grid grid(8, 8);
      const auto model = jet_model(grid, 0.03);
      SimulationState s;
      s.particles = grid.uniform_measure();
      s.pots = velocity_field(s.particles, model).pots;
      const auto x = reconstruct_physical_positions(s, model);
      double err = 0.0;
      for (std::size_t j = 0; j < x.size(); ++j)
        err = std::max(err, std::sqrt(norm2(periodic_displacement(grid.node(j), x.points[j], model.domain))));
      CHECK(err < 0.02);
    }
    SUBCASE("jet at t = 0 matches the analytic Hoskins inverse") {
      const Grid grid(16, 16);
      const auto model = jet_model(grid, 0.03);
      const auto state = initial_state(grid, make_scenario("jet"), kParams);
      const auto snap = snapshot_at(state, model);
      const auto x = reconstruct_physical_positions(snap.state, model);
      double err = 0.0;
      for (std::size_t j = 0; j < x.size(); ++j) {
        const double exact = hoskins_inverse_x2(snap.state.particles.points[j].x2, JetParams::steep(), kParams);
        err += std::abs(x.points[j].x2 - exact) / x.size();
      }
      MESSAGE("mean |x2 - Hoskins inverse| = " << err);
      CHECK(err < 0.02);
    }
  }
}

#include <doctest.h>

#include <cmath>
#include <random>

#include <sgsw/entropic_ot.hpp>
#include <sgsw/error.hpp>

#include "fixtures.hpp"
#include "oracles.hpp"

using namespace sgsw;

namespace {

const PhysicalParams kParams{1.0, 0.1};

SolverConfig config(double eps, double tol = 1e-11) {
  SolverConfig c;
  c.eps = eps;
  c.tol = tol;
  c.max_iters = 100000;
  return c;
}

double sup_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double r = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) r = std::max(r, std::abs(a[i] - b[i]));
  return r;
}

}  // namespace

TEST_SUITE("entropic_ot") {
  TEST_CASE("one-point problem at the same location") {
    const auto x = fixture::dirac({0.4, 0.5});
    // The sweep contracts at rate w/(1+w), w = g/eps, so the stopping error is
    // about (g/eps) * tol.
    for (double g : {0.1, 0.7, 2.0}) {
      const PhysicalParams p{1.0, g};
      const auto sol = solve_swsg_dual(x, x, p, config(0.01, 1e-14));
      REQUIRE(sol.stats.converged);
      CHECK(std::abs(sol.pots.phi[0] + g) < 1e-11);
      CHECK(std::abs(sol.pots.psi[0] - g) < 1e-11);
      CHECK(std::abs(height_from_phi(sol.pots.phi, p)[0] - 1.0) < 1e-10);
    }
  }

  TEST_CASE("one-point problem at distance") {
    const auto x = fixture::dirac({0.4, 0.5});
    const auto y = fixture::dirac({0.4, 0.7});
    const double c = 0.04;
    const auto sol = solve_swsg_dual(x, y, kParams, config(0.01));
    REQUIRE(sol.stats.converged);
    // ln(1e-11 / 0.1) / ln(10/11) ~ 240 sweeps.
    CHECK(sol.stats.iterations < 300);
    CHECK(std::abs(sol.pots.phi[0] + 0.1) < 1e-9);
    CHECK(std::abs(sol.pots.psi[0] - (0.1 + c)) < 1e-9);
    const auto grad = psi_gradient(sol.pots, x, y, 0.01);
    CHECK(norm2(grad[0]) == doctest::Approx(c).epsilon(1e-13));
    CHECK(barycentric_map(sol.pots.phi, x, y, 0.01)[0] == Point2{0.4, 0.5});
  }

  TEST_CASE("first half step from phi = 0") {
    std::mt19937_64 rng(1);
    const Grid grid(3, 3);
    const auto mu = grid.uniform_measure();
    const auto sigma = fixture::random_measure(rng, 5, true);
    const double eps = 0.05;
    DualPotentials zero{std::vector<double>(9, 0.0), std::vector<double>(5, 0.0), {}, {}};
    const auto next = swsg_sinkhorn_step(zero, mu, sigma, kParams, config(eps));
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < 9; ++i) s += std::exp(-periodic_cost(mu.points[i], sigma.points[j], {}) / eps) / 9.0;
      CHECK(next.psi[j] == doctest::Approx(-eps * std::log(s)).epsilon(1e-13));
    }
  }

  TEST_CASE("warm start from the fixed point takes one iteration") {
    std::mt19937_64 rng(2);
    const auto mu = fixture::random_measure(rng, 6, false);
    const auto sigma = fixture::random_measure(rng, 5, true);
    const auto cold = solve_swsg_dual(mu, sigma, kParams, config(0.1, 1e-13));
    REQUIRE(cold.stats.converged);
    const auto warm = solve_swsg_dual(mu, sigma, kParams, config(0.1), &cold.pots);
    CHECK(warm.stats.iterations == 1);
    CHECK(warm.stats.final_residual < 1e-11);
  }

  TEST_CASE("matches the dense ascent oracle") {
    std::mt19937_64 rng(3);
    for (int k = 0; k < 4; ++k) {
      const auto mu = fixture::random_measure(rng, 4, false);
      const auto sigma = fixture::random_measure(rng, 4, true);
      const auto sol = solve_swsg_dual(mu, sigma, kParams, config(0.1, 1e-13));
      const auto ref = oracle::dense_dual_ascent(mu, sigma, kParams, 0.1);
      REQUIRE(ref.grad_norm < 1e-12);
      CHECK(sup_diff(sol.pots.phi, ref.phi) < 1e-8);
      CHECK(sup_diff(sol.pots.psi, ref.psi) < 1e-8);
      CHECK(swsg_dual_value(sol.pots, mu, sigma, kParams, 0.1) ==
            doctest::Approx(oracle::dual_value(ref.phi, ref.psi, mu, sigma, kParams, 0.1)).epsilon(1e-12));
    }
  }

  TEST_CASE("marginals, mass and residual history at convergence") {
    const Grid grid(8, 8);
    const auto mu = grid.uniform_measure();
    std::mt19937_64 rng(4);
    const auto sigma = fixture::random_measure(rng, 50, true);
    const double tol = 1e-11;
    const auto sol = solve_swsg_dual(mu, sigma, kParams, config(0.05, tol));
    REQUIRE(sol.stats.converged);
    const auto h = height_from_phi(sol.pots.phi, kParams);
    // Mass defects scale like (potential increment) / eps; compare in potential units.
    CHECK(0.05 * particle_marginal_residual(sol.pots.phi, sol.pots.psi, mu, sigma, 0.05) < 10 * tol);
    CHECK(0.05 * grid_marginal_residual(h, sol.pots.phi, sol.pots.psi, mu, sigma, 0.05) < 10 * tol);
    double mass = 0.0;
    for (double v : h) mass += v / static_cast<double>(h.size());
    CHECK(std::abs(mass - total_mass(sigma)) < 10 * tol);
    const auto& hist = sol.stats.residual_history;
    REQUIRE(hist.size() > 10);
    CHECK(sol.stats.final_residual == hist.back());
    for (std::size_t k = hist.size() - 10; k < hist.size(); ++k) CHECK(hist[k] < hist[k - 1]);
  }

  TEST_CASE("regularised dual value bounds the unregularised one") {
    std::mt19937_64 rng(6);
    for (int k = 0; k < 3; ++k) {
      const auto mu = fixture::random_measure(rng, 6, false);
      const auto sigma = fixture::random_measure(rng, 5, true);
      const auto exact = oracle::unregularized_value(mu, sigma, kParams);
      REQUIRE(exact.upper - exact.lower < 1e-6);
      double prev_gap = 1e300;
      for (double eps : {0.1, 0.05, 0.02, 0.01}) {
        const auto sol = solve_swsg_dual(mu, sigma, kParams, config(eps, 1e-12));
        const double v = swsg_dual_value(sol.pots, mu, sigma, kParams, eps);
        CHECK(v >= exact.upper);
        const double gap = v - exact.lower;
        CHECK(gap < prev_gap);
        prev_gap = gap;
      }
    }
  }

  TEST_CASE("x1 translation leaves the potentials unchanged") {
    const Domain d;
    const Grid grid(6, 6);
    auto mu = grid.uniform_measure();
    std::mt19937_64 rng(8);
    auto sigma = fixture::random_measure(rng, 20, true);
    const auto a = solve_swsg_dual(mu, sigma, kParams, config(0.05, 1e-13));
    for (auto& p : mu.points) p = remap_periodic(Point2{p.x1 + 0.37, p.x2}, d);
    for (auto& p : sigma.points) p = remap_periodic(Point2{p.x1 + 0.37, p.x2}, d);
    const auto b = solve_swsg_dual(mu, sigma, kParams, config(0.05, 1e-13));
    CHECK(sup_diff(a.pots.phi, b.pots.phi) < 1e-10);
    CHECK(sup_diff(a.pots.psi, b.pots.psi) < 1e-10);
  }

  TEST_CASE("height examples") {
    CHECK(height_from_phi(std::vector{-0.1}, kParams)[0] == doctest::Approx(1.0));
    CHECK(height_from_phi(std::vector{0.0}, kParams)[0] == 0.0);
    const PhysicalParams unit_g{1.0, 0.3};
    CHECK(height_from_phi(std::vector{-0.3}, unit_g)[0] == doctest::Approx(1.0));
  }

  TEST_CASE("symmetric sinkhorn examples") {
    const auto one = fixture::dirac({0.2, 0.3});
    CHECK(symmetric_sinkhorn(one, 0.05, 1e-12, 1000).psi_sym[0] == doctest::Approx(0.0).scale(1.0));
    const DiscreteMeasure two{{{0.2, 0.3}, {0.2, 0.3}}, {0.5, 0.5}};
    const auto s2 = symmetric_sinkhorn(two, 0.05, 1e-12, 1000);
    CHECK(std::abs(s2.psi_sym[0]) < 1e-12);
    CHECK(std::abs(s2.psi_sym[1]) < 1e-12);

    std::mt19937_64 rng(10);
    const auto sigma = fixture::random_measure(rng, 16, true);
    const auto s = symmetric_sinkhorn(sigma, 0.03, 1e-11, 10000);
    REQUIRE(s.stats.converged);
    CHECK(symmetric_residual(s.psi_sym, sigma, 0.03) < 1e-11);
  }

  TEST_CASE("entropic OT examples") {
    const auto a = fixture::dirac({0.3, 0.3});
    CHECK(ot_eps_value(a, a, 0.1, 1e-12) == doctest::Approx(0.0).scale(1.0));
    const auto b = fixture::dirac({0.3, 0.5});
    const double v = ot_eps_value(a, b, 1e-3, 1e-12);
    CHECK(std::abs(v - 0.04) < 5e-3);
    CHECK_THROWS_AS(ot_eps_value(a, fixture::dirac({0.1, 0.1}, 0.9), 0.1, 1e-12), ValidationError);
  }

  TEST_CASE("entropic OT matches a dense Newton solve and increases with eps") {
    std::mt19937_64 rng(12);
    for (int k = 0; k < 3; ++k) {
      const auto a = fixture::random_measure(rng, 7, true);
      const auto b = fixture::random_measure(rng, 6, true);
      double prev = -1e300;
      for (double eps : {0.01, 0.03, 0.1, 0.3}) {
        const double v = ot_eps_value(a, b, eps, 1e-12);
        CHECK(v == doctest::Approx(oracle::dense_ot_eps(a, b, eps)).epsilon(1e-9));
        CHECK(v >= prev);
        prev = v;
      }
    }
  }

  TEST_CASE("a nearly isolated point does not stall the cross solve") {
    // The third point couples to the others with weight ~e^-18, so plain
    // Sinkhorn drifts along the relative gauge for ~1e8 iterations.
    const DiscreteMeasure a{{{0.83896002155774474, 0.06894162776833887},
                             {0.17495226119690532, 0.20142809424488142},
                             {0.53677619048524072, 0.97013688288966682}},
                            {0.41357862176471399, 0.20378808814589192, 0.38263329008939417}};
    const double cross = ot_eps_value(a, a, 0.05, 1e-12);
    CHECK(cross == doctest::Approx(ot_eps_self_value(a, 0.05, 1e-12)).epsilon(1e-12));
    CHECK(cross == doctest::Approx(oracle::dense_ot_eps(a, a, 0.05)).epsilon(1e-9));
  }

  TEST_CASE("sinkhorn divergence properties") {
    std::mt19937_64 rng(14);
    for (int k = 0; k < 5; ++k) {
      const auto a = fixture::random_measure(rng, 9, true);
      const auto b = fixture::random_measure(rng, 11, true);
      CHECK(std::abs(sinkhorn_divergence(a, a, 0.05, 1e-12)) < 1e-10);
      const double ab = sinkhorn_divergence(a, b, 0.05, 1e-12);
      CHECK(ab > 0.0);
      CHECK(ab == doctest::Approx(sinkhorn_divergence(b, a, 0.05, 1e-12)).epsilon(1e-9));
    }
    const double s = sinkhorn_divergence(fixture::dirac({0.3, 0.3}), fixture::dirac({0.3, 0.5}), 1e-3, 1e-12);
    CHECK(s == doctest::Approx(0.04).epsilon(1e-9));
  }

  TEST_CASE("barycentric map limits") {
    const Grid grid(4, 4);
    const auto mu = grid.uniform_measure();
    // eps so large that every kernel entry rounds to 1: b averages the nearest images.
    DiscreteMeasure sigma{{grid.node(grid.index(1, 2))}, {1.0}};
    const auto b = barycentric_map(std::vector<double>(16, 0.0), mu, sigma, 1e20);
    CHECK(b[0].x2 == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(b[0].x1 == doctest::Approx(sigma.points[0].x1).epsilon(1e-9));
    // A row with no coupling mass at all.
    const auto y = fixture::dirac({0.5, 0.5});
    const DiscreteMeasure empty_grid{{{0.5, 0.1}}, {0.0}};
    try {
      barycentric_map(std::vector{0.0}, empty_grid, y, 1e-3);
      FAIL("expected SolverError");
    } catch (const SolverError& e) {
      CHECK(std::string(e.what()).find("particle 0") != std::string::npos);
    }
  }

  TEST_CASE("debiased gradient of a single particle is the plain gradient") {
    const Grid grid(3, 3);
    const auto mu = grid.uniform_measure();
    const auto y = fixture::dirac({0.41, 0.62});
    auto sol = solve_swsg_dual(mu, y, kParams, config(0.05));
    sol.pots.psi_sym = symmetric_sinkhorn(y, 0.05, 1e-12, 100).psi_sym;
    const auto plain = psi_gradient(sol.pots, mu, y, 0.05);
    const auto deb = debiased_gradient(sol.pots, mu, y, 0.05);
    CHECK(deb[0].x1 == doctest::Approx(plain[0].x1).epsilon(1e-14));
    CHECK(deb[0].x2 == doctest::Approx(plain[0].x2).epsilon(1e-14));
  }

  TEST_CASE("self transport: sigma on the grid gives a small debiased gradient") {
    const Grid grid(8, 8);
    const auto mu = grid.uniform_measure();
    const double eps = 0.03, tol = 1e-12;
    auto sol = solve_swsg_dual(mu, mu, kParams, config(eps, tol));
    sol.pots.psi_sym = symmetric_sinkhorn(mu, eps, tol, 100000).psi_sym;
    const auto deb = debiased_gradient(sol.pots, mu, mu, eps);
    const auto plain = psi_gradient(sol.pots, mu, mu, eps);
    double deb_max = 0.0, plain_max = 0.0;
    for (std::size_t j = 0; j < deb.size(); ++j) {
      deb_max = std::max(deb_max, std::sqrt(norm2(deb[j])));
      plain_max = std::max(plain_max, std::sqrt(norm2(plain[j])));
    }
    MESSAGE("debiased " << deb_max << " plain " << plain_max);
    // x1 is exactly symmetric on a periodic grid.
    for (const auto& v : deb) CHECK(std::abs(v.x1) < 1e-12);
    CHECK(deb_max < 0.2 * plain_max);
  }
}

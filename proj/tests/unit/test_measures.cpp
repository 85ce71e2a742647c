#include <doctest.h>

#include <random>
#include <sstream>

#include <sgsw/error.hpp>
#include <sgsw/measures.hpp>

#include "fixtures.hpp"

using namespace sgsw;

TEST_SUITE("measures") {
  TEST_CASE("periodic cost examples") {
    const Domain d;
    CHECK(periodic_cost({0.9, 0.5}, {0.1, 0.5}, d) == doctest::Approx(0.04).epsilon(1e-14));
    CHECK(periodic_cost({0.3, 0.7}, {0.3, 0.7}, d) == 0.0);
    CHECK(periodic_cost({0.2, 0.1}, {0.4, 0.7}, d) == doctest::Approx(0.40).epsilon(1e-14));
  }

  TEST_CASE("periodic cost is symmetric and x1-translation invariant") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const Domain d;
    for (int k = 0; k < 1000; ++k) {
      const Point2 x{u(rng), u(rng)}, y{u(rng), u(rng)};
      const double c = periodic_cost(x, y, d);
      CHECK(c == doctest::Approx(periodic_cost(y, x, d)).epsilon(1e-15));
      const double s = 3.0 * u(rng) - 1.0;
      const Point2 xs = remap_periodic(Point2{x.x1 + s, x.x2}, d);
      const Point2 ys = remap_periodic(Point2{y.x1 + s, y.x2}, d);
      CHECK(periodic_cost(xs, ys, d) == doctest::Approx(c).epsilon(1e-12));
      // Never more than the unwrapped cost, never more than a half period in x1.
      CHECK(c <= norm2(y - x) + 1e-15);
      CHECK(c <= 0.25 + (y.x2 - x.x2) * (y.x2 - x.x2) + 1e-15);
    }
  }

  TEST_CASE("remap examples and idempotence") {
    const Domain d;
    const Point2 a = remap_periodic(Point2{1.3, 0.5}, d);
    CHECK(a.x1 == doctest::Approx(0.3));
    CHECK(a.x2 == 0.5);
    const Point2 b = remap_periodic(Point2{-0.1, 0.2}, d);
    CHECK(b.x1 == doctest::Approx(0.9));
    CHECK(b.x2 == 0.2);
    CHECK(remap_periodic(Point2{0.5, 0.5}, d) == Point2{0.5, 0.5});
    CHECK(remap_periodic(Point2{-1e-17, 0.5}, d).x1 < 1.0);

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (int k = 0; k < 200; ++k) {
      const Point2 p{u(rng), u(rng)};
      const Point2 once = remap_periodic(p, d);
      CHECK(once.x1 >= 0.0);
      CHECK(once.x1 < 1.0);
      CHECK(once.x2 == p.x2);
      CHECK(remap_periodic(once, d) == once);
    }
  }

  TEST_CASE("total mass") {
    const Grid g(4, 8);
    CHECK(total_mass(g.uniform_measure()) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(total_mass(DiscreteMeasure{}) == 0.0);
    CHECK(total_mass(DiscreteMeasure{{{0, 0}, {1, 1}}, {0.2, 0.3}}) == doctest::Approx(0.5));
  }

  TEST_CASE("grid nodes are cell centred inside the domain") {
    const Domain d{1.0, 0.0, 1.0};
    const Grid g(4, 5, d);
    CHECK(g.size() == 20);
    CHECK(g.node(g.index(0, 0)) == Point2{0.125, 0.1});
    CHECK(g.node(g.index(3, 4)).x1 == doctest::Approx(0.875));
    CHECK(g.node(g.index(3, 4)).x2 == doctest::Approx(0.9));
    for (const Point2& p : g.nodes()) {
      CHECK(p.x1 > 0.0);
      CHECK(p.x1 < 1.0);
      CHECK(p.x2 > 0.0);
      CHECK(p.x2 < 1.0);
    }
    CHECK(g.node(g.index(1, 0)).x1 - g.node(g.index(0, 0)).x1 == doctest::Approx(g.dx1()));
    CHECK_THROWS_AS(Grid(0, 3), ValidationError);
  }

  TEST_CASE("half-period offsets resolve to zero") {
    CHECK(image_offset(0.25, 0.75, 1.0) == 0.0);
    CHECK(image_offset(0.75, 0.25, 1.0) == 0.0);
    CHECK(image_offset(0.9, 0.1, 1.0) == doctest::Approx(0.2));
    CHECK(image_offset(0.1, 0.9, 1.0) == doctest::Approx(-0.2));
  }

  TEST_CASE("validation names the field") {
    Domain bad{1.0, 1.0, 0.5};
    try {
      bad.validate();
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      CHECK(e.field().find("x2") != std::string::npos);
    }
    DiscreteMeasure m{{{0.1, 0.1}}, {-1.0}};
    CHECK_THROWS_AS(m.validate(), ValidationError);
    DiscreteMeasure mismatch{{{0.1, 0.1}}, {}};
    CHECK_THROWS_AS(mismatch.validate(), ValidationError);
  }

  TEST_CASE("measure text round trip") {
    std::mt19937_64 rng(11);
    const auto m = fixture::random_measure(rng, 17, true);
    std::stringstream ss;
    write_measure(ss, m);
    const auto back = read_measure(ss);
    REQUIRE(back.size() == m.size());
    for (std::size_t i = 0; i < m.size(); ++i) {
      CHECK(back.points[i] == m.points[i]);
      CHECK(back.weights[i] == m.weights[i]);
    }
  }
}

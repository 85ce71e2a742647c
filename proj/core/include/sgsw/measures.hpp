#pragma once

#include <cmath>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

namespace sgsw {

struct Point2 {
  double x1 = 0.0;
  double x2 = 0.0;

  friend constexpr Point2 operator+(Point2 a, Point2 b) { return {a.x1 + b.x1, a.x2 + b.x2}; }
  friend constexpr Point2 operator-(Point2 a, Point2 b) { return {a.x1 - b.x1, a.x2 - b.x2}; }
  friend constexpr Point2 operator*(double s, Point2 a) { return {s * a.x1, s * a.x2}; }
  friend constexpr bool operator==(Point2, Point2) = default;
};

inline double norm2(Point2 v) { return v.x1 * v.x1 + v.x2 * v.x2; }

/// Channel [0, x1_period) x [x2_min, x2_max], periodic in x1 and walled in x2.
struct Domain {
  double x1_period = 1.0;
  double x2_min = 0.0;
  double x2_max = 1.0;

  /// Throws ValidationError when the extents are degenerate.
  void validate() const;
  double width() const { return x2_max - x2_min; }
};

/// Weighted point cloud. Weights are masses (not densities).
struct DiscreteMeasure {
  std::vector<Point2> points;
  std::vector<double> weights;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  /// Throws ValidationError unless lengths match and all weights are finite and >= 0.
  void validate() const;
};

/// Uniform cell-centred grid on a Domain: node (i1, i2) sits at
/// ((i1 + 1/2) L1 / n1, x2_min + (i2 + 1/2) L2 / n2). Flat index is i1 * n2 + i2.
class Grid {
 public:
  Grid(int n1, int n2, Domain domain = {});

  int n1() const { return n1_; }
  int n2() const { return n2_; }
  std::size_t size() const { return static_cast<std::size_t>(n1_) * static_cast<std::size_t>(n2_); }
  const Domain& domain() const { return domain_; }
  double dx1() const { return domain_.x1_period / n1_; }
  double dx2() const { return domain_.width() / n2_; }

  std::size_t index(int i1, int i2) const { return static_cast<std::size_t>(i1) * n2_ + i2; }
  Point2 node(std::size_t flat) const;
  std::vector<Point2> nodes() const;
  /// Nodes carrying uniform mass 1/N.
  DiscreteMeasure uniform_measure() const;

 private:
  int n1_;
  int n2_;
  Domain domain_;
};

/// Signed x1 offset from `from` to the nearest periodic image of `to`.
/// An exact half-period tie resolves to 0, the midpoint of the two images,
/// so averages of offsets stay symmetric.
inline double image_offset(double from, double to, double period) {
  double d = to - from;
  d -= period * std::nearbyint(d / period);
  if (std::abs(std::abs(d) - 0.5 * period) <= 1e-14 * period) return 0.0;
  return d;
}

/// Squared distance with the nearest of the x1 images {d, d + L, d - L}.
inline double periodic_cost(Point2 x, Point2 y, const Domain& domain) {
  double d1 = y.x1 - x.x1;
  d1 -= domain.x1_period * std::nearbyint(d1 / domain.x1_period);
  const double d2 = y.x2 - x.x2;
  return d1 * d1 + d2 * d2;
}

/// Displacement from x to the nearest image of y (x2 never wraps).
inline Point2 periodic_displacement(Point2 x, Point2 y, const Domain& domain) {
  return {image_offset(x.x1, y.x1, domain.x1_period), y.x2 - x.x2};
}

/// Shift x1 by whole periods into [0, period); x2 untouched.
inline Point2 remap_periodic(Point2 p, const Domain& domain) {
  const double L = domain.x1_period;
  double x = p.x1 - L * std::floor(p.x1 / L);
  if (x >= L) x -= L;  // -tiny + L rounds to L
  return {x, p.x2};
}

std::vector<Point2> remap_periodic(std::span<const Point2> points, const Domain& domain);
DiscreteMeasure remap_periodic(const DiscreteMeasure& m, const Domain& domain);

double total_mass(const DiscreteMeasure& m);
double total_mass(std::span<const double> weights);

/// Columnar text table "x1 x2 weight", one point per line, '#' comments.
void write_measure(std::ostream& os, const DiscreteMeasure& m);
DiscreteMeasure read_measure(std::istream& is);

}  // namespace sgsw

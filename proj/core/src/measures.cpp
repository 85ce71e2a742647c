#include "sgsw/measures.hpp"

#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "sgsw/error.hpp"

namespace sgsw {

void Domain::validate() const {
  if (!(x1_period > 0.0) || !std::isfinite(x1_period))
    throw ValidationError("domain.x1_period", "must be positive and finite");
  if (!(x2_min < x2_max) || !std::isfinite(x2_min) || !std::isfinite(x2_max))
    throw ValidationError("domain.x2_max", "must exceed x2_min");
}

void DiscreteMeasure::validate() const {
  if (points.size() != weights.size())
    throw ValidationError("measure", "points and weights differ in length");
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!std::isfinite(weights[i]) || weights[i] < 0.0)
      throw ValidationError("measure.weights", "weight " + std::to_string(i) + " is negative or not finite");
    if (!std::isfinite(points[i].x1) || !std::isfinite(points[i].x2))
      throw ValidationError("measure.points", "point " + std::to_string(i) + " is not finite");
  }
}

Grid::Grid(int n1, int n2, Domain domain) : n1_(n1), n2_(n2), domain_(domain) {
  if (n1 < 1) throw ValidationError("grid.n1", "must be >= 1");
  if (n2 < 1) throw ValidationError("grid.n2", "must be >= 1");
  domain_.validate();
}

Point2 Grid::node(std::size_t flat) const {
  const auto i1 = static_cast<double>(flat / static_cast<std::size_t>(n2_));
  const auto i2 = static_cast<double>(flat % static_cast<std::size_t>(n2_));
  return {(i1 + 0.5) * dx1(), domain_.x2_min + (i2 + 0.5) * dx2()};
}

std::vector<Point2> Grid::nodes() const {
  std::vector<Point2> out(size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = node(k);
  return out;
}

DiscreteMeasure Grid::uniform_measure() const {
  DiscreteMeasure m;
  m.points = nodes();
  m.weights.assign(size(), 1.0 / static_cast<double>(size()));
  return m;
}

std::vector<Point2> remap_periodic(std::span<const Point2> points, const Domain& domain) {
  std::vector<Point2> out(points.begin(), points.end());
  for (auto& p : out) p = remap_periodic(p, domain);
  return out;
}

DiscreteMeasure remap_periodic(const DiscreteMeasure& m, const Domain& domain) {
  return {remap_periodic(std::span<const Point2>(m.points), domain), m.weights};
}

double total_mass(std::span<const double> weights) {
  double s = 0.0;
  for (double w : weights) s += w;
  return s;
}

double total_mass(const DiscreteMeasure& m) { return total_mass(m.weights); }

void write_measure(std::ostream& os, const DiscreteMeasure& m) {
  const auto old = os.precision(17);
  os << "# x1 x2 weight\n";
  for (std::size_t i = 0; i < m.size(); ++i)
    os << m.points[i].x1 << ' ' << m.points[i].x2 << ' ' << m.weights[i] << '\n';
  os.precision(old);
}

DiscreteMeasure read_measure(std::istream& is) {
  DiscreteMeasure m;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    Point2 p;
    double w = 0.0;
    if (!(ls >> p.x1 >> p.x2 >> w)) throw ValidationError("measure", "malformed row: " + line);
    m.points.push_back(p);
    m.weights.push_back(w);
  }
  m.validate();
  return m;
}

}  // namespace sgsw

#include "fixtures.hpp"

#include <cstdlib>

namespace fixture {

sgsw::DiscreteMeasure random_measure(std::mt19937_64& rng, std::size_t n, bool random_weights) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  sgsw::DiscreteMeasure m;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    m.points.push_back({u(rng), u(rng)});
    m.weights.push_back(random_weights ? 0.5 + u(rng) : 1.0);
    total += m.weights.back();
  }
  for (double& w : m.weights) w /= total;
  return m;
}

sgsw::DiscreteMeasure dirac(sgsw::Point2 p, double mass) { return {{p}, {mass}}; }

std::filesystem::path scratch_dir(const std::string& name) {
  const char* env = std::getenv("SGSW_TEST_TMP");
  const auto base = env ? std::filesystem::path(env) : std::filesystem::temp_directory_path() / "sgsw-tests";
  const auto dir = base / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixture

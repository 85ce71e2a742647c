#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <sgsw/measures.hpp>

namespace fixture {

/// n points uniform in the unit channel; weights uniform (1/n) or random,
/// normalised to mass 1.
sgsw::DiscreteMeasure random_measure(std::mt19937_64& rng, std::size_t n, bool random_weights);

/// A single unit-mass point.
sgsw::DiscreteMeasure dirac(sgsw::Point2 p, double mass = 1.0);

/// Fresh scratch directory under SGSW_TEST_TMP (or the system temp dir).
std::filesystem::path scratch_dir(const std::string& name);

}  // namespace fixture

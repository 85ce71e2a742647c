#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "sgsw/measures.hpp"
#include "sgsw/parallel.hpp"

namespace sgsw {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Principal branch of the Lambert function: the w >= -1 with w e^w = z.
/// Halley iteration, relative accuracy ~1e-15. Throws DomainError for z < -1/e.
double lambert_w0(double z);

/// W0(exp(log_z)) without forming exp(log_z); finite for any finite log_z.
/// Large arguments are solved as w + log w = log_z by Newton.
double lambert_w0_from_log(double log_z);

/// log sum_i exp(logs[i] + log_weights[i]) with max subtraction. Exact -inf
/// when every term vanishes. Entries must not be +inf or NaN.
double logsumexp_weighted(std::span<const double> logs, std::span<const double> log_weights);

/// log sum_i w_i exp(potentials_over_eps[i] - c(X_i, target) / eps) over the
/// source measure, i.e. the log of the Gibbs-kernel integral at one target.
double kernel_logsumexp(Point2 target, const DiscreteMeasure& sources,
                        std::span<const double> potentials_over_eps, double eps, const Domain& domain);

/// Log of the non-negative weights; zero mass maps to -inf.
std::vector<double> log_weights(std::span<const double> weights);

namespace detail {

/// Solves A x = b in place (x returned in b) for a dense, row-major, symmetric
/// positive definite n x n matrix; A is overwritten by its Cholesky factor.
/// Returns false when a pivot is not positive.
bool cholesky_solve(std::vector<double>& a, std::vector<double>& b, std::size_t n);

/// out[j] = log sum_i exp(source_logs[i] - cost(i, j) / eps) for every target j.
/// Each target is reduced sequentially in source order (max pass, then sum of
/// shifted exponentials), so the result is independent of the thread count.
template <class CostFn>
void log_kernel_sums(std::size_t n_sources, std::span<const double> source_logs, std::size_t n_targets,
                     const CostFn& cost, double eps, std::span<double> out) {
  const double inv_eps = 1.0 / eps;
  parallel_for(n_targets, [&](std::size_t begin, std::size_t end) {
    std::vector<double> terms(n_sources);
    for (std::size_t j = begin; j < end; ++j) {
      double m = kNegInf;
      for (std::size_t i = 0; i < n_sources; ++i) {
        const double t = source_logs[i] - cost(i, j) * inv_eps;
        terms[i] = t;
        m = std::max(m, t);
      }
      if (m == kNegInf) {
        out[j] = kNegInf;
        continue;
      }
      double s = 0.0;
      for (std::size_t i = 0; i < n_sources; ++i) s += std::exp(terms[i] - m);
      out[j] = m + std::log(s);
    }
  });
}

}  // namespace detail

/// Bulk kernel reduction with the periodic channel cost:
/// out[j] = log sum_i exp(source_logs[i] - c(sources[i], targets[j]) / eps).
void log_kernel_sums(std::span<const Point2> sources, std::span<const double> source_logs,
                     std::span<const Point2> targets, double eps, const Domain& domain, std::span<double> out);

}  // namespace sgsw

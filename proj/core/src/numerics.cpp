#include "sgsw/numerics.hpp"

#include <numbers>
#include <string>

#include "sgsw/error.hpp"

namespace sgsw {
namespace {

constexpr double kInvE = 1.0 / std::numbers::e;

double initial_guess(double z) {
  if (z < -0.32) {
    // Expansion about the branch point z = -1/e.
    const double p = std::sqrt(std::max(0.0, 2.0 * (std::numbers::e * z + 1.0)));
    return -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p;
  }
  if (z < std::numbers::e) return std::log1p(z);
  const double l1 = std::log(z);
  const double l2 = std::log(l1);
  return l1 - l2 + l2 / l1;
}

}  // namespace

double lambert_w0(double z) {
  if (std::isnan(z) || z < -kInvE - 4.0 * std::numeric_limits<double>::epsilon())
    throw DomainError("lambert_w0: argument " + std::to_string(z) + " is below -1/e");
  if (z == 0.0) return 0.0;
  if (z <= -kInvE) return -1.0;
  if (std::isinf(z)) return z;
  if (z > 1e200) return lambert_w0_from_log(std::log(z));

  double w = initial_guess(z);
  for (int it = 0; it < 64; ++it) {
    const double ew = std::exp(w);
    const double f = w * ew - z;
    const double wp1 = w + 1.0;
    if (wp1 == 0.0) break;
    const double denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
    const double step = f / denom;
    w -= step;
    if (std::abs(step) <= 4.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(w))) break;
  }
  return w;
}

double lambert_w0_from_log(double log_z) {
  if (std::isnan(log_z)) throw DomainError("lambert_w0_from_log: NaN argument");
  if (log_z == kNegInf) return 0.0;
  if (log_z < 400.0) return lambert_w0(std::exp(log_z));
  // w + log(w) = L with w > 1: Newton is monotone from the asymptotic seed.
  double w = log_z - std::log(log_z);
  for (int it = 0; it < 32; ++it) {
    const double step = (w + std::log(w) - log_z) / (1.0 + 1.0 / w);
    w -= step;
    if (std::abs(step) <= 4.0 * std::numeric_limits<double>::epsilon() * w) break;
  }
  return w;
}

double logsumexp_weighted(std::span<const double> logs, std::span<const double> log_weights) {
  if (logs.size() != log_weights.size()) throw DomainError("logsumexp_weighted: length mismatch");
  double m = kNegInf;
  for (std::size_t i = 0; i < logs.size(); ++i) {
    const double t = logs[i] + log_weights[i];
    if (std::isnan(t) || t == std::numeric_limits<double>::infinity())
      throw DomainError("logsumexp_weighted: entry " + std::to_string(i) + " is NaN or +inf");
    m = std::max(m, t);
  }
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (std::size_t i = 0; i < logs.size(); ++i) s += std::exp(logs[i] + log_weights[i] - m);
  return m + std::log(s);
}

std::vector<double> log_weights(std::span<const double> weights) {
  std::vector<double> out(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) out[i] = weights[i] > 0.0 ? std::log(weights[i]) : kNegInf;
  return out;
}

double kernel_logsumexp(Point2 target, const DiscreteMeasure& sources,
                        std::span<const double> potentials_over_eps, double eps, const Domain& domain) {
  if (potentials_over_eps.size() != sources.size())
    throw DomainError("kernel_logsumexp: potentials and sources differ in length");
  std::vector<double> logs(sources.size());
  for (std::size_t i = 0; i < sources.size(); ++i)
    logs[i] = potentials_over_eps[i] - periodic_cost(sources.points[i], target, domain) / eps;
  return logsumexp_weighted(logs, log_weights(sources.weights));
}

void log_kernel_sums(std::span<const Point2> sources, std::span<const double> source_logs,
                     std::span<const Point2> targets, double eps, const Domain& domain, std::span<double> out) {
  detail::log_kernel_sums(
      sources.size(), source_logs, targets.size(),
      [&](std::size_t i, std::size_t j) { return periodic_cost(sources[i], targets[j], domain); }, eps, out);
}

bool detail::cholesky_solve(std::vector<double>& a, std::vector<double>& b, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) {
    double d = a[j * n + j];
    for (std::size_t k = 0; k < j; ++k) d -= a[j * n + k] * a[j * n + k];
    if (!(d > 0.0)) return false;
    d = std::sqrt(d);
    a[j * n + j] = d;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
      a[i * n + j] = s / d;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < i; ++k) b[i] -= a[i * n + k] * b[k];
    b[i] /= a[i * n + i];
  }
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t k = i + 1; k < n; ++k) b[i] -= a[k * n + i] * b[k];
    b[i] /= a[i * n + i];
  }
  return true;
}

}  // namespace sgsw

#pragma once

// Cost-generic Sinkhorn loops shared by the 2D solvers and the 4D phase-space
// diagnostics. `cost(i, j)` is the cost between point i of the first measure
// and point j of the second.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "sgsw/entropic_ot.hpp"
#include "sgsw/error.hpp"
#include "sgsw/numerics.hpp"

namespace sgsw::detail {

struct PotentialResult {
  std::vector<double> potential;
  SolveStats stats;
};

inline std::vector<double> plus_scaled(std::span<const double> log_w, std::span<const double> pot, double eps) {
  std::vector<double> out(log_w.begin(), log_w.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += pot[i] / eps;
  return out;
}

inline double sup_distance(std::span<const double> a, std::span<const double> b) {
  double r = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) r = std::max(r, std::abs(a[i] - b[i]));
  return r;
}

inline double mass(std::span<const double> w) {
  double s = 0.0;
  for (double v : w) s += v;
  return s;
}

/// T(p)_j = -eps log sum_i w_i e^{(p_i - c_ij)/eps}
template <class CostFn>
void symmetric_transform(std::span<const double> log_w, std::span<const double> pot, const CostFn& cost, double eps,
                         std::span<double> out) {
  log_kernel_sums(log_w.size(), plus_scaled(log_w, pot, eps), log_w.size(), cost, eps, out);
  for (double& v : out) v *= -eps;
}

template <class CostFn>
PotentialResult symmetric_sinkhorn(std::span<const double> weights, const CostFn& cost, double eps, double tol,
                                   int max_iters, std::span<const double> init = {}) {
  const auto log_w = log_weights(weights);
  const std::size_t n = weights.size();
  PotentialResult res;
  res.potential.assign(n, 0.0);
  if (init.size() == n) std::copy(init.begin(), init.end(), res.potential.begin());
  std::vector<double> t(n);
  for (int k = 0; k < max_iters; ++k) {
    symmetric_transform(log_w, res.potential, cost, eps, t);
    const double r = sup_distance(t, res.potential);
    if (!std::isfinite(r)) throw SolverError("symmetric_sinkhorn: potential became non-finite");
    res.stats.record(r);
    if (r < tol) {
      res.stats.converged = true;
      break;
    }
    for (std::size_t j = 0; j < n; ++j) res.potential[j] = 0.5 * (res.potential[j] + t[j]);
  }
  return res;
}

/// sum_ij a_i b_j e^{(f_i + g_j - c_ij)/eps}
template <class CostFn>
double coupling_total(std::span<const double> wa, std::span<const double> fa, std::span<const double> wb,
                      std::span<const double> gb, const CostFn& cost, double eps) {
  std::vector<double> col(wb.size());
  log_kernel_sums(wa.size(), plus_scaled(log_weights(wa), fa, eps), wb.size(), cost, eps, col);
  double s = 0.0;
  for (std::size_t j = 0; j < wb.size(); ++j)
    if (wb[j] > 0.0) s += wb[j] * std::exp(gb[j] / eps + col[j]);
  return s;
}

/// Problems up to this many points in total get a dense Newton polish when
/// Sinkhorn stalls (nearly decoupled clusters make its rate arbitrarily slow).
inline constexpr std::size_t kDenseNewtonLimit = 400;

/// Damped Newton ascent on the two-marginal dual
///   sum a f + sum b g - eps sum a_i b_j (e^{(f_i + g_j - c_ij)/eps} - 1)
/// over the points of positive mass, with the last such g held fixed.
template <class CostFn>
void newton_polish(std::span<const double> wa, std::span<const double> wb, const CostFn& cost, double eps,
                   std::vector<double>& f, std::vector<double>& g, int max_steps = 50) {
  std::vector<std::size_t> ia, ib;
  for (std::size_t i = 0; i < wa.size(); ++i)
    if (wa[i] > 0.0) ia.push_back(i);
  for (std::size_t j = 0; j < wb.size(); ++j)
    if (wb[j] > 0.0) ib.push_back(j);
  if (ia.empty() || ib.size() < 2) return;
  const std::size_t n = ia.size(), m = ib.size(), dim = n + m - 1;
  std::vector<double> c(n * m);
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t q = 0; q < m; ++q) c[p * m + q] = cost(ia[p], ib[q]);

  const auto value = [&](const std::vector<double>& ff, const std::vector<double>& gg) {
    double v = 0.0;
    for (std::size_t p = 0; p < n; ++p) v += wa[ia[p]] * ff[ia[p]];
    for (std::size_t q = 0; q < m; ++q) v += wb[ib[q]] * gg[ib[q]];
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = 0; q < m; ++q)
        v -= eps * wa[ia[p]] * wb[ib[q]] * std::expm1((ff[ia[p]] + gg[ib[q]] - c[p * m + q]) / eps);
    return v;
  };

  for (int step = 0; step < max_steps; ++step) {
    std::vector<double> grad(dim, 0.0), hess(dim * dim, 0.0);
    for (std::size_t p = 0; p < n; ++p) grad[p] = wa[ia[p]];
    for (std::size_t q = 0; q + 1 < m; ++q) grad[n + q] = wb[ib[q]];
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = 0; q < m; ++q) {
        const double pi = wa[ia[p]] * wb[ib[q]] * std::exp((f[ia[p]] + g[ib[q]] - c[p * m + q]) / eps);
        grad[p] -= pi;
        hess[p * dim + p] += pi / eps;
        if (q + 1 < m) {
          grad[n + q] -= pi;
          hess[(n + q) * dim + n + q] += pi / eps;
          hess[p * dim + n + q] += pi / eps;
          hess[(n + q) * dim + p] += pi / eps;
        }
      }
    double gnorm = 0.0;
    for (double v : grad) gnorm = std::max(gnorm, std::abs(v));
    if (!(gnorm > 1e-16)) return;
    std::vector<double> dir = grad;
    if (!cholesky_solve(hess, dir, dim)) return;
    const double v0 = value(f, g);
    double t = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 40 && !moved; ++ls, t *= 0.5) {
      auto nf = f;
      auto ng = g;
      for (std::size_t p = 0; p < n; ++p) nf[ia[p]] += t * dir[p];
      for (std::size_t q = 0; q + 1 < m; ++q) ng[ib[q]] += t * dir[n + q];
      if (value(nf, ng) >= v0) {
        f.swap(nf);
        g.swap(ng);
        moved = true;
      }
    }
    if (!moved) return;
  }
}

template <class CostFn>
double ot_eps_value(std::span<const double> wa, std::span<const double> wb, const CostFn& cost, double eps,
                    double tol, int max_iters) {
  if (!(eps > 0.0)) throw ValidationError("eps", "must be positive");
  const double ma = mass(wa), mb = mass(wb);
  if (!(ma > 0.0) || !(mb > 0.0)) throw ValidationError("measure", "total mass must be positive");
  if (std::abs(ma - mb) > 1e-12 * std::max(ma, mb))
    throw ValidationError("measure", "masses differ: " + std::to_string(ma) + " vs " + std::to_string(mb));

  const auto la = log_weights(wa), lb = log_weights(wb);
  std::vector<double> f(wa.size(), 0.0), g(wb.size(), 0.0), nf(wa.size()), ng(wb.size());
  const auto cost_t = [&](std::size_t j, std::size_t i) { return cost(i, j); };
  const auto sweep = [&] {
    log_kernel_sums(wa.size(), plus_scaled(la, f, eps), wb.size(), cost, eps, ng);
    for (double& v : ng) v *= -eps;
    log_kernel_sums(wb.size(), plus_scaled(lb, ng, eps), wa.size(), cost_t, eps, nf);
    for (double& v : nf) v *= -eps;
    const double r = std::max(sup_distance(nf, f), sup_distance(ng, g));
    if (!std::isfinite(r)) throw SolverError("ot_eps_value: potentials became non-finite");
    f.swap(nf);
    g.swap(ng);
    return r;
  };
  const bool dense = wa.size() + wb.size() <= kDenseNewtonLimit;
  const int before_polish = dense ? std::min(max_iters, 2000) : max_iters;
  bool converged = false;
  for (int k = 0; k < max_iters && !converged; ++k) {
    if (dense && k == before_polish) newton_polish(wa, wb, cost, eps, f, g);
    converged = sweep() < tol;
  }
  if (!converged) throw SolverError("ot_eps_value: Sinkhorn did not converge");

  double v = 0.0;
  for (std::size_t i = 0; i < wa.size(); ++i) v += wa[i] * f[i];
  for (std::size_t j = 0; j < wb.size(); ++j) v += wb[j] * g[j];
  return v - eps * (coupling_total(wa, f, wb, g, cost, eps) - ma * mb);
}

template <class CostFn>
double ot_eps_self_value(std::span<const double> w, const CostFn& cost, double eps, double tol, int max_iters) {
  if (!(eps > 0.0)) throw ValidationError("eps", "must be positive");
  const double m = mass(w);
  if (!(m > 0.0)) throw ValidationError("measure", "total mass must be positive");
  auto res = symmetric_sinkhorn(w, cost, eps, tol, max_iters);
  if (!res.stats.converged) throw SolverError("ot_eps_self_value: symmetric Sinkhorn did not converge");
  double v = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) v += 2.0 * w[i] * res.potential[i];
  return v - eps * (coupling_total(w, res.potential, w, res.potential, cost, eps) - m * m);
}

}  // namespace sgsw::detail

#pragma once

// Particle dynamics under repeated differentiation: 2N roots wait a time
// 1/(2N) and then jump to the roots of the derivative. Particle i at step k+1
// is the derivative root in (x_i, x_{i+1}) of the step-k configuration.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/math/tools/roots.hpp>

#include "rootflow/circle_measures.hpp"
#include "rootflow/error.hpp"
#include "rootflow/parallel.hpp"
#include "rootflow/trig_roots.hpp"

namespace rootflow {

struct FlowTrajectory {
  std::vector<ParticleConfig> configs;  // configs[k] at time k / (2N)
  int N = 0;
  std::string origin;

  double time(std::size_t k) const { return static_cast<double>(k) / (2.0 * N); }
};

/// 2N particles at the quantile levels (i + 1/2) / (2N) of mu, read from its
/// CDF on a grid of `grid` nodes. Coincident quantiles become multiplicities.
inline ParticleConfig init_from_measure(const CircleMeasure& mu, int N, std::size_t grid = 4096) {
  detail::require(N >= 1, ErrorKind::Config, "N must be at least 1");
  auto F = cdf_from_measure(mu, grid);
  std::vector<double> xs(2 * static_cast<std::size_t>(N));
  for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = quantile(F, (static_cast<double>(i) + 0.5) / (2.0 * N));
  return ParticleConfig::from_positions(xs, 0.0);
}

/// Same placement for a continuous strictly increasing CDF given as a callable
/// on [0, 2pi] with cdf(0) = 0 and cdf(2pi) = 1; levels are solved to full
/// precision.
template <class Cdf>
  requires std::invocable<Cdf, double>
ParticleConfig init_from_cdf(Cdf&& cdf, int N) {
  detail::require(N >= 1, ErrorKind::Config, "N must be at least 1");
  std::vector<double> xs(2 * static_cast<std::size_t>(N));
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double level = (static_cast<double>(i) + 0.5) / (2.0 * N);
    auto f = [&](double x) { return cdf(x) - level; };
    std::uintmax_t iters = 200;
    auto [lo, hi] = boost::math::tools::toms748_solve(f, 0.0, kTwoPi, f(0.0), f(kTwoPi),
                                                      boost::math::tools::eps_tolerance<double>(52), iters);
    xs[i] = 0.5 * (lo + hi);
  }
  return ParticleConfig::from_positions(xs, 0.0);
}

/// k derivative steps. Solver failures are re-raised with the step index.
inline FlowTrajectory evolve(const ParticleConfig& start, std::size_t steps, std::string origin = "explicit roots") {
  FlowTrajectory tr;
  tr.N = start.half_count();
  tr.origin = std::move(origin);
  tr.configs.reserve(steps + 1);
  tr.configs.push_back(start);
  for (std::size_t k = 0; k < steps; ++k) {
    try {
      tr.configs.push_back(derivative_roots(tr.configs.back()));
    } catch (const Error& e) {
      detail::fail(e.kind(), "step " + std::to_string(k + 1) + ": " + e.what());
    }
  }
  return tr;
}

/// CDF of (1/2N) sum_i delta_{x_i} on M nodes, read off the lifted
/// positions: F(theta) = k / (2N) with k the smallest periodised index such
/// that x_k > theta. Positions in [0, 2pi) give the plain count of particles
/// at or before theta; particles carried past 2pi by the flow lower F, as
/// the translating solution F0(theta - pi t) does.
inline CdfField empirical_cdf(const ParticleConfig& config, std::size_t M) {
  detail::require(M >= 2, ErrorKind::Config, "grid size must be at least 2");
  const auto flat = config.flattened();
  const long n = static_cast<long>(flat.size());
  const double total = static_cast<double>(n);
  auto count_at = [&](double theta) {
    double q = std::floor((theta - flat.front()) / kTwoPi);
    double r = theta - kTwoPi * q;
    long idx = std::upper_bound(flat.begin(), flat.end(), r) - flat.begin();
    return static_cast<long>(q) * n + idx;
  };
  std::vector<double> g(M), jumps(M);
  long prev = count_at(grid_node(-1, M));
  for (std::size_t j = 0; j < M; ++j) {
    long c = count_at(grid_node(static_cast<long>(j), M));
    g[j] = static_cast<double>(c) / total - static_cast<double>(j) / static_cast<double>(M);
    jumps[j] = static_cast<double>(c - prev) / total;
    prev = c;
  }
  const double h = kTwoPi / static_cast<double>(M);
  double snap = 0.0;
  for (double x : flat) snap = std::max(snap, std::ceil(x / h) * h - x);
  return CdfField(std::move(g), std::move(jumps), snap);
}

struct ComparisonResult {
  bool precondition_met = false;     // x_i <= y_i for all i
  bool holds = false;                // x'_i <= y'_i + tol for all i
  std::optional<std::size_t> violating_index;
  double max_violation = 0.0;        // max_i (x'_i - y'_i), may be negative
  std::vector<double> x_prime;       // flattened derivative roots
  std::vector<double> y_prime;
};

/// Checks the periodic discrete comparison principle on one ordered pair.
inline ComparisonResult discrete_comparison_check(const ParticleConfig& x, const ParticleConfig& y, double tol = 1e-10) {
  detail::require(x.total_count() == y.total_count(), ErrorKind::Shape, "comparison needs equal particle counts");
  ComparisonResult res;
  const auto xs = x.flattened();
  const auto ys = y.flattened();
  res.precondition_met = true;
  for (std::size_t i = 0; i < xs.size(); ++i)
    if (xs[i] > ys[i]) res.precondition_met = false;
  if (!res.precondition_met) return res;
  res.x_prime = derivative_roots(x).flattened();
  res.y_prime = derivative_roots(y).flattened();
  res.max_violation = -std::numeric_limits<double>::infinity();
  res.holds = true;
  for (std::size_t i = 0; i < res.x_prime.size(); ++i) {
    double v = res.x_prime[i] - res.y_prime[i];
    res.max_violation = std::max(res.max_violation, v);
    if (v > tol && res.holds) {
      res.holds = false;
      res.violating_index = i;
    }
  }
  return res;
}

struct GapDiagnostics {
  int N = 0;
  std::vector<double> gaps;            // x_{j+1} - x_j
  std::vector<double> error_terms;     // V_j = gap_j - 1 / (2N psi(x_j))
  std::vector<double> spacing_ratio;   // 2N psi(x_j) gap_j
  std::vector<double> displacement_rate;  // (x'_j - x_j) * 2N, when a step was taken
  double max_abs_error_term = 0.0;
  double ratio_min = 0.0;
  double ratio_max = 0.0;
  double min_step = 0.0;
  double max_step = 0.0;
  double k_constant = 0.0;  // smallest K with 1/(KN) <= steps <= K/N
};

/// Spacing errors against a reference density psi (callable on angles).
/// With with_step, also takes one derivative step and records displacements.
template <class Density>
  requires std::invocable<Density, double>
GapDiagnostics gap_diagnostics(const ParticleConfig& config, Density&& psi, bool with_step = false) {
  GapDiagnostics d;
  d.N = config.half_count();
  const auto x = config.flattened();
  const std::size_t n = x.size();
  const double twoN = static_cast<double>(n);
  d.gaps.resize(n);
  d.error_terms.resize(n);
  d.spacing_ratio.resize(n);
  parallel_for(n, [&](std::size_t j) {
    double p = psi(wrap_angle(x[j]));
    detail::require(std::isfinite(p) && p > 0.0, ErrorKind::Config, "reference density must be positive");
    double gap = (j + 1 < n ? x[j + 1] : x[0] + kTwoPi) - x[j];
    d.gaps[j] = gap;
    d.error_terms[j] = gap - 1.0 / (twoN * p);
    d.spacing_ratio[j] = twoN * p * gap;
  }, 256);
  for (std::size_t j = 0; j < n; ++j) d.max_abs_error_term = std::max(d.max_abs_error_term, std::abs(d.error_terms[j]));
  auto [lo, hi] = std::minmax_element(d.spacing_ratio.begin(), d.spacing_ratio.end());
  d.ratio_min = *lo;
  d.ratio_max = *hi;
  if (with_step) {
    const auto xp = derivative_roots(config).flattened();
    d.displacement_rate.resize(n);
    d.min_step = std::numeric_limits<double>::infinity();
    d.max_step = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double s = xp[j] - x[j];
      d.displacement_rate[j] = s * twoN;
      d.min_step = std::min(d.min_step, s);
      d.max_step = std::max(d.max_step, s);
    }
    const double Nd = d.N;
    d.k_constant = std::max(Nd * d.max_step, 1.0 / (Nd * d.min_step));
  }
  return d;
}

/// Same, with psi given as samples on a uniform grid (linear interpolation).
inline GapDiagnostics gap_diagnostics(const ParticleConfig& config, std::span<const double> psi_samples,
                                      bool with_step = false) {
  detail::require(psi_samples.size() >= 2, ErrorKind::Config, "reference density needs samples");
  for (double v : psi_samples)
    detail::require(std::isfinite(v) && v > 0.0, ErrorKind::Config, "reference density must be positive");
  const std::size_t M = psi_samples.size();
  auto interp = [&](double th) {
    double u = wrap_angle(th) / (kTwoPi / static_cast<double>(M));
    auto k = std::min(static_cast<std::size_t>(u), M - 1);
    double w = u - static_cast<double>(k);
    return (1.0 - w) * psi_samples[k] + w * psi_samples[(k + 1) % M];
  };
  return gap_diagnostics(config, interp, with_step);
}

struct SpeedResidualStats {
  double mean_residual = 0.0;
  double max_residual = 0.0;
  std::size_t included = 0;
  std::size_t excluded = 0;
  std::vector<double> residuals;  // per flattened particle; NaN when excluded
  std::vector<double> predicted;
  std::vector<double> actual;
};

/// Compares the one-step displacement of each particle with
///
///   (arctan(H[u]/u) + pi/2) / (2 pi N u),
///
/// where u(x_i) = 1 / (N (x_{i+1} - x_{i-1})) and H[u](x_i) is the empirical
/// periodic Hilbert transform (1/2pi)(1/2N) sum_{k != i} cot((x_i - x_k)/2).
/// Particles with multiplicity or an adjacent gap below
/// degenerate_ratio * pi / N are excluded.
inline SpeedResidualStats speed_vs_heuristic(const ParticleConfig& config, double degenerate_ratio = 1e-3) {
  const auto x = config.flattened();
  const auto mult = config.flattened_mult();
  const std::size_t n = x.size();
  const double N = config.half_count();
  const double min_gap = degenerate_ratio * kPi / N;
  const auto xp = derivative_roots(config).flattened();

  SpeedResidualStats st;
  st.residuals.assign(n, std::numeric_limits<double>::quiet_NaN());
  st.predicted.assign(n, std::numeric_limits<double>::quiet_NaN());
  st.actual.resize(n);
  for (std::size_t i = 0; i < n; ++i) st.actual[i] = xp[i] - x[i];

  std::vector<char> keep(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    double left = x[i] - config.periodized(static_cast<long>(i) - 1, x);
    double right = config.periodized(static_cast<long>(i) + 1, x) - x[i];
    keep[i] = mult[i] == 1 && left >= min_gap && right >= min_gap;
  }
  parallel_for(n, [&](std::size_t i) {
    if (!keep[i]) return;
    double span = config.periodized(static_cast<long>(i) + 1, x) - config.periodized(static_cast<long>(i) - 1, x);
    double u = 1.0 / (N * span);
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      if (k == i) continue;
      s += detail::half_cot(periodic_offset(x[i] - x[k]));
    }
    double hu = s / (kTwoPi * 2.0 * N);
    double pred = std::atan2(u, -hu) / (kTwoPi * N * u);
    st.predicted[i] = pred;
    st.residuals[i] = std::abs(st.actual[i] - pred) / st.actual[i];
  }, 64);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!keep[i]) {
      ++st.excluded;
      continue;
    }
    ++st.included;
    sum += st.residuals[i];
    st.max_residual = std::max(st.max_residual, st.residuals[i]);
  }
  st.mean_residual = st.included ? sum / static_cast<double>(st.included) : std::numeric_limits<double>::quiet_NaN();
  return st;
}

}  // namespace rootflow

#pragma once

// Probability measures on the circle T = R / 2piZ and their cumulative
// distribution functions.
//
// A CDF is stored as F(theta) = theta / 2pi + g(theta) with g sampled on the
// uniform grid theta_j = 2 pi j / M. The unit ramp carries the period jump, so
// F(theta + 2pi) = F(theta) + 1 holds by construction.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/quadrature/tanh_sinh.hpp>

#include "rootflow/error.hpp"

namespace rootflow {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Tolerance on the total mass of a probability measure.
inline constexpr double kMassTolerance = 1e-12;
/// Slack allowed when checking that a sampled CDF is non-decreasing.
inline constexpr double kMonotoneSlack = 1e-12;

/// Grid node theta_j = 2 pi j / M. Every module uses this exact expression so
/// that nodes compare bitwise across modules.
inline double grid_node(long j, std::size_t M) { return kTwoPi * static_cast<double>(j) / static_cast<double>(M); }

/// Representative of x modulo 2pi in [0, 2pi).
inline double wrap_angle(double x) {
  double r = x - kTwoPi * std::floor(x / kTwoPi);
  return r >= kTwoPi ? 0.0 : r;
}

/// Signed periodic offset in [-pi, pi].
inline double periodic_offset(double x) { return std::remainder(x, kTwoPi); }

struct Atom {
  double theta = 0.0;
  double weight = 0.0;
};

/// Probability measure on the circle made of point masses plus an optional
/// density sampled on a uniform grid (piecewise-linear between samples).
class CircleMeasure {
 public:
  CircleMeasure(std::vector<Atom> atoms, std::vector<double> density = {}) : density_(std::move(density)) {
    for (auto& a : atoms) {
      detail::require(std::isfinite(a.theta) && std::isfinite(a.weight), ErrorKind::InvalidMeasure,
                      "non-finite atom");
      detail::require(a.weight >= 0.0, ErrorKind::InvalidMeasure, "negative atom weight");
      a.theta = wrap_angle(a.theta);
    }
    std::sort(atoms.begin(), atoms.end(), [](const Atom& l, const Atom& r) { return l.theta < r.theta; });
    for (const auto& a : atoms) {
      if (a.weight == 0.0) continue;
      if (!atoms_.empty() && atoms_.back().theta == a.theta)
        atoms_.back().weight += a.weight;
      else
        atoms_.push_back(a);
    }
    if (!density_.empty()) {
      detail::require(density_.size() >= 2, ErrorKind::InvalidMeasure, "density needs at least two samples");
      for (double v : density_)
        detail::require(std::isfinite(v) && v >= 0.0, ErrorKind::InvalidMeasure, "density samples must be >= 0");
      const std::size_t M = density_.size();
      const double h = kTwoPi / static_cast<double>(M);
      cumulative_.assign(M + 1, 0.0);
      for (std::size_t i = 0; i < M; ++i)
        cumulative_[i + 1] = cumulative_[i] + 0.5 * h * (density_[i] + density_[(i + 1) % M]);
    }
    const double total = mass();
    detail::require(std::abs(total - 1.0) <= kMassTolerance, ErrorKind::InvalidMeasure,
                    "total mass " + std::to_string(total) + " differs from 1");
  }

  static CircleMeasure uniform(std::size_t M = 8) { return {{}, std::vector<double>(M, 1.0 / kTwoPi)}; }

  static CircleMeasure dirac(double theta = 0.0) { return {{{theta, 1.0}}}; }

  /// Samples rho on M nodes; rho must already integrate to one under the
  /// periodic trapezoid rule.
  template <class Density>
  static CircleMeasure from_density(Density&& rho, std::size_t M) {
    std::vector<double> s(M);
    for (std::size_t j = 0; j < M; ++j) s[j] = rho(grid_node(static_cast<long>(j), M));
    return {{}, std::move(s)};
  }

  const std::vector<Atom>& atoms() const { return atoms_; }
  const std::vector<double>& density() const { return density_; }
  bool has_density() const { return !density_.empty(); }

  double atom_mass() const {
    double s = 0.0;
    for (const auto& a : atoms_) s += a.weight;
    return s;
  }
  double density_mass() const { return cumulative_.empty() ? 0.0 : cumulative_.back(); }
  double mass() const { return atom_mass() + density_mass(); }

  /// Piecewise-linear density value at an arbitrary angle.
  double density_at(double theta) const {
    if (density_.empty()) return 0.0;
    const std::size_t M = density_.size();
    const double h = kTwoPi / static_cast<double>(M);
    double x = wrap_angle(theta) / h;
    auto k = std::min(static_cast<std::size_t>(x), M - 1);
    double w = x - static_cast<double>(k);
    return (1.0 - w) * density_[k] + w * density_[(k + 1) % M];
  }

  /// Integral of the density over [0, theta], theta in [0, 2pi].
  double density_integral(double theta) const {
    if (density_.empty()) return 0.0;
    const std::size_t M = density_.size();
    const double h = kTwoPi / static_cast<double>(M);
    theta = std::clamp(theta, 0.0, kTwoPi);
    auto k = std::min(static_cast<std::size_t>(theta / h), M);
    if (k == M) return cumulative_[M];
    double s = theta - static_cast<double>(k) * h;
    double f0 = density_[k];
    double f1 = density_[(k + 1) % M];
    return cumulative_[k] + f0 * s + 0.5 * (f1 - f0) * s * s / h;
  }

  /// Pushes the measure forward by theta -> theta + a. Densities are shifted
  /// by index when a is a multiple of the grid spacing, otherwise linearly
  /// interpolated (which keeps the trapezoid mass).
  CircleMeasure rotated(double a) const {
    std::vector<Atom> atoms = atoms_;
    for (auto& at : atoms) at.theta = wrap_angle(at.theta + a);
    std::vector<double> dens;
    if (!density_.empty()) {
      const std::size_t M = density_.size();
      const double h = kTwoPi / static_cast<double>(M);
      double steps = a / h;
      double rounded = std::round(steps);
      dens.resize(M);
      if (std::abs(steps - rounded) < 1e-9) {
        auto s = static_cast<long>(rounded);
        auto Ml = static_cast<long>(M);
        for (long j = 0; j < Ml; ++j) dens[static_cast<std::size_t>(j)] = density_[static_cast<std::size_t>(((j - s) % Ml + Ml) % Ml)];
      } else {
        for (std::size_t j = 0; j < M; ++j) dens[j] = density_at(grid_node(static_cast<long>(j), M) - a);
      }
    }
    return {std::move(atoms), std::move(dens)};
  }

 private:
  std::vector<Atom> atoms_;
  std::vector<double> density_;
  std::vector<double> cumulative_;
};

/// Right-continuous CDF sampled on a uniform grid, stored as unit ramp plus
/// periodic remainder. Optional per-node atom masses record where jumps were
/// snapped, so left limits at nodes are available.
class CdfField {
 public:
  explicit CdfField(std::vector<double> periodic, std::vector<double> atom_mass = {}, double snap_error = 0.0)
      : periodic_(std::move(periodic)), atom_mass_(std::move(atom_mass)), snap_error_(snap_error) {
    detail::require(periodic_.size() >= 2, ErrorKind::Config, "CdfField needs at least two nodes");
    detail::require(atom_mass_.empty() || atom_mass_.size() == periodic_.size(), ErrorKind::Shape,
                    "atom mass array does not match grid");
    for (double v : periodic_) detail::require(std::isfinite(v), ErrorKind::InvalidMeasure, "non-finite CDF sample");
    const long M = static_cast<long>(size());
    for (long j = 0; j < M; ++j)
      detail::require(value(j + 1) >= value(j) - kMonotoneSlack, ErrorKind::InvalidMeasure,
                      "CDF decreases at node " + std::to_string(j));
  }

  /// Builds the field from F(theta_j), j = 0..M-1.
  static CdfField from_values(std::span<const double> values) {
    const std::size_t M = values.size();
    std::vector<double> g(M);
    for (std::size_t j = 0; j < M; ++j) g[j] = values[j] - static_cast<double>(j) / static_cast<double>(M);
    return CdfField(std::move(g));
  }

  static CdfField ramp(std::size_t M) { return CdfField(std::vector<double>(M, 0.0)); }

  std::size_t size() const { return periodic_.size(); }
  double spacing() const { return kTwoPi / static_cast<double>(size()); }
  double node(long j) const { return grid_node(j, size()); }

  const std::vector<double>& periodic() const { return periodic_; }
  const std::vector<double>& atom_mass() const { return atom_mass_; }
  double snap_error() const { return snap_error_; }

  /// F(theta_j) for any integer j, using F(theta + 2pi) = F(theta) + 1.
  double value(long j) const {
    const long M = static_cast<long>(size());
    long q = j >= 0 ? j / M : -((-j + M - 1) / M);
    long r = j - q * M;
    return static_cast<double>(q) + static_cast<double>(r) / static_cast<double>(M) + periodic_[static_cast<std::size_t>(r)];
  }

  double left_limit(long j) const {
    if (atom_mass_.empty()) return value(j);
    const long M = static_cast<long>(size());
    long r = ((j % M) + M) % M;
    return value(j) - atom_mass_[static_cast<std::size_t>(r)];
  }

  /// Forward difference slope (F(theta_{j+1}) - F(theta_j)) / dtheta.
  double slope(long j) const { return (value(j + 1) - value(j)) / spacing(); }

  double min_slope() const {
    double s = slope(0);
    for (long j = 1; j < static_cast<long>(size()); ++j) s = std::min(s, slope(j));
    return s;
  }

  std::vector<double> values() const {
    std::vector<double> v(size());
    for (std::size_t j = 0; j < size(); ++j) v[j] = value(static_cast<long>(j));
    return v;
  }

  /// Evaluation between nodes: linear from F(theta_j) to the left limit at
  /// theta_{j+1}; right-continuous at nodes.
  double operator()(double theta) const {
    double x = theta / spacing();
    double fl = std::floor(x);
    auto j = static_cast<long>(fl);
    double w = x - fl;
    if (w == 0.0) return value(j);
    return (1.0 - w) * value(j) + w * left_limit(j + 1);
  }

  /// Subsamples onto a coarser grid whose size divides this one.
  CdfField restricted(std::size_t coarse) const {
    detail::require(coarse >= 2 && size() % coarse == 0, ErrorKind::Shape, "coarse grid must divide the fine grid");
    const std::size_t stride = size() / coarse;
    std::vector<double> g(coarse);
    for (std::size_t j = 0; j < coarse; ++j) g[j] = periodic_[j * stride];
    return CdfField(std::move(g));
  }

 private:
  std::vector<double> periodic_;
  std::vector<double> atom_mass_;
  double snap_error_;
};

struct HmCertificate {
  double m = 0.0;
  bool satisfied = false;
  double theta = 0.0;          // left end of the worst pair
  double theta_plus_h = 0.0;   // right end of the worst pair
  double slope = 0.0;          // (F(theta + h) - F(theta)) / h on the worst pair
};

/// CDF of mu on M nodes. Atoms jump at the first node >= their position
/// (right-continuous); the largest displacement is kept as snap_error.
inline CdfField cdf_from_measure(const CircleMeasure& mu, std::size_t M) {
  detail::require(M >= 8, ErrorKind::Config, "grid size must be at least 8");
  const double h = kTwoPi / static_cast<double>(M);
  std::vector<double> jumps(M, 0.0);
  double snap = 0.0;
  for (const auto& a : mu.atoms()) {
    auto idx = static_cast<std::size_t>(std::ceil(a.theta / h - 1e-9));
    snap = std::max(snap, std::max(0.0, grid_node(static_cast<long>(idx), M) - a.theta));
    if (idx >= M) idx = 0;
    jumps[idx] += a.weight;
  }
  std::vector<double> g(M);
  double atoms_so_far = 0.0;
  for (std::size_t j = 0; j < M; ++j) {
    atoms_so_far += jumps[j];
    double theta = grid_node(static_cast<long>(j), M);
    g[j] = mu.density_integral(theta) + atoms_so_far - static_cast<double>(j) / static_cast<double>(M);
  }
  return CdfField(std::move(g), std::move(jumps), snap);
}

/// Generalised inverse inf{theta in [0, 2pi) : F(theta) >= p}.
inline double quantile(const CdfField& F, double p) {
  detail::require(p >= 0.0 && p < 1.0, ErrorKind::Domain, "quantile level must lie in [0, 1)");
  const long M = static_cast<long>(F.size());
  if (F.value(0) >= p) return 0.0;
  long j = 1;
  while (j < M && F.value(j) < p) ++j;
  double prev = F.value(j - 1);
  double left = F.left_limit(j);
  if (left >= p && left > prev) {
    double w = (p - prev) / (left - prev);
    return wrap_angle(F.node(j - 1) + w * F.spacing());
  }
  return wrap_angle(F.node(j));
}

/// Checks F(theta + h) - F(theta) >= m h over all grid pairs. The slope over a
/// pair is the mean of the adjacent slopes it spans, so the minimum over all
/// pairs (wrap included) is attained at adjacent nodes.
inline HmCertificate check_Hm(const CdfField& F, double m) {
  detail::require(m > 0.0 && std::isfinite(m), ErrorKind::Config, "H_m floor must be positive");
  HmCertificate c;
  c.m = m;
  c.slope = F.slope(0);
  long worst = 0;
  for (long j = 1; j < static_cast<long>(F.size()); ++j) {
    double s = F.slope(j);
    if (s < c.slope) {
      c.slope = s;
      worst = j;
    }
  }
  c.theta = F.node(worst);
  c.theta_plus_h = F.node(worst + 1);
  c.satisfied = c.slope >= m - 1e-10;
  return c;
}

namespace detail {

inline double bump_normalizer() {
  static const double c = [] {
    boost::math::quadrature::tanh_sinh<double> integrator;
    return integrator.integrate([](double x) {
      double d = 1.0 - x * x;
      return d <= 0.0 ? 0.0 : std::exp(-1.0 / d);
    }, -1.0, 1.0);
  }();
  return c;
}

}  // namespace detail

/// The normalised bump rho_eps(t) = exp(-1 / (1 - (t/eps)^2)) / (eps C),
/// supported in (-eps, eps); t is taken modulo 2pi.
inline double mollifier(double t, double eps) {
  double x = periodic_offset(t) / eps;
  double d = 1.0 - x * x;
  if (d <= 0.0) return 0.0;
  return std::exp(-1.0 / d) / (eps * detail::bump_normalizer());
}

/// mu * rho_eps as a density-only measure. The output grid is the input
/// density grid when there is one, grid_size otherwise. Each sampled kernel is
/// renormalised to unit trapezoid mass so the total mass is preserved exactly.
inline CircleMeasure mollify(const CircleMeasure& mu, double eps, std::size_t grid_size = 1024) {
  detail::require(eps > 0.0 && eps < kPi, ErrorKind::Config, "mollifier radius must lie in (0, pi)");
  const std::size_t M = mu.has_density() ? mu.density().size() : grid_size;
  detail::require(M >= 8, ErrorKind::Config, "grid size must be at least 8");
  const double h = kTwoPi / static_cast<double>(M);
  std::vector<double> out(M, 0.0);

  auto sampled_kernel = [&](double centre) {
    std::vector<double> k(M);
    double total = 0.0;
    for (std::size_t j = 0; j < M; ++j) {
      k[j] = mollifier(grid_node(static_cast<long>(j), M) - centre, eps);
      total += k[j] * h;
    }
    detail::require(total > 0.0, ErrorKind::Config, "mollifier radius below grid resolution");
    for (double& v : k) v /= total;
    return k;
  };

  for (const auto& a : mu.atoms()) {
    auto k = sampled_kernel(a.theta);
    for (std::size_t j = 0; j < M; ++j) out[j] += a.weight * k[j];
  }
  if (mu.has_density()) {
    auto k = sampled_kernel(0.0);  // circulant: k[(j - i) mod M]
    const auto& f = mu.density();
    for (std::size_t i = 0; i < M; ++i) {
      if (f[i] == 0.0) continue;
      for (std::size_t j = 0; j < M; ++j) out[j] += f[i] * k[(j + M - i) % M] * h;
    }
  }
  return {{}, std::move(out)};
}

/// max_j |F(theta_j) - G(theta_j)|.
inline double sup_distance(const CdfField& F, const CdfField& G) {
  detail::require(F.size() == G.size(), ErrorKind::Shape, "CDF grids differ in size");
  double d = 0.0;
  for (std::size_t j = 0; j < F.size(); ++j) d = std::max(d, std::abs(F.periodic()[j] - G.periodic()[j]));
  return d;
}

}  // namespace rootflow

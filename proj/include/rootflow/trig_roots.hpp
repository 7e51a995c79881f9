#pragma once

// Real trigonometric polynomials in factored form
//
//   p(x) = prod_j sin((x - x_j) / 2)^{mult_j},
//
// whose logarithmic derivative is the cotangent sum
//
//   p'(x) / p(x) = 1/2 sum_j mult_j cot((x - x_j) / 2).
//
// Differentiation keeps the number of roots on the circle: a root of
// multiplicity a stays with multiplicity a - 1, and every gap between
// consecutive distinct roots (period wrap included) gains one simple root.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "rootflow/circle_measures.hpp"
#include "rootflow/error.hpp"
#include "rootflow/parallel.hpp"

namespace rootflow {

/// Roots closer than this are merged into one root with multiplicity.
inline constexpr double kMergeRadius = 1e-10;
/// Absolute accuracy of derivative roots.
inline constexpr double kRootTolerance = 1e-12;

struct Root {
  double theta = 0.0;
  int mult = 1;
};

/// Sorted root multiset on one lifted period [anchor, anchor + 2pi). Positions
/// are kept as real lifts (not reduced modulo 2pi) so that trajectories can be
/// compared index by index across steps.
class ParticleConfig {
 public:
  ParticleConfig(double anchor, std::vector<Root> roots) : anchor_(anchor), roots_(std::move(roots)) {
    detail::require(std::isfinite(anchor_), ErrorKind::Config, "non-finite anchor");
    detail::require(!roots_.empty(), ErrorKind::Config, "configuration has no roots");
    total_ = 0;
    for (std::size_t i = 0; i < roots_.size(); ++i) {
      const auto& r = roots_[i];
      detail::require(r.mult >= 1, ErrorKind::Config, "multiplicity must be positive");
      detail::require(r.theta >= anchor_ && r.theta < anchor_ + kTwoPi, ErrorKind::Config,
                      "root outside [anchor, anchor + 2pi)");
      detail::require(i == 0 || roots_[i - 1].theta < r.theta, ErrorKind::Config, "roots must be strictly increasing");
      total_ += r.mult;
    }
    detail::require(total_ >= 2 && total_ % 2 == 0, ErrorKind::Config, "total root count must be even and >= 2");
  }

  /// Wraps raw positions into [anchor, anchor + 2pi), sorts them and merges
  /// anything closer than merge_radius (across the wrap too).
  static ParticleConfig from_positions(std::span<const double> xs, double anchor = 0.0,
                                       double merge_radius = kMergeRadius) {
    std::vector<double> w(xs.begin(), xs.end());
    for (double& x : w) {
      x = anchor + wrap_angle(x - anchor);
      if (x >= anchor + kTwoPi) x = anchor;
    }
    std::sort(w.begin(), w.end());
    std::vector<Root> roots;
    for (double x : w) {
      if (!roots.empty() && x - roots.back().theta <= merge_radius)
        ++roots.back().mult;
      else
        roots.push_back({x, 1});
    }
    if (roots.size() > 1 && roots.front().theta + kTwoPi - roots.back().theta <= merge_radius) {
      roots.front().mult += roots.back().mult;
      roots.pop_back();
    }
    return {anchor, std::move(roots)};
  }

  double anchor() const { return anchor_; }
  const std::vector<Root>& roots() const { return roots_; }
  int total_count() const { return total_; }
  int half_count() const { return total_ / 2; }

  /// The 2N positions in order, each repeated by its multiplicity.
  std::vector<double> flattened() const {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(total_));
    for (const auto& r : roots_) out.insert(out.end(), static_cast<std::size_t>(r.mult), r.theta);
    return out;
  }

  /// Multiplicity of each flattened slot.
  std::vector<int> flattened_mult() const {
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(total_));
    for (const auto& r : roots_) out.insert(out.end(), static_cast<std::size_t>(r.mult), r.mult);
    return out;
  }

  /// Periodised sequence x_k = x_{k mod 2N} + 2pi floor(k / 2N).
  double periodized(long k, std::span<const double> flat) const {
    const long n = static_cast<long>(flat.size());
    long q = k >= 0 ? k / n : -((-k + n - 1) / n);
    return flat[static_cast<std::size_t>(k - q * n)] + kTwoPi * static_cast<double>(q);
  }
  double periodized(long k) const { return periodized(k, flattened()); }

  ParticleConfig shifted(double c) const {
    std::vector<Root> r = roots_;
    for (auto& x : r) x.theta += c;
    return {anchor_ + c, std::move(r)};
  }

 private:
  double anchor_;
  std::vector<Root> roots_;
  int total_ = 0;
};

namespace detail {

/// cot(d/2) with the leading pole handled analytically near zero.
inline double half_cot(double d) {
  if (std::abs(d) < 1e-6) {
    double d2 = d * d;
    return 2.0 / d - d / 6.0 - d * d2 / 360.0;
  }
  return 1.0 / std::tan(0.5 * d);
}

/// Cotangent sum and its derivative in one pass, for points strictly inside
/// a gap of the lifted configuration (so |x - x_j| < 2pi).
struct SumAndSlope {
  double value;
  double slope;
};

inline SumAndSlope cot_sum_and_slope(std::span<const Root> roots, double x) {
  double v = 0.0, d = 0.0;
  for (const auto& r : roots) {
    double off = x - r.theta;
    if (std::abs(off) > kPi) off -= std::copysign(kTwoPi, off);
    if (std::abs(off) < 1e-6) {
      v += r.mult * half_cot(off);
      double s = std::sin(0.5 * off);
      d += r.mult / (s * s);
      continue;
    }
    double s = std::sin(0.5 * off), c = std::cos(0.5 * off);
    v += r.mult * (c / s);
    d += r.mult / (s * s);
  }
  return {0.5 * v, -0.25 * d};
}

/// Root of the (strictly decreasing) cotangent sum inside the open gap
/// (lo, hi). Newton steps are taken only when they stay inside the current
/// bracket; otherwise the bracket is bisected.
inline double solve_gap(std::span<const Root> roots, double lo, double hi, std::size_t gap_index) {
  auto diag = [&](const char* what) {
    std::ostringstream os;
    os.precision(17);
    os << what << " in gap " << gap_index << " (" << lo << ", " << hi << "), width " << hi - lo;
    return os.str();
  };
  if (!(hi > lo) || !std::isfinite(lo) || !std::isfinite(hi)) fail(ErrorKind::Numerical, diag("empty bracket"));

  double a = lo, b = hi;
  double x = 0.5 * (a + b);
  for (int it = 0; it < 400; ++it) {
    if (!(x > lo && x < hi)) break;
    auto [f, df] = cot_sum_and_slope(roots, x);
    if (!std::isfinite(f)) fail(ErrorKind::Numerical, diag("non-finite cotangent sum"));
    if (f > 0.0)
      a = x;
    else if (f < 0.0)
      b = x;
    else
      return x;
    if (b - a <= 1e-13) break;
    double xn = x - f / df;
    if (std::isfinite(xn) && std::abs(xn - x) <= std::max(1e-14, 4 * std::numeric_limits<double>::epsilon() * std::abs(x)))
      return std::clamp(xn, a, b);
    if (std::isfinite(xn) && xn > a && xn < b && std::abs(xn - x) < 0.5 * (b - a)) {
      x = xn;
    } else {
      double mid = a + 0.5 * (b - a);
      if (mid <= a || mid >= b) break;
      x = mid;
    }
  }
  if (!(b - a <= 1e-12 || b - a <= 8 * std::numeric_limits<double>::epsilon() * std::abs(a)))
    fail(ErrorKind::Numerical, diag("bracket did not shrink"));
  // final Newton polish from the bracket centre
  double m = 0.5 * (a + b);
  auto [f, df] = cot_sum_and_slope(roots, m);
  double xn = m - f / df;
  return (std::isfinite(xn) && xn >= a && xn <= b) ? xn : m;
}

}  // namespace detail

/// p'(x)/p(x) = 1/2 sum_j mult_j cot((x - x_j)/2).
inline double log_derivative(const ParticleConfig& config, double x) {
  const auto& roots = config.roots();
  double s = 0.0;
  for (std::size_t j = 0; j < roots.size(); ++j) {
    double d = periodic_offset(x - roots[j].theta);
    if (std::abs(d) < 1e-14) {
      std::ostringstream os;
      os.precision(17);
      os << "evaluation at root " << j << " (theta = " << roots[j].theta << ")";
      throw PoleError(j, os.str());
    }
    s += roots[j].mult * detail::half_cot(d);
  }
  return 0.5 * s;
}

/// p(x) = prod_j sin((x - x_j)/2)^{mult_j}, leading constant 1. The sign
/// depends on which lift of each root is stored.
inline double evaluate_poly(const ParticleConfig& config, double x) {
  double p = 1.0;
  for (const auto& r : config.roots()) {
    double s = std::sin(0.5 * (x - r.theta));
    for (int k = 0; k < r.mult; ++k) p *= s;
  }
  return p;
}

/// Roots of p'. The result is anchored at the first input root, so the
/// flattened sequences interlace index by index: x_i <= x'_i <= x_{i+1}.
inline ParticleConfig derivative_roots(const ParticleConfig& config) {
  const auto& roots = config.roots();
  const std::size_t n = roots.size();
  detail::require(config.total_count() >= 2, ErrorKind::Config, "need at least two roots");

  std::vector<double> gap_roots(n);
  parallel_for(n, [&](std::size_t i) {
    double lo = roots[i].theta;
    double hi = i + 1 < n ? roots[i + 1].theta : roots[0].theta + kTwoPi;
    gap_roots[i] = detail::solve_gap(roots, lo, hi, i);
  }, 16);

  std::vector<Root> out;
  out.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    if (roots[i].mult >= 2) out.push_back({roots[i].theta, roots[i].mult - 1});
    double g = gap_roots[i];
    double lo = roots[i].theta;
    double hi = i + 1 < n ? roots[i + 1].theta : roots[0].theta + kTwoPi;
    if (!(g > lo && g < hi)) {
      // the solve collapsed onto an endpoint; keep the root strictly inside
      g = std::clamp(g, std::nextafter(lo, hi), std::nextafter(hi, lo));
    }
    out.push_back({g, 1});
  }
  return {roots[0].theta, std::move(out)};
}

/// True iff the periodised sequences satisfy x_i - tol <= x'_i <= x_{i+1} + tol
/// for all i, after aligning dp's first element to the first one at or after
/// x_0.
inline bool interlacing_check(const ParticleConfig& p, const ParticleConfig& dp, double tol = 0.0) {
  detail::require(p.total_count() == dp.total_count(), ErrorKind::Shape, "interlacing needs equal root counts");
  const auto x = p.flattened();
  const auto y = dp.flattened();
  const long n = static_cast<long>(x.size());
  // smallest k with y_k >= x_0 - tol
  long k = static_cast<long>(std::floor((x[0] - tol - dp.anchor()) / kTwoPi)) * n - n;
  while (dp.periodized(k, y) < x[0] - tol) ++k;
  for (long i = 0; i < n; ++i) {
    double yi = dp.periodized(k + i, y);
    if (yi < p.periodized(i, x) - tol || yi > p.periodized(i + 1, x) + tol) return false;
  }
  return true;
}

/// Symmetric partial sum sum_{|k| <= K} 1 / (z + k pi) of the Euler series
/// for cot z, accumulated from the tail inwards.
inline double euler_cot_partial_sum(double z, long K) {
  detail::require(K >= 0, ErrorKind::Domain, "K must be non-negative");
  detail::require(std::abs(std::remainder(z, kPi)) >= 1e-14, ErrorKind::Domain, "z is a multiple of pi");
  double s = 0.0;
  for (long k = K; k >= 1; --k) {
    double kp = static_cast<double>(k) * kPi;
    s += 2.0 * z / ((z - kp) * (z + kp));
  }
  return s + 1.0 / z;
}

}  // namespace rootflow

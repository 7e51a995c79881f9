#pragma once

// Explicit scheme for the truncated primitive equation
//
//   dF/dt + (1/pi) (arctan(A0[F] / max((dF/dtheta)_+, m)) + pi/2) = 0.
//
// The update is F_j <- F_j + dt r_j with
//
//   r_j = -(1/pi) atan2(max((D_j)_+, m), -A0[F]_j)  in (-1, 0),
//
// which is the same expression written without the cancellation in
// arctan(x) + pi/2 for x -> -inf.
//
// Monotonicity. The discrete A0 has nonpositive off-diagonal weights, and r is
// decreasing in A0. dr/dD has the sign of A0, so the upwind stencil takes the
// forward difference when A0 > 0 and the backward one when A0 < 0 (r does not
// depend on D when A0 = 0, so the switch is continuous). Then every neighbour
// enters F_new with a nonnegative coefficient, and the diagonal coefficient
//
//   1 - dt/pi (D A0_jj + |A0|/dtheta) / (D^2 + A0^2)
//
// stays nonnegative when dt <= 4 pi^2 m / ((pi + 1) M), using A0_jj = M/4
// and D >= m. The central stencil is kept for comparison; it is only
// monotone while |A0| <= (4/pi) D.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "rootflow/circle_measures.hpp"
#include "rootflow/error.hpp"
#include "rootflow/nonlocal_ops.hpp"
#include "rootflow/parallel.hpp"

namespace rootflow {

enum class GradientScheme { upwind, central };

inline const char* to_string(GradientScheme g) { return g == GradientScheme::upwind ? "upwind" : "central"; }

inline GradientScheme gradient_from_string(const std::string& s) {
  if (s == "upwind") return GradientScheme::upwind;
  if (s == "central") return GradientScheme::central;
  detail::fail(ErrorKind::Config, "unknown gradient scheme '" + s + "'");
}

struct SchemeConfig {
  std::size_t M = 256;
  double m = 0.05;
  double cfl_safety = 0.5;
  OperatorBackend backend;
  GradientScheme gradient = GradientScheme::upwind;
  double T = 1.0;
  std::size_t record_every = 0;      // 0: only t = 0, record_times and T
  std::vector<double> record_times;  // snapshots land exactly on these times

  void validate() const {
    SpectralGrid grid(M);
    detail::require(m > 0.0 && std::isfinite(m), ErrorKind::Config, "m must be positive");
    detail::require(cfl_safety > 0.0 && cfl_safety <= 1.0, ErrorKind::Config, "cfl_safety must lie in (0, 1]");
    detail::require(T >= 0.0 && std::isfinite(T), ErrorKind::Config, "T must be non-negative");
  }
};

/// dt = cfl_safety * 4 pi^2 m / ((pi + 1) M).
inline double cfl_dt(const SchemeConfig& config) {
  config.validate();
  return config.cfl_safety * 4.0 * kPi * kPi * config.m / ((kPi + 1.0) * static_cast<double>(config.M));
}

/// Discrete right-hand side per node; every value lies in (-1, 0).
inline std::vector<double> rhs(const CdfField& F, const SchemeConfig& config) {
  config.validate();
  detail::require(F.size() == config.M, ErrorKind::Shape, "CDF grid does not match the scheme grid");
  const std::size_t M = config.M;
  const auto a0 = half_laplacian(F, config.backend);
  const auto& g = F.periodic();
  const double h = F.spacing();
  const double ramp = 1.0 / kTwoPi;
  std::vector<double> r(M);
  for (std::size_t j = 0; j < M; ++j) {
    double fwd = (g[(j + 1) % M] - g[j]) / h + ramp;
    double bwd = (g[j] - g[(j + M - 1) % M]) / h + ramp;
    double d = 0.0;
    if (config.gradient == GradientScheme::central)
      d = 0.5 * (fwd + bwd);
    else
      d = a0[j] < 0.0 ? bwd : fwd;
    double den = std::max(std::max(d, 0.0), config.m);
    r[j] = -std::atan2(den, -a0[j]) / kPi;
  }
  return r;
}

/// One forward Euler step on the periodic part; the ramp is never touched.
inline CdfField step_explicit(const CdfField& F, double dt, const SchemeConfig& config) {
  const double limit = cfl_dt(config);
  detail::require(dt >= 0.0 && dt <= limit * (1.0 + 1e-12), ErrorKind::Config,
                  "time step " + std::to_string(dt) + " exceeds the CFL limit " + std::to_string(limit));
  auto r = rhs(F, config);
  std::vector<double> g = F.periodic();
  for (std::size_t j = 0; j < g.size(); ++j) g[j] += dt * r[j];
  return CdfField(std::move(g));
}

enum MonitorFlag : std::uint32_t {
  kSpeedBound = 1u << 0,      // |F_new - F| > dt at some node
  kSlopeFloor = 1u << 1,      // min slope below m - 1e-7
  kSlopeDecrease = 1u << 2,   // min slope dropped by more than 1e-9 in one step
};

inline std::vector<std::string> flag_names(std::uint32_t flags) {
  std::vector<std::string> out;
  if (flags & kSpeedBound) out.emplace_back("speed-bound");
  if (flags & kSlopeFloor) out.emplace_back("slope-floor");
  if (flags & kSlopeDecrease) out.emplace_back("slope-decrease");
  return out;
}

struct MonitorRecord {
  std::size_t step = 0;
  double t = 0.0;
  double dt = 0.0;
  double min_slope = 0.0;
  double max_dF_over_dt = 0.0;
  std::uint32_t flags = 0;
};

struct Snapshot {
  double t = 0.0;
  CdfField F;
};

struct SolveResult {
  std::vector<Snapshot> snapshots;
  std::vector<MonitorRecord> monitors;
  std::uint32_t flags = 0;  // union over all steps
  bool flagged() const { return flags != 0; }
};

namespace detail {

inline MonitorRecord monitor_step(const CdfField& before, const CdfField& after, double dt, double m) {
  MonitorRecord rec;
  rec.dt = dt;
  rec.min_slope = after.min_slope();
  double max_change = 0.0;
  for (std::size_t j = 0; j < before.size(); ++j)
    max_change = std::max(max_change, std::abs(after.periodic()[j] - before.periodic()[j]));
  rec.max_dF_over_dt = dt > 0.0 ? max_change / dt : 0.0;
  if (max_change > dt * (1.0 + 1e-12)) rec.flags |= kSpeedBound;
  if (rec.min_slope < m - 1e-7) rec.flags |= kSlopeFloor;
  if (rec.min_slope < before.min_slope() - 1e-9) rec.flags |= kSlopeDecrease;
  return rec;
}

/// Time grid honouring the CFL limit and landing exactly on record times and T.
class TimeStepper {
 public:
  TimeStepper(const SchemeConfig& config) : dt_max_(cfl_dt(config)), T_(config.T), targets_(config.record_times) {
    targets_.push_back(config.T);
    std::sort(targets_.begin(), targets_.end());
    targets_.erase(std::remove_if(targets_.begin(), targets_.end(), [&](double s) { return s <= 0.0 || s > T_; }),
                   targets_.end());
    targets_.erase(std::unique(targets_.begin(), targets_.end()), targets_.end());
  }

  bool done() const { return next_ >= targets_.size(); }
  double time() const { return t_; }

  /// Returns the next dt and whether the step lands on a record target.
  std::pair<double, bool> next() const {
    double target = targets_[next_];
    double gap = target - t_;
    if (gap <= dt_max_ * (1.0 + 1e-12)) return {gap, true};
    // split the remaining span into equal CFL-compliant steps
    double n = std::ceil(gap / dt_max_);
    return {gap / n, false};
  }

  void advance(double dt, bool on_target) {
    if (on_target) {
      t_ = targets_[next_];
      ++next_;
    } else {
      t_ += dt;
    }
  }

 private:
  double dt_max_;
  double T_;
  std::vector<double> targets_;
  std::size_t next_ = 0;
  double t_ = 0.0;
};

}  // namespace detail

/// Integrates to T. Rejects initial data violating (H_m); monitor breaches
/// are recorded in the result flags.
inline SolveResult solve(const CdfField& F0, const SchemeConfig& config) {
  config.validate();
  detail::require(F0.size() == config.M, ErrorKind::Shape, "initial CDF grid does not match the scheme grid");
  auto cert = check_Hm(F0, config.m);
  if (!cert.satisfied)
    detail::fail(ErrorKind::Precondition, "initial data violates H_m: slope " + std::to_string(cert.slope) +
                                              " at theta = " + std::to_string(cert.theta) + " is below m = " +
                                              std::to_string(config.m));
  SolveResult res;
  res.snapshots.push_back({0.0, F0});
  CdfField F = F0;
  detail::TimeStepper clock(config);
  std::size_t step = 0;
  while (!clock.done()) {
    auto [dt, on_target] = clock.next();
    CdfField next = step_explicit(F, dt, config);
    ++step;
    auto rec = detail::monitor_step(F, next, dt, config.m);
    clock.advance(dt, on_target);
    rec.step = step;
    rec.t = clock.time();
    res.flags |= rec.flags;
    res.monitors.push_back(rec);
    F = std::move(next);
    if (on_target || (config.record_every > 0 && step % config.record_every == 0))
      res.snapshots.push_back({clock.time(), F});
  }
  return res;
}

struct PairRunStats {
  std::size_t steps = 0;
  double max_order_violation = 0.0;  // max over steps and nodes of (F - G)_+
  double max_sup_distance = 0.0;     // max over steps of ||F - G||_inf
  double initial_sup_distance = 0.0;
  double min_slope = 0.0;            // over both runs and all steps
  std::size_t speed_violations = 0;  // steps where |dF| > dt somewhere
  std::uint32_t flags = 0;
};

/// Advances two initial data in lockstep with the same time grid, for
/// `steps` steps at the CFL limit (or up to config.T when steps == 0).
inline PairRunStats run_pair(const CdfField& F0, const CdfField& G0, const SchemeConfig& config, std::size_t steps = 0) {
  config.validate();
  detail::require(F0.size() == config.M && G0.size() == config.M, ErrorKind::Shape, "pair grids differ");
  for (const auto* X : {&F0, &G0}) {
    auto cert = check_Hm(*X, config.m);
    if (!cert.satisfied) detail::fail(ErrorKind::Precondition, "pair initial data violates H_m");
  }
  auto violation = [](const CdfField& F, const CdfField& G) {
    double v = 0.0;
    for (std::size_t j = 0; j < F.size(); ++j) v = std::max(v, F.periodic()[j] - G.periodic()[j]);
    return v;
  };
  PairRunStats st;
  st.initial_sup_distance = sup_distance(F0, G0);
  st.max_sup_distance = st.initial_sup_distance;
  st.min_slope = std::min(F0.min_slope(), G0.min_slope());
  CdfField F = F0, G = G0;
  auto advance = [&](double dt) {
    CdfField Fn = step_explicit(F, dt, config);
    CdfField Gn = step_explicit(G, dt, config);
    auto rf = detail::monitor_step(F, Fn, dt, config.m);
    auto rg = detail::monitor_step(G, Gn, dt, config.m);
    st.flags |= rf.flags | rg.flags;
    if ((rf.flags | rg.flags) & kSpeedBound) ++st.speed_violations;
    st.min_slope = std::min({st.min_slope, rf.min_slope, rg.min_slope});
    F = std::move(Fn);
    G = std::move(Gn);
    st.max_order_violation = std::max(st.max_order_violation, violation(F, G));
    st.max_sup_distance = std::max(st.max_sup_distance, sup_distance(F, G));
    ++st.steps;
  };
  if (steps > 0) {
    const double dt = cfl_dt(config);
    for (std::size_t s = 0; s < steps; ++s) advance(dt);
  } else {
    detail::TimeStepper clock(config);
    while (!clock.done()) {
      auto [dt, on_target] = clock.next();
      advance(dt);
      clock.advance(dt, on_target);
    }
  }
  return st;
}

}  // namespace rootflow

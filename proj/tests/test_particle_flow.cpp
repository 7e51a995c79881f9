#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "oracles.hpp"
#include "rootflow/particle_flow.hpp"

using namespace rootflow;

namespace {

ParticleConfig random_distinct(std::mt19937_64& rng, int N) {
  std::vector<double> xs(2 * static_cast<std::size_t>(N));
  for (auto& x : xs) x = oracle::uniform(rng, 0.0, kTwoPi);
  std::sort(xs.begin(), xs.end());
  return ParticleConfig::from_positions(xs, xs.front());
}

ParticleConfig equally_spaced(int N, double offset = 0.0) {
  std::vector<double> xs(2 * static_cast<std::size_t>(N));
  for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = offset + static_cast<double>(i) * kPi / N;
  return ParticleConfig::from_positions(xs, offset);
}

double cosine_cdf(double t, double a) { return (t + a * std::sin(t)) / kTwoPi; }
double cosine_density(double t, double a) { return (1.0 + a * std::cos(t)) / kTwoPi; }

}  // namespace

TEST(InitFromMeasure, UniformGivesEqualSpacing) {
  auto c = init_from_measure(CircleMeasure::uniform(), 2);
  auto f = c.flattened();
  ASSERT_EQ(f.size(), 4u);
  for (std::size_t i = 0; i + 1 < f.size(); ++i) EXPECT_NEAR(f[i + 1] - f[i], kPi / 2, 1e-12);
}

TEST(InitFromMeasure, DiracGivesOneMultipleRoot) {
  for (int N : {1, 5, 32}) {
    auto c = init_from_measure(CircleMeasure::dirac(0.0), N);
    ASSERT_EQ(c.roots().size(), 1u);
    EXPECT_EQ(c.roots()[0].theta, 0.0);
    EXPECT_EQ(c.roots()[0].mult, 2 * N);
  }
}

TEST(InitFromMeasure, MixedMeasureMatchesInversionOracle) {
  CircleMeasure mu({{kPi, 0.5}}, std::vector<double>(8, 0.5 / kTwoPi));
  auto F = [](double t) { return t / (4.0 * kPi) + (t >= kPi ? 0.5 : 0.0); };
  auto c = init_from_measure(mu, 4);
  auto f = c.flattened();
  ASSERT_EQ(f.size(), 8u);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(f[i], oracle::invert(F, (i + 0.5) / 8.0, 0.0, kTwoPi), 1e-9) << i;
  EXPECT_EQ(c.roots()[2].mult, 4);
}

TEST(InitFromCdf, ReproducesQuantileLevels) {
  auto c = init_from_cdf([](double t) { return cosine_cdf(t, 0.5); }, 64);
  auto f = c.flattened();
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(cosine_cdf(f[i], 0.5), (i + 0.5) / 128.0, 1e-14);
}

TEST(Evolve, EquallySpacedRotatesRigidly) {
  const int N = 8;
  auto tr = evolve(equally_spaced(N, 0.2), 40);
  auto f0 = tr.configs[0].flattened();
  for (std::size_t k = 0; k < tr.configs.size(); ++k) {
    auto f = tr.configs[k].flattened();
    for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(f[i], f0[i] + k * kPi / (2.0 * N), 1e-11);
    // speed pi: displacement equals pi * t_k
    EXPECT_NEAR(f[0] - f0[0], kPi * tr.time(k), 1e-11);
  }
}

TEST(Evolve, DiracMassLaw) {
  const int N = 32;
  auto tr = evolve(ParticleConfig(0.0, {{0.0, 2 * N}}), 2 * N);
  for (std::size_t k = 0; k < tr.configs.size(); ++k) {
    int at_zero = 0;
    for (const auto& r : tr.configs[k].roots())
      if (r.theta == 0.0) at_zero = r.mult;
    EXPECT_EQ(at_zero, 2 * N - static_cast<int>(k));
    EXPECT_EQ(tr.configs[k].total_count(), 2 * N);
  }
}

TEST(Evolve, OneStepDisplacementsStayInsideGaps) {
  auto c = init_from_cdf([](double t) { return cosine_cdf(t, 0.6); }, 64);
  auto tr = evolve(c, 1);
  auto x = tr.configs[0].flattened();
  auto y = tr.configs[1].flattened();
  for (std::size_t i = 0; i < x.size(); ++i) {
    double gap = tr.configs[0].periodized(static_cast<long>(i) + 1, x) - x[i];
    EXPECT_GT(y[i] - x[i], 0.0);
    EXPECT_LT(y[i] - x[i], gap);
  }
}

TEST(Evolve, TrajectoryInvariants) {
  std::mt19937_64 rng(1);
  auto tr = evolve(random_distinct(rng, 10), 30);
  for (std::size_t k = 0; k + 1 < tr.configs.size(); ++k) {
    EXPECT_EQ(tr.configs[k + 1].total_count(), 20);
    EXPECT_TRUE(interlacing_check(tr.configs[k], tr.configs[k + 1]));
    auto d = derivative_roots(tr.configs[k]).flattened();
    auto n = tr.configs[k + 1].flattened();
    for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(d[i], n[i]);
    auto F = empirical_cdf(tr.configs[k + 1], 256);
    EXPECT_DOUBLE_EQ(F.value(256) - F.value(0), 1.0);
  }
}

TEST(Evolve, RotationEquivariance) {
  std::mt19937_64 rng(2);
  auto c = random_distinct(rng, 6);
  auto a = evolve(c, 12);
  auto b = evolve(c.shifted(0.7), 12);
  for (std::size_t k = 0; k < a.configs.size(); ++k) {
    auto fa = a.configs[k].flattened(), fb = b.configs[k].flattened();
    for (std::size_t i = 0; i < fa.size(); ++i) EXPECT_NEAR(fb[i], fa[i] + 0.7, 1e-10);
  }
}

TEST(EmpiricalCdf, TwoParticles) {
  auto F = empirical_cdf(ParticleConfig(0.0, {{0.0, 1}, {kPi, 1}}), 16);
  for (long j = 0; j < 8; ++j) EXPECT_DOUBLE_EQ(F.value(j), 0.5);
  for (long j = 8; j < 16; ++j) EXPECT_DOUBLE_EQ(F.value(j), 1.0);
  EXPECT_DOUBLE_EQ(F.atom_mass()[0], 0.5);
  EXPECT_DOUBLE_EQ(F.atom_mass()[8], 0.5);
}

TEST(EmpiricalCdf, EquallySpacedIsCloseToRamp) {
  for (int N : {3, 16, 100}) {
    auto F = empirical_cdf(equally_spaced(N, 0.01), 1024);
    EXPECT_LE(sup_distance(F, CdfField::ramp(1024)), 1.0 / (2 * N) + 1e-15);
  }
}

TEST(EmpiricalCdf, MatchesDirectCount) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> xs(2 * (1 + rng() % 20));
    for (auto& x : xs) x = oracle::uniform(rng, 0.0, kTwoPi);
    auto c = ParticleConfig::from_positions(xs, 0.0);
    const std::size_t M = 200;
    auto F = empirical_cdf(c, M);
    for (long j = 0; j < static_cast<long>(M); ++j)
      EXPECT_NEAR(F.value(j), oracle::count_at_or_below(xs, oracle::node(j, M)) / static_cast<double>(xs.size()), 1e-15);
  }
}

TEST(EmpiricalCdf, LiftedPositionsTranslateTheCdf) {
  // the same particles carried one full period forward lower F by one
  std::mt19937_64 rng(4);
  auto c = random_distinct(rng, 5);
  auto F = empirical_cdf(c, 128);
  auto G = empirical_cdf(c.shifted(kTwoPi), 128);
  for (long j = 0; j < 128; ++j) EXPECT_NEAR(G.value(j), F.value(j) - 1.0, 1e-14);
}

TEST(DiscreteComparison, Examples) {
  std::mt19937_64 rng(5);
  auto x = random_distinct(rng, 7);
  auto rot = discrete_comparison_check(x, x.shifted(0.1));
  EXPECT_TRUE(rot.precondition_met);
  EXPECT_TRUE(rot.holds);
  for (std::size_t i = 0; i < rot.x_prime.size(); ++i) EXPECT_NEAR(rot.y_prime[i], rot.x_prime[i] + 0.1, 1e-11);
  auto same = discrete_comparison_check(x, x);
  EXPECT_TRUE(same.holds);
  EXPECT_EQ(same.max_violation, 0.0);
  auto flipped = discrete_comparison_check(x.shifted(0.1), x);
  EXPECT_FALSE(flipped.precondition_met);
  EXPECT_THROW(discrete_comparison_check(x, random_distinct(rng, 3)), Error);
}

TEST(DiscreteComparison, RandomOrderedPairsNeverViolate) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 1000; ++t) {
    int N = 1 + static_cast<int>(rng() % 32);
    auto x = random_distinct(rng, N);
    auto flat = x.flattened();
    std::vector<Root> y;
    for (std::size_t i = 0; i < flat.size(); ++i) {
      double next = x.periodized(static_cast<long>(i) + 1, flat);
      y.push_back({flat[i] + 0.99 * oracle::uniform(rng, 0.0, 1.0) * (next - flat[i]), 1});
    }
    auto res = discrete_comparison_check(x, ParticleConfig(x.anchor(), y));
    ASSERT_TRUE(res.precondition_met);
    EXPECT_TRUE(res.holds) << "trial " << t << " index " << res.violating_index.value_or(0);
  }
}

TEST(GapDiagnostics, EquallySpacedHasZeroErrorTerms) {
  auto d = gap_diagnostics(equally_spaced(16), [](double) { return 1.0 / kTwoPi; });
  for (double v : d.error_terms) EXPECT_NEAR(v, 0.0, 1e-14);
  EXPECT_NEAR(d.ratio_min, 1.0, 1e-13);
  EXPECT_NEAR(d.ratio_max, 1.0, 1e-13);
}

TEST(GapDiagnostics, ErrorTermsScaleLikeInverseSquare) {
  std::vector<double> ln, lv;
  for (int N : {64, 128, 256, 512, 1024}) {
    auto c = init_from_cdf([](double t) { return cosine_cdf(t, 0.5); }, N);
    auto d = gap_diagnostics(c, [](double t) { return cosine_density(t, 0.5); });
    ln.push_back(std::log(N));
    lv.push_back(std::log(d.max_abs_error_term));
  }
  double slope = (lv.back() - lv.front()) / (ln.back() - ln.front());
  EXPECT_GT(slope, -2.3);
  EXPECT_LT(slope, -1.7);
}

TEST(GapDiagnostics, StepBoundsHoldWithStableConstant) {
  double kmax = 0.0;
  for (int N : {64, 256}) {
    auto c = init_from_cdf([](double t) { return cosine_cdf(t, 0.5); }, N);
    auto d = gap_diagnostics(c, [](double t) { return cosine_density(t, 0.5); }, true);
    EXPECT_LE(1.0 / (d.k_constant * N), d.min_step * (1 + 1e-12));
    EXPECT_LE(d.max_step, d.k_constant / N * (1 + 1e-12));
    if (kmax > 0) {
      EXPECT_NEAR(d.k_constant, kmax, 0.1 * kmax);
    }
    kmax = d.k_constant;
  }
}

TEST(GapDiagnostics, SampledDensityAndValidation) {
  std::vector<double> psi(512);
  for (std::size_t j = 0; j < psi.size(); ++j) psi[j] = cosine_density(oracle::node(static_cast<long>(j), 512), 0.5);
  auto c = init_from_cdf([](double t) { return cosine_cdf(t, 0.5); }, 32);
  auto a = gap_diagnostics(c, psi);
  auto b = gap_diagnostics(c, [](double t) { return cosine_density(t, 0.5); });
  EXPECT_NEAR(a.max_abs_error_term, b.max_abs_error_term, 1e-4);
  psi[10] = 0.0;
  EXPECT_THROW(gap_diagnostics(c, psi), Error);
}

TEST(SpeedHeuristic, EquallySpacedIsExact) {
  auto st = speed_vs_heuristic(equally_spaced(20, 0.4));
  EXPECT_EQ(st.included, 40u);
  EXPECT_LT(st.max_residual, 1e-10);
}

TEST(SpeedHeuristic, ResidualShrinksWithN) {
  auto r64 = speed_vs_heuristic(init_from_cdf([](double t) { return cosine_cdf(t, 0.5); }, 64));
  auto r256 = speed_vs_heuristic(init_from_cdf([](double t) { return cosine_cdf(t, 0.5); }, 256));
  EXPECT_TRUE(std::isfinite(r64.mean_residual));
  EXPECT_LT(r256.mean_residual, r64.mean_residual);
}

TEST(SpeedHeuristic, DegenerateClusterIsExcluded) {
  // a multiple root next to a tight cluster, plus regular particles
  std::vector<Root> roots = {{0.0, 3}, {1e-5, 1}, {2e-5, 1}, {1.0, 1}, {2.0, 1}, {3.0, 1}, {4.0, 1}, {5.0, 1}};
  auto st = speed_vs_heuristic(ParticleConfig(0.0, roots));
  EXPECT_GE(st.excluded, 5u);
  EXPECT_GT(st.included, 0u);
  EXPECT_TRUE(std::isnan(st.residuals[0]));
}

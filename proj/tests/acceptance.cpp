// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//
//   acceptance [--cli path/to/rootflow] [--work dir] [--only 1,5,16]

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rootflow/lab.hpp"
#include "rootflow/rootflow.hpp"

using namespace rootflow;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

std::vector<double> sample(std::size_t M, const std::function<double(double)>& f) {
  std::vector<double> v(M);
  for (std::size_t j = 0; j < M; ++j) v[j] = f(grid_node(static_cast<long>(j), M));
  return v;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) d = std::max(d, std::abs(a[j] - b[j]));
  return d;
}

/// sum_{k=1}^{K} a_k cos k theta + b_k sin k theta with a_k, b_k uniform in [-1, 1].
std::vector<double> random_band_limited(std::mt19937_64& rng, std::size_t M, int K) {
  std::vector<double> a(K), b(K);
  for (int k = 0; k < K; ++k) {
    a[k] = 2 * lab::uniform01(rng) - 1;
    b[k] = 2 * lab::uniform01(rng) - 1;
  }
  return sample(M, [&](double t) {
    double s = 0.0;
    for (int k = 0; k < K; ++k) s += a[k] * std::cos((k + 1) * t) + b[k] * std::sin((k + 1) * t);
    return s;
  });
}

const OperatorBackend kBackends[] = {{BackendKind::spectral, std::nullopt}, {BackendKind::quadrature, std::nullopt}};

// speed-bound violations accumulated over every solver run of the suite
std::size_t g_speed_violations = 0;
std::size_t g_solver_steps = 0;

// ---------------------------------------------------------------------------

Outcome operator_multipliers() {
  const std::size_t M = 1024;
  double worst = 0.0, ramp = 0.0;
  for (const auto& be : kBackends) {
    for (int k = 0; k <= 16; ++k) {
      auto c = sample(M, [k](double t) { return std::cos(k * t); });
      auto s = sample(M, [k](double t) { return std::sin(k * t); });
      auto hc = hilbert_transform(c, be), hs = hilbert_transform(s, be), ac = half_laplacian(c, be);
      for (std::size_t j = 0; j < M; ++j) {
        double t = grid_node(static_cast<long>(j), M);
        worst = std::max(worst, std::abs(hc[j] - (k == 0 ? 0.0 : std::sin(k * t))));
        worst = std::max(worst, std::abs(hs[j] + (k == 0 ? 0.0 : std::cos(k * t))));
        worst = std::max(worst, std::abs(ac[j] - k * std::cos(k * t)));
      }
    }
    for (double v : half_laplacian(CdfField::ramp(M), be)) ramp = std::max(ramp, std::abs(v));
  }
  return {worst <= 1e-7 && ramp <= 1e-12, fmt("max multiplier error %.3g (<= 1e-7), ramp residual %.3g (<= 1e-12)", worst, ramp)};
}

Outcome a0_is_h_of_derivative() {
  const std::size_t M = 512;
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    auto rng = lab::trial_rng(2, static_cast<std::uint64_t>(t));
    int K = 1 + static_cast<int>(lab::uniform01(rng) * 100);
    auto f = random_band_limited(rng, M, K);
    for (const auto& be : kBackends)
      worst = std::max(worst, max_diff(half_laplacian(f, be), hilbert_transform(spectral_derivative(f), be)));
  }
  return {worst <= 1e-8, fmt("max |A0 f - H f'| = %.3g over 100 functions (<= 1e-8)", worst)};
}

Outcome maximum_principle() {
  const std::size_t M = 256;
  double worst = 1e300;
  for (int t = 0; t < 1000; ++t) {
    auto rng = lab::trial_rng(3, static_cast<std::uint64_t>(t));
    int K = 1 + static_cast<int>(lab::uniform01(rng) * 16);
    auto f = random_band_limited(rng, M, K);
    auto jmax = static_cast<std::size_t>(std::max_element(f.begin(), f.end()) - f.begin());
    for (const auto& be : kBackends) worst = std::min(worst, half_laplacian(f, be)[jmax]);
  }
  return {worst >= -1e-9, fmt("min A0 f at argmax = %.3g over 1000 functions (>= -1e-9)", worst)};
}

Outcome log_derivative_identity() {
  double worst = 0.0;
  for (int c = 0; c < 100; ++c) {
    auto rng = lab::trial_rng(4, static_cast<std::uint64_t>(c));
    int N = 1 + static_cast<int>(lab::uniform01(rng) * 16);
    auto cfg = lab::random_config(rng, N);
    auto logabs = [&](double y) {
      double s = 0.0;
      for (const auto& r : cfg.roots()) s += r.mult * std::log(std::abs(std::sin(0.5 * (y - r.theta))));
      return s;
    };
    auto d5 = [&](double x, double h) {
      return (-logabs(x + 2 * h) + 8 * logabs(x + h) - 8 * logabs(x - h) + logabs(x - 2 * h)) / (12 * h);
    };
    for (int i = 0; i < 100; ++i) {
      double x = kTwoPi * lab::uniform01(rng);
      double dist = 1e300;
      for (const auto& r : cfg.roots()) dist = std::min(dist, std::abs(periodic_offset(x - r.theta)));
      double h = std::min(1e-3, dist / 100);
      double num = (16 * d5(x, 0.5 * h) - d5(x, h)) / 15;
      double ana = log_derivative(cfg, x);
      worst = std::max(worst, std::abs(num - ana) / std::max(1.0, std::abs(ana)));
    }
  }
  return {worst <= 1e-7, fmt("max relative deviation %.3g over 100 x 100 points (<= 1e-7)", worst)};
}

Outcome interlacing_and_count() {
  std::size_t bad = 0;
  for (int t = 0; t < 1000; ++t) {
    auto rng = lab::trial_rng(5, static_cast<std::uint64_t>(t));
    int N = 1 + static_cast<int>(lab::uniform01(rng) * 64);
    auto x = lab::random_config(rng, N);
    auto dx = derivative_roots(x);
    if (dx.total_count() != 2 * N || !interlacing_check(x, dx, 1e-10)) ++bad;
  }
  return {bad == 0, fmt("%.0f violations over 1000 configurations", static_cast<double>(bad))};
}

Outcome discrete_comparison() {
  std::size_t bad = 0, skipped = 0;
  double rotation = 0.0;
  for (int t = 0; t < 1000; ++t) {
    auto rng = lab::trial_rng(6, static_cast<std::uint64_t>(t));
    int N = 1 + static_cast<int>(lab::uniform01(rng) * 32);
    auto x = lab::random_config(rng, N);
    auto y = lab::ordered_partner(rng, x);
    auto res = discrete_comparison_check(x, y, 1e-10);
    if (!res.precondition_met) ++skipped;
    else if (!res.holds) ++bad;
    const double c = 2.0 * lab::uniform01(rng) - 1.0;
    auto xp = derivative_roots(x).flattened();
    auto yp = derivative_roots(x.shifted(c)).flattened();
    for (std::size_t i = 0; i < xp.size(); ++i) rotation = std::max(rotation, std::abs(yp[i] - xp[i] - c));
  }
  return {bad == 0 && skipped == 0 && rotation <= 1e-11,
          fmt("%.0f violations, %.0f unordered pairs, rotation error %.3g (<= 1e-11)", static_cast<double>(bad),
              static_cast<double>(skipped), rotation)};
}

Outcome dirac_mass() {
  const int N = 32;
  auto tr = evolve(ParticleConfig(0.0, {{0.0, 2 * N}}), 2 * N, "dirac");
  std::size_t bad = 0;
  for (std::size_t k = 0; k < tr.configs.size(); ++k) {
    long mult = 0;
    for (const auto& r : tr.configs[k].roots())
      if (r.theta == 0.0) mult = r.mult;
    if (mult != 2L * N - static_cast<long>(k)) ++bad;
  }
  return {bad == 0 && tr.configs.size() == 2 * N + 1,
          fmt("%.0f steps with mass != (2N - k)/(2N), %.0f steps run", static_cast<double>(bad),
              static_cast<double>(tr.configs.size() - 1))};
}

Outcome uniform_translation() {
  SchemeConfig s;
  s.M = 256;
  s.T = 1.0;
  s.record_every = 1;
  auto res = solve(CdfField::ramp(256), s);
  double err = 0.0;
  for (const auto& snap : res.snapshots)
    for (std::size_t j = 0; j < s.M; ++j) {
      double theta = grid_node(static_cast<long>(j), s.M);
      double exact = (theta - kPi * snap.t) / kTwoPi;  // F0(theta - pi t)
      err = std::max(err, std::abs(snap.F.value(static_cast<long>(j)) - exact));
    }
  for (const auto& m : res.monitors) g_speed_violations += (m.flags & kSpeedBound) != 0;
  g_solver_steps += res.monitors.size();

  const int N = 32;
  std::vector<double> xs(2 * N);
  for (int i = 0; i < 2 * N; ++i) xs[i] = (i + 0.5) * kPi / N;
  auto tr = evolve(ParticleConfig::from_positions(xs, 0.0), 2 * N, "uniform");
  double perr = 0.0;
  for (std::size_t k = 0; k < tr.configs.size(); ++k) {
    const auto& roots = tr.configs[k].roots();
    if (roots.size() != xs.size()) perr = std::max(perr, 1.0);
    // every root must sit on one of the translated positions, circularly
    for (const auto& r : roots) {
      double best = 1e300;
      for (double x : xs) best = std::min(best, std::abs(periodic_offset(r.theta - x - k * kPi / (2.0 * N))));
      perr = std::max(perr, best);
    }
  }
  return {err <= 1e-6 && perr <= 1e-12,
          fmt("solver sup error %.3g (<= 1e-6), particle half-gap translation error %.3g", err, perr)};
}

struct PairSweep {
  double order = 0.0;
  double min_slope = 1e300;
  std::size_t steps = 0;
};

PairSweep& ordered_pairs() {
  static PairSweep sweep = [] {
    PairSweep s;
    SchemeConfig sc;
    sc.M = 128;
    sc.m = 0.05;
    for (int p = 0; p < 200; ++p) {
      auto rng = lab::trial_rng(9, static_cast<std::uint64_t>(p));
      auto [F, G] = lab::detail::random_pair(rng, sc, 4, "ordered", 0.0, 0.0);
      auto st = run_pair(F, G, sc, 1000);
      s.order = std::max(s.order, st.max_order_violation);
      s.min_slope = std::min(s.min_slope, st.min_slope);
      s.steps += st.steps;
      g_speed_violations += st.speed_violations;
      g_solver_steps += 2 * st.steps;
    }
    return s;
  }();
  return sweep;
}

Outcome scheme_comparison() {
  auto& s = ordered_pairs();
  return {s.order <= 1e-7, fmt("max (F - G)_+ = %.3g over 200 pairs x 1000 steps (<= 1e-7)", s.order)};
}

Outcome monotone_principle() {
  auto& s = ordered_pairs();
  return {s.min_slope >= 0.05 - 1e-7, fmt("min slope %.10g (>= m - 1e-7 = %.10g)", s.min_slope, 0.05 - 1e-7)};
}

Outcome vj_scaling() {
  const double a = 0.5;
  std::vector<double> ln, lv;
  std::string table;
  for (int N : {64, 128, 256, 512, 1024}) {
    auto cfg = lab::detail::cosine_quantile_config(a, N);
    // independent evaluation: V_j = x_{j+1} - x_j - 1/(2N psi(x_j))
    auto x = cfg.flattened();
    double worst = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      double gap = cfg.periodized(static_cast<long>(j) + 1, x) - x[j];
      double psi = (1.0 + a * std::cos(x[j])) / kTwoPi;
      worst = std::max(worst, std::abs(gap - 1.0 / (2.0 * N * psi)));
    }
    ln.push_back(std::log(N));
    lv.push_back(std::log(worst));
  }
  const double n = static_cast<double>(ln.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < ln.size(); ++i) mx += ln[i] / n, my += lv[i] / n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < ln.size(); ++i) sxy += (ln[i] - mx) * (lv[i] - my), sxx += (ln[i] - mx) * (ln[i] - mx);
  double slope = sxy / sxx;
  return {slope >= -2.3 && slope <= -1.7, fmt("log-log slope of max|V_j| = %.4f (in [-2.3, -1.7])", slope)};
}

Outcome heuristic_speed() {
  auto r64 = speed_vs_heuristic(lab::detail::cosine_quantile_config(0.5, 64));
  auto r256 = speed_vs_heuristic(lab::detail::cosine_quantile_config(0.5, 256));
  bool finite = std::isfinite(r64.mean_residual) && std::isfinite(r256.mean_residual);
  return {finite && r256.mean_residual < r64.mean_residual,
          fmt("mean relative residual N=64: %.4g, N=256: %.4g", r64.mean_residual, r256.mean_residual)};
}

Outcome particle_pde_convergence() {
  auto rows = lab::detail::compare_particles_pde(lab::effective_config("compare", json::object()));
  bool decreasing = rows.size() == 4;
  std::string values;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i > 0 && !(rows[i].e_N < rows[i - 1].e_N)) decreasing = false;
    g_speed_violations += rows[i].speed_violations;
    g_solver_steps += rows[i].solver_steps;
    values += (i ? ", " : "") + fmt("N=%g: %.4g", rows[i].N, rows[i].e_N);
  }
  return {decreasing, "e_N " + values};
}

Outcome initial_data_stability() {
  SchemeConfig sc;
  sc.M = 256;
  sc.m = 0.05;
  sc.T = 0.5;
  double worst = -1e300;
  for (int p = 0; p < 20; ++p) {
    auto rng = lab::trial_rng(15, static_cast<std::uint64_t>(p));
    auto [F, G] = lab::detail::random_pair(rng, sc, 4, "epsilon", 1e-4, 5e-3);
    auto st = run_pair(F, G, sc);
    worst = std::max(worst, st.max_sup_distance - st.initial_sup_distance);
    g_speed_violations += st.speed_violations;
    g_solver_steps += 2 * st.steps;
  }
  return {worst <= 1e-6, fmt("max over pairs of (sup distance - eps) = %.3g (<= 1e-6)", worst)};
}

Outcome speed_bound() {
  ordered_pairs();
  return {g_speed_violations == 0, fmt("%.0f violations over %.0f solver steps", static_cast<double>(g_speed_violations),
                                       static_cast<double>(g_solver_steps))};
}

// -- determinism through the CLI ---------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

int run_cli(const std::string& cli, const std::string& args, const fs::path& out, const char* threads) {
  std::string cmd = "ROOTFLOW_THREADS=" + std::string(threads) + " '" + cli + "' " + args + " --out '" + out.string() +
                    "' > '" + out.string() + ".log' 2>&1";
  int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

/// File content for byte comparison; the manifest drops wall time and thread count.
std::string comparable(const fs::path& p) {
  std::string text = slurp(p);
  if (p.filename() != "manifest.json") return text;
  auto j = json::parse(text);
  j.erase("wall_time_s");
  j.erase("threads");
  return j.dump();
}

Outcome determinism(const std::string& cli, const fs::path& work) {
  if (cli.empty()) return {false, "no --cli given"};
  const std::vector<std::pair<std::string, std::string>> runs = {
      {"comparison-tests", "comparison-tests --seed 16 --trials 200"},
      {"stability-check", "stability-check --seed 16 --pairs 3 --T 0.1"},
      {"particle-run", "particle-run --N 48 --T 0.25"},
      {"operator-check", "operator-check --M 256"},
  };
  std::size_t files = 0, mismatches = 0;
  std::string first_mismatch;
  for (const auto& [name, args] : runs) {
    std::vector<fs::path> dirs;
    int i = 0;
    for (const char* threads : {"1", "1", "4"}) {
      auto dir = work / (name + "_" + std::to_string(i++));
      fs::remove_all(dir);
      int code = run_cli(cli, args, dir, threads);
      if (code != 0) return {false, name + " exited with " + std::to_string(code)};
      dirs.push_back(dir);
    }
    for (const auto& e : fs::directory_iterator(dirs[0])) {
      const auto fname = e.path().filename();
      for (std::size_t k = 1; k < dirs.size(); ++k) {
        ++files;
        if (comparable(dirs[0] / fname) != comparable(dirs[k] / fname)) {
          ++mismatches;
          if (first_mismatch.empty()) first_mismatch = (dirs[k] / fname).string();
        }
      }
    }
  }
  return {mismatches == 0 && files > 0,
          fmt("%.0f mismatches over %.0f file comparisons (threads 1, 1, 4)", static_cast<double>(mismatches),
              static_cast<double>(files)) +
              (first_mismatch.empty() ? "" : "; first: " + first_mismatch)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance suite"};
  std::string cli;
  std::string work = "acceptance_runs";
  std::vector<int> only;
  app.add_option("--cli", cli, "path to the rootflow executable (criterion 16)");
  app.add_option("--work", work, "scratch directory for CLI runs");
  app.add_option("--only", only, "run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"operator multipliers", operator_multipliers},
      {"A0 = H o d/dtheta", a0_is_h_of_derivative},
      {"maximum principle of A0", maximum_principle},
      {"log-derivative identity", log_derivative_identity},
      {"interlacing and count conservation", interlacing_and_count},
      {"periodic discrete comparison", discrete_comparison},
      {"Dirac mass decay", dirac_mass},
      {"uniform translating solution", uniform_translation},
      {"scheme comparison principle", scheme_comparison},
      {"discrete monotone principle", monotone_principle},
      {"speed bound", speed_bound},
      {"V_j scaling", vj_scaling},
      {"heuristic speed formula", heuristic_speed},
      {"particle to PDE convergence", particle_pde_convergence},
      {"stability in initial data", initial_data_stability},
      {"determinism", [&] { return determinism(cli, work); }},
  };
  // criterion 11 reads counters filled by the other solver runs, so it goes last
  std::vector<int> order;
  for (int i = 1; i <= 16; ++i)
    if (i != 11) order.push_back(i);
  order.push_back(11);

  std::set<int> selected(only.begin(), only.end());
  int failures = 0;
  std::vector<std::string> lines(17);
  for (int id : order) {
    if (!selected.empty() && !selected.count(id)) continue;
    const auto& [name, fn] = criteria[static_cast<std::size_t>(id - 1)];
    auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass) ++failures;
    char head[160];
    std::snprintf(head, sizeof head, "%s  %2d  %-36s", o.pass ? "PASS" : "FAIL", id, name.c_str());
    lines[static_cast<std::size_t>(id)] = std::string(head) + o.detail + fmt("  [%.1fs]", secs);
    std::fprintf(stderr, "  done %d (%.1fs)\n", id, secs);
  }
  for (const auto& l : lines)
    if (!l.empty()) std::printf("%s\n", l.c_str());
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}

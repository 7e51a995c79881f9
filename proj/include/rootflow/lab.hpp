#pragma once

// Experiment runner behind the rootflow CLI. Each experiment kind reads a JSON
// config (merged over the defaults below), writes CSV/JSON artifacts into its
// own output directory and returns a list of pass/fail checks whose
// thresholds come from the config's "thresholds" object.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rootflow/circle_measures.hpp"
#include "rootflow/error.hpp"
#include "rootflow/nonlocal_ops.hpp"
#include "rootflow/parallel.hpp"
#include "rootflow/particle_flow.hpp"
#include "rootflow/serialization.hpp"
#include "rootflow/trig_roots.hpp"
#include "rootflow/viscosity_solver.hpp"

namespace rootflow::lab {

inline constexpr const char* kVersion = "0.1.0";

inline const std::vector<std::string>& experiment_kinds() {
  static const std::vector<std::string> kinds = {"operator-check", "particle-run",     "pde-run",
                                                 "compare",        "comparison-tests", "dirac",
                                                 "vj-scaling",     "speed-check",      "stability-check"};
  return kinds;
}

/// Default parameters per kind; user configs are merged on top.
inline json default_config(const std::string& kind) {
  if (kind == "operator-check")
    return {{"M", 1024},
            {"kmax", 16},
            {"backends", {"spectral", "quadrature"}},
            {"thresholds", {{"multiplier", 1e-8}, {"ramp", 1e-12}, {"a0_h_derivative", 1e-8}, {"backend_agreement", 1e-7}}}};
  if (kind == "particle-run")
    return {{"N", 64},
            {"T", 0.5},
            {"initial", {{"preset", "sine"}, {"amplitude", 0.05}}},
            {"grid", 4096},
            {"iid_sample", false},
            {"thresholds", {{"interlacing", 1e-10}, {"iid_sup_distance", 0.15}}}};
  if (kind == "pde-run")
    return {{"M", 256},
            {"m", 0.05},
            {"T", 1.0},
            {"cfl_safety", 0.5},
            {"backend", "spectral"},
            {"gradient", "upwind"},
            {"record_every", 0},
            {"record_times", json::array()},
            {"initial", {{"preset", "uniform"}}},
            {"mollify_eps", 0.5},
            {"thresholds", {{"exact_solution", 1e-6}}}};
  if (kind == "compare")
    return {{"N_list", {32, 64, 128, 256}},
            {"M", 4096},
            {"m", 0.05},
            {"T", 0.5},
            {"cfl_safety", 0.5},
            {"backend", "spectral"},
            {"gradient", "upwind"},
            {"initial", {{"preset", "sine"}, {"amplitude", 0.05}}},
            {"mollify_eps", 0.5},
            {"grid", 4096},
            {"thresholds", {{"require_strict_decrease", true}, {"uniform_slack", 1e-6}}}};
  if (kind == "comparison-tests")
    return {{"trials", 1000},
            {"N_max", 32},
            {"rotation_shift", 0.1},
            {"thresholds", {{"comparison", 1e-10}, {"rotation", 1e-11}, {"max_violations", 0}}}};
  if (kind == "dirac") return {{"N", 32}, {"theta", 0.0}, {"thresholds", {{"mass_mismatches", 0}}}};
  if (kind == "vj-scaling")
    return {{"N_list", {64, 128, 256, 512, 1024}},
            {"amplitude", 0.5},
            {"thresholds", {{"slope_min", -2.3}, {"slope_max", -1.7}}}};
  if (kind == "speed-check")
    return {{"N_list", {64, 256}}, {"amplitude", 0.5}, {"degenerate_ratio", 1e-3}, {"thresholds", json::object()}};
  if (kind == "stability-check")
    return {{"pairs", 20},
            {"M", 256},
            {"m", 0.05},
            {"T", 0.5},
            {"steps", 0},
            {"cfl_safety", 0.5},
            {"backend", "spectral"},
            {"gradient", "upwind"},
            {"modes", 4},
            {"perturbation", "epsilon"},
            {"epsilon_min", 1e-4},
            {"epsilon_max", 5e-3},
            {"thresholds", {{"stability_slack", 1e-6}, {"order", 1e-7}, {"slope_floor", 1e-7}, {"speed_violations", 0}}}};
  detail::fail(ErrorKind::Config, "unknown experiment kind '" + kind + "'");
}

inline bool is_randomized(const std::string& kind, const json& config) {
  if (kind == "comparison-tests" || kind == "stability-check") return true;
  return kind == "particle-run" && config.value("iid_sample", false);
}

// ---------------------------------------------------------------------------
// Deterministic random numbers

/// Uniform on [0, 1) from the top 53 bits; identical on every platform.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Independent stream for one trial of a seeded experiment.
inline std::mt19937_64 trial_rng(std::uint64_t seed, std::uint64_t trial) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(trial), static_cast<std::uint32_t>(trial >> 32)};
  return std::mt19937_64(seq);
}

/// 2N uniform positions on the circle; with probability 1/4 they are squeezed
/// into a short arc to produce close roots.
inline ParticleConfig random_config(std::mt19937_64& rng, int N) {
  std::vector<double> xs(2 * static_cast<std::size_t>(N));
  const bool clustered = uniform01(rng) < 0.25;
  const double centre = kTwoPi * uniform01(rng);
  for (auto& x : xs) {
    double u = uniform01(rng);
    x = clustered && uniform01(rng) < 0.5 ? centre + 0.05 * (u - 0.5) : kTwoPi * u;
  }
  std::vector<double> w(xs);
  for (auto& x : w) x = wrap_angle(x);
  std::sort(w.begin(), w.end());
  return ParticleConfig::from_positions(w, w.front());
}

/// Random ordered partner: y_i = x_i + r_i (x_{i+1} - x_i), r_i in [0, 1).
inline ParticleConfig ordered_partner(std::mt19937_64& rng, const ParticleConfig& x) {
  const auto flat = x.flattened();
  std::vector<double> y(flat.size());
  for (std::size_t i = 0; i < flat.size(); ++i) {
    double next = x.periodized(static_cast<long>(i) + 1, flat);
    y[i] = flat[i] + 0.999 * uniform01(rng) * (next - flat[i]);
  }
  std::vector<Root> roots;
  for (double v : y) {
    if (!roots.empty() && v - roots.back().theta <= kMergeRadius)
      ++roots.back().mult;
    else
      roots.push_back({v, 1});
  }
  return {x.anchor(), std::move(roots)};
}

/// Periodic part sum_{k=1}^{K} a_k cos k theta + b_k sin k theta, scaled so
/// the derivative is bounded by `slope_budget`.
inline std::vector<double> random_smooth_periodic(std::mt19937_64& rng, std::size_t M, int K, double slope_budget) {
  std::vector<double> a(static_cast<std::size_t>(K)), b(static_cast<std::size_t>(K));
  double norm = 0.0;
  for (int k = 0; k < K; ++k) {
    a[static_cast<std::size_t>(k)] = 2.0 * uniform01(rng) - 1.0;
    b[static_cast<std::size_t>(k)] = 2.0 * uniform01(rng) - 1.0;
    norm += (k + 1) * (std::abs(a[static_cast<std::size_t>(k)]) + std::abs(b[static_cast<std::size_t>(k)]));
  }
  const double scale = norm > 0.0 ? slope_budget / norm : 0.0;
  std::vector<double> g(M, 0.0);
  for (std::size_t j = 0; j < M; ++j) {
    double th = grid_node(static_cast<long>(j), M);
    for (int k = 0; k < K; ++k)
      g[j] += scale * (a[static_cast<std::size_t>(k)] * std::cos((k + 1) * th) +
                       b[static_cast<std::size_t>(k)] * std::sin((k + 1) * th));
  }
  return g;
}

/// Random smooth CDF with density at least m + 0.2 (1/2pi - m).
inline CdfField random_hm_cdf(std::mt19937_64& rng, std::size_t M, double m, int K) {
  detail::require(m < 1.0 / kTwoPi, ErrorKind::Config, "m must be below 1/(2 pi) for random H_m data");
  double budget = 0.8 * uniform01(rng) * (1.0 / kTwoPi - m);
  return CdfField(random_smooth_periodic(rng, M, K, budget));
}

// ---------------------------------------------------------------------------
// Initial data

struct InitialData {
  std::string preset;
  double amplitude = 0.0;
  double theta = 0.0;
  std::optional<CircleMeasure> measure;
};

inline InitialData parse_initial(const json& j) {
  InitialData d;
  d.preset = j.value("preset", "uniform");
  if (d.preset == "sine") {
    d.amplitude = j.value("amplitude", 0.05);
    detail::require(std::abs(d.amplitude) <= 1.0 / kTwoPi, ErrorKind::Config,
                    "sine amplitude above 1/(2 pi) gives a negative density");
  } else if (d.preset == "dirac") {
    d.theta = j.value("theta", 0.0);
    d.measure = CircleMeasure::dirac(d.theta);
  } else if (d.preset == "measure") {
    detail::require(j.contains("measure"), ErrorKind::Config, "preset 'measure' needs a 'measure' object");
    d.measure = measure_from_json(j.at("measure"));
  } else if (d.preset != "uniform") {
    detail::fail(ErrorKind::Config, "unknown initial preset '" + d.preset + "' (uniform, sine, dirac, measure)");
  }
  return d;
}

/// F(theta) = theta/(2pi) + a sin theta.
inline double sine_cdf(double theta, double a) { return theta / kTwoPi + a * std::sin(theta); }

/// Initial CDF on M nodes; atoms are mollified first with radius eps.
inline CdfField initial_cdf(const InitialData& d, std::size_t M, double eps) {
  if (d.preset == "uniform") return CdfField::ramp(M);
  if (d.preset == "sine") {
    std::vector<double> g(M);
    for (std::size_t j = 0; j < M; ++j) g[j] = d.amplitude * std::sin(grid_node(static_cast<long>(j), M));
    return CdfField(std::move(g));
  }
  const auto& mu = *d.measure;
  if (mu.atoms().empty()) return cdf_from_measure(mu, M);
  return cdf_from_measure(mollify(mu, eps, M), M);
}

inline ParticleConfig initial_particles(const InitialData& d, int N, std::size_t grid) {
  detail::require(N >= 1, ErrorKind::Config, "N must be at least 1");
  if (d.preset == "uniform") {
    std::vector<double> xs(2 * static_cast<std::size_t>(N));
    for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = (static_cast<double>(i) + 0.5) * kPi / N;
    return ParticleConfig::from_positions(xs, 0.0);
  }
  if (d.preset == "sine") {
    const double a = d.amplitude;
    return init_from_cdf([a](double t) { return sine_cdf(t, a); }, N);
  }
  return init_from_measure(*d.measure, N, grid);
}

// ---------------------------------------------------------------------------
// Output

struct Check {
  std::string name;
  bool pass = false;
  double value = 0.0;
  double threshold = 0.0;
};

inline json to_json(const Check& c) {
  return {{"name", c.name}, {"pass", c.pass}, {"value", c.value}, {"threshold", c.threshold}};
}

/// Writes files only below its root directory.
class OutputDir {
 public:
  explicit OutputDir(std::filesystem::path root) : root_(std::move(root)) { std::filesystem::create_directories(root_); }

  const std::filesystem::path& root() const { return root_; }

  void write(const std::string& name, const std::string& content) const {
    detail::require(name.find('/') == std::string::npos && name.find("..") == std::string::npos, ErrorKind::Config,
                    "output file names must be plain names");
    std::ofstream out(root_ / name, std::ios::binary | std::ios::trunc);
    detail::require(static_cast<bool>(out), ErrorKind::Config, "cannot write " + (root_ / name).string());
    out << content;
  }

 private:
  std::filesystem::path root_;
};

/// CSV text with a header row and %.17g numbers.
class Csv {
 public:
  explicit Csv(std::initializer_list<const char*> header) {
    bool first = true;
    for (const char* h : header) {
      if (!first) os_ << ',';
      os_ << h;
      first = false;
    }
    os_ << '\n';
  }

  template <class... Ts>
  void row(const Ts&... cells) {
    bool first = true;
    ((os_ << (first ? "" : ",") << cell(cells), first = false), ...);
    os_ << '\n';
  }

  std::string str() const { return os_.str(); }

 private:
  static std::string cell(double v) { return format_double(v); }
  static std::string cell(const std::string& s) { return s; }
  static std::string cell(const char* s) { return s; }
  template <class I>
    requires std::integral<I>
  static std::string cell(I v) {
    return std::to_string(v);
  }
  std::ostringstream os_;
};

struct RunResult {
  std::string kind;
  json config;
  std::vector<Check> checks;
  json results = json::object();

  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
  }
};

struct ExperimentRequest {
  std::string kind;
  json config = json::object();  // user config; merged over the defaults
  std::optional<std::uint64_t> seed;
  std::filesystem::path out_dir;
};

namespace detail {

using rootflow::detail::fail;
using rootflow::detail::require;

inline double threshold(const json& config, const char* name) {
  const auto& t = config.at("thresholds");
  require(t.contains(name), ErrorKind::Config, std::string("missing threshold '") + name + "'");
  return t.at(name).get<double>();
}

inline SchemeConfig scheme_from(const json& c) {
  SchemeConfig s;
  s.M = c.at("M").get<std::size_t>();
  s.m = c.at("m").get<double>();
  s.T = c.at("T").get<double>();
  s.cfl_safety = c.at("cfl_safety").get<double>();
  s.backend.kind = backend_from_string(c.at("backend").get<std::string>());
  s.gradient = gradient_from_string(c.at("gradient").get<std::string>());
  if (c.contains("record_every")) s.record_every = c.at("record_every").get<std::size_t>();
  if (c.contains("record_times")) s.record_times = c.at("record_times").get<std::vector<double>>();
  s.validate();
  return s;
}

inline std::vector<int> n_list(const json& c) {
  auto v = c.at("N_list").get<std::vector<int>>();
  require(!v.empty(), ErrorKind::Config, "N_list is empty");
  for (int n : v) require(n >= 1, ErrorKind::Config, "N_list entries must be positive");
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

/// Least-squares slope of log y against log x.
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

inline void write_trajectory(Csv& csv, const FlowTrajectory& tr) {
  for (std::size_t k = 0; k < tr.configs.size(); ++k) {
    const auto& roots = tr.configs[k].roots();
    for (std::size_t i = 0; i < roots.size(); ++i) csv.row(k, tr.time(k), i, roots[i].theta, roots[i].mult);
  }
}

// -- operator-check ----------------------------------------------------------

inline void run_operator_check(RunResult& r, const OutputDir& out) {
  const auto& c = r.config;
  const auto M = c.at("M").get<std::size_t>();
  const long kmax = c.at("kmax").get<long>();
  Csv table({"backend", "op", "k", "max_error"});
  json reports = json::array();
  std::vector<std::vector<double>> a0_by_backend;
  double worst_mult = 0, worst_ramp = 0, worst_h = 0;
  for (const auto& name : c.at("backends")) {
    OperatorBackend be{backend_from_string(name.get<std::string>()), std::nullopt};
    auto rep = operator_self_test(M, kmax, be);
    for (const auto& row : rep.rows) table.row(rep.backend, row.op, row.k, row.max_error);
    reports.push_back(to_json(rep));
    worst_mult = std::max(worst_mult, rep.max_multiplier_error);
    worst_ramp = std::max(worst_ramp, rep.ramp_residual);
    worst_h = std::max(worst_h, rep.a0_minus_h_derivative);
    // shared band-limited probe for backend agreement
    std::vector<double> probe(M);
    for (std::size_t j = 0; j < M; ++j) {
      double th = grid_node(static_cast<long>(j), M);
      probe[j] = std::cos(th) - 0.3 * std::sin(3.0 * th) + 0.1 * std::cos(static_cast<double>(M / 8) * th);
    }
    a0_by_backend.push_back(half_laplacian(probe, be));
  }
  double agreement = 0.0;
  for (std::size_t b = 1; b < a0_by_backend.size(); ++b)
    for (std::size_t j = 0; j < M; ++j)
      agreement = std::max(agreement, std::abs(a0_by_backend[b][j] - a0_by_backend[0][j]));
  out.write("operator_report.json", reports.dump(2) + "\n");
  out.write("multipliers.csv", table.str());
  r.results["reports"] = reports;
  r.results["backend_agreement"] = agreement;
  r.checks.push_back({"multiplier table", worst_mult <= threshold(c, "multiplier"), worst_mult, threshold(c, "multiplier")});
  r.checks.push_back({"ramp annihilation", worst_ramp <= threshold(c, "ramp"), worst_ramp, threshold(c, "ramp")});
  r.checks.push_back({"A0 = H o d/dtheta", worst_h <= threshold(c, "a0_h_derivative"), worst_h,
                      threshold(c, "a0_h_derivative")});
  r.checks.push_back({"backend agreement", agreement <= threshold(c, "backend_agreement"), agreement,
                      threshold(c, "backend_agreement")});
}

// -- particle-run ------------------------------------------------------------

inline void run_particle(RunResult& r, const OutputDir& out, std::optional<std::uint64_t> seed) {
  const auto& c = r.config;
  const int N = c.at("N").get<int>();
  const auto grid = c.at("grid").get<std::size_t>();
  const auto init = parse_initial(c.at("initial"));
  const double tol = threshold(c, "interlacing");
  if (c.value("iid_sample", false)) {
    // i.i.d. roots from mu, one derivative step, compare with F_mu
    auto rng = trial_rng(*seed, 0);
    CdfField Fmu = init.preset == "sine" ? initial_cdf(init, grid, 0.0)
                   : init.preset == "uniform" ? CdfField::ramp(grid)
                                              : cdf_from_measure(*init.measure, grid);
    std::vector<double> xs(2 * static_cast<std::size_t>(N));
    for (auto& x : xs) {
      double p = uniform01(rng);
      if (init.preset == "sine") {
        const double a = init.amplitude;
        auto f = [a, p](double t) { return sine_cdf(t, a) - p; };
        std::uintmax_t iters = 200;
        auto [lo, hi] = boost::math::tools::toms748_solve(f, 0.0, kTwoPi, f(0.0), f(kTwoPi),
                                                          boost::math::tools::eps_tolerance<double>(52), iters);
        x = 0.5 * (lo + hi);
      } else {
        x = quantile(Fmu, p);
      }
    }
    auto start = ParticleConfig::from_positions(xs, 0.0);
    auto tr = evolve(start, 1, "iid sample");
    double d0 = sup_distance(empirical_cdf(tr.configs[0], grid), Fmu);
    double d1 = sup_distance(empirical_cdf(tr.configs[1], grid), Fmu);
    Csv csv({"step", "time", "root_index", "theta", "mult"});
    write_trajectory(csv, tr);
    out.write("trajectory.csv", csv.str());
    r.results["iid_sup_distance_roots"] = d0;
    r.results["iid_sup_distance_derivative_roots"] = d1;
    r.checks.push_back({"iid derivative roots close to mu", d1 <= threshold(c, "iid_sup_distance"), d1,
                        threshold(c, "iid_sup_distance")});
    return;
  }
  const auto steps = static_cast<std::size_t>(std::llround(c.at("T").get<double>() * 2.0 * N));
  auto tr = evolve(initial_particles(init, N, grid), steps, init.preset);
  std::size_t bad_count = 0, bad_interlace = 0;
  for (std::size_t k = 0; k + 1 < tr.configs.size(); ++k) {
    if (tr.configs[k + 1].total_count() != 2 * N) ++bad_count;
    if (!interlacing_check(tr.configs[k], tr.configs[k + 1], tol)) ++bad_interlace;
  }
  Csv csv({"step", "time", "root_index", "theta", "mult"});
  write_trajectory(csv, tr);
  out.write("trajectory.csv", csv.str());
  r.results["steps"] = steps;
  r.results["N"] = N;
  r.checks.push_back({"count conservation", bad_count == 0, static_cast<double>(bad_count), 0.0});
  r.checks.push_back({"interlacing", bad_interlace == 0, static_cast<double>(bad_interlace), 0.0});
}

// -- pde-run -----------------------------------------------------------------

inline std::string monitor_lines(const SolveResult& res) {
  std::string s;
  for (const auto& m : res.monitors) {
    json line = {{"step", m.step}, {"t", m.t}, {"min_slope", m.min_slope}, {"max_dF_over_dt", m.max_dF_over_dt},
                 {"flags", flag_names(m.flags)}};
    s += line.dump() + "\n";
  }
  return s;
}

inline void run_pde(RunResult& r, const OutputDir& out) {
  const auto& c = r.config;
  auto scheme = scheme_from(c);
  const auto init = parse_initial(c.at("initial"));
  auto F0 = initial_cdf(init, scheme.M, c.at("mollify_eps").get<double>());
  auto res = solve(F0, scheme);
  Csv csv({"t", "theta", "F", "slope"});
  for (const auto& snap : res.snapshots)
    for (std::size_t j = 0; j < snap.F.size(); ++j)
      csv.row(snap.t, snap.F.node(static_cast<long>(j)), snap.F.value(static_cast<long>(j)),
              snap.F.slope(static_cast<long>(j)));
  out.write("snapshots.csv", csv.str());
  out.write("monitor.jsonl", monitor_lines(res));
  r.results["steps"] = res.monitors.size();
  r.results["dt_max"] = cfl_dt(scheme);
  r.results["flags"] = flag_names(res.flags);
  if (init.preset == "dirac" || init.preset == "measure") r.results["mollify_eps"] = c.at("mollify_eps");
  r.checks.push_back({"monitors clean", !res.flagged(), static_cast<double>(res.flags), 0.0});
  if (init.preset == "uniform") {
    // exact solution F0(theta - pi t): periodic part -t/2
    double err = 0.0;
    for (const auto& snap : res.snapshots)
      for (double g : snap.F.periodic()) err = std::max(err, std::abs(g + 0.5 * snap.t));
    r.results["exact_solution_error"] = err;
    r.checks.push_back({"uniform translating solution", err <= threshold(c, "exact_solution"), err,
                        threshold(c, "exact_solution")});
  }
}

// -- compare -----------------------------------------------------------------

struct CompareRow {
  int N = 0;
  double e_N = 0.0;
  double t_at_max = 0.0;
  std::size_t steps = 0;
  std::size_t solver_steps = 0;
  std::size_t speed_violations = 0;
};

inline std::vector<CompareRow> compare_particles_pde(const json& c) {
  auto base = scheme_from(c);
  const auto init = parse_initial(c.at("initial"));
  const auto grid = c.at("grid").get<std::size_t>();
  auto F0 = initial_cdf(init, base.M, c.at("mollify_eps").get<double>());
  auto cert = check_Hm(F0, base.m);
  if (!cert.satisfied) {
    std::ostringstream os;
    os.precision(6);
    os << "initial data violates H_m for m = " << base.m << ": slope " << cert.slope << " near theta = " << cert.theta;
    fail(ErrorKind::Precondition, os.str());
  }
  std::vector<CompareRow> rows;
  for (int N : n_list(c)) {
    const double twoN = 2.0 * N;
    const auto steps = static_cast<std::size_t>(std::floor(base.T * twoN + 1e-9));
    SchemeConfig sc = base;
    sc.record_every = 0;
    sc.record_times.clear();
    for (std::size_t k = 1; k <= steps; ++k) sc.record_times.push_back(static_cast<double>(k) / twoN);
    auto sol = solve(F0, sc);
    std::map<std::size_t, const CdfField*> at_step;
    for (const auto& snap : sol.snapshots) {
      double k = snap.t * twoN;
      if (std::abs(k - std::round(k)) < 1e-9) at_step[static_cast<std::size_t>(std::llround(k))] = &snap.F;
    }
    auto tr = evolve(initial_particles(init, N, grid), steps, init.preset);
    CompareRow row;
    row.N = N;
    row.steps = steps;
    row.solver_steps = sol.monitors.size();
    for (const auto& mon : sol.monitors) row.speed_violations += (mon.flags & kSpeedBound) != 0;
    for (std::size_t k = 0; k <= steps; ++k) {
      auto it = at_step.find(k);
      require(it != at_step.end(), ErrorKind::Numerical, "missing solver snapshot at step " + std::to_string(k));
      double d = sup_distance(empirical_cdf(tr.configs[k], base.M), *it->second);
      if (d > row.e_N) {
        row.e_N = d;
        row.t_at_max = tr.time(k);
      }
    }
    rows.push_back(row);
  }
  return rows;
}

inline void run_compare(RunResult& r, const OutputDir& out) {
  const auto& c = r.config;
  auto rows = compare_particles_pde(c);
  Csv csv({"N", "e_N", "t_at_max", "steps"});
  std::vector<double> ns, es;
  json table = json::array();
  bool decreasing = true;
  std::size_t speed = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    speed += rows[i].speed_violations;
    csv.row(rows[i].N, rows[i].e_N, rows[i].t_at_max, rows[i].steps);
    table.push_back({{"N", rows[i].N}, {"e_N", rows[i].e_N}});
    ns.push_back(rows[i].N);
    es.push_back(rows[i].e_N);
    if (i > 0 && !(rows[i].e_N < rows[i - 1].e_N)) decreasing = false;
  }
  out.write("compare.csv", csv.str());
  r.results["table"] = table;
  if (rows.size() >= 2) r.results["fitted_loglog_slope"] = loglog_slope(ns, es);
  r.checks.push_back({"solver speed bound", speed == 0, static_cast<double>(speed), 0.0});
  if (c.at("thresholds").value("require_strict_decrease", true))
    r.checks.push_back({"e_N strictly decreasing", decreasing, static_cast<double>(decreasing), 1.0});
  if (c.at("initial").value("preset", "uniform") == "uniform") {
    double worst = -std::numeric_limits<double>::infinity();
    for (const auto& row : rows) worst = std::max(worst, row.e_N - 1.0 / (2.0 * row.N));
    r.checks.push_back({"e_N <= 1/(2N) for uniform data", worst <= threshold(c, "uniform_slack"), worst,
                        threshold(c, "uniform_slack")});
  }
}

// -- comparison-tests --------------------------------------------------------

inline void run_comparison_tests(RunResult& r, const OutputDir& out, std::uint64_t seed) {
  const auto& c = r.config;
  const auto trials = c.at("trials").get<std::size_t>();
  const int n_max = c.at("N_max").get<int>();
  const double shift = c.at("rotation_shift").get<double>();
  const double tol = threshold(c, "comparison");
  require(n_max >= 1, ErrorKind::Config, "N_max must be positive");
  Csv csv({"trial", "N", "precondition", "holds", "max_violation", "violating_index", "rotation_error"});
  std::size_t violations = 0, skipped = 0;
  double worst_rotation = 0.0, worst_violation = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < trials; ++t) {
    auto rng = trial_rng(seed, t);
    int N = 1 + static_cast<int>(uniform01(rng) * n_max);
    auto x = random_config(rng, N);
    auto y = ordered_partner(rng, x);
    auto res = discrete_comparison_check(x, y, tol);
    if (!res.precondition_met) {
      ++skipped;
    } else {
      worst_violation = std::max(worst_violation, res.max_violation);
      if (!res.holds) ++violations;
    }
    // rotation pair: y = x + c gives y' = x' + c
    auto xr = derivative_roots(x).flattened();
    auto yr = derivative_roots(x.shifted(shift)).flattened();
    double rot = 0.0;
    for (std::size_t i = 0; i < xr.size(); ++i) rot = std::max(rot, std::abs(yr[i] - xr[i] - shift));
    worst_rotation = std::max(worst_rotation, rot);
    csv.row(t, N, res.precondition_met ? 1 : 0, res.holds ? 1 : 0, res.max_violation,
            res.violating_index ? static_cast<long>(*res.violating_index) : -1L, rot);
  }
  out.write("comparison.csv", csv.str());
  r.results["trials"] = trials;
  r.results["violations"] = violations;
  r.results["precondition_failures"] = skipped;
  r.results["max_violation"] = worst_violation;
  r.results["max_rotation_error"] = worst_rotation;
  r.checks.push_back({"comparison violations", static_cast<double>(violations) <= threshold(c, "max_violations"),
                      static_cast<double>(violations), threshold(c, "max_violations")});
  r.checks.push_back({"ordered pairs generated", skipped == 0, static_cast<double>(skipped), 0.0});
  r.checks.push_back({"rotation equality", worst_rotation <= threshold(c, "rotation"), worst_rotation,
                      threshold(c, "rotation")});
}

// -- dirac -------------------------------------------------------------------

inline void run_dirac(RunResult& r, const OutputDir& out) {
  const auto& c = r.config;
  const int N = c.at("N").get<int>();
  const double theta = c.at("theta").get<double>();
  require(N >= 1, ErrorKind::Config, "N must be positive");
  const double origin = wrap_angle(theta);
  ParticleConfig start(origin, {{origin, 2 * N}});
  auto tr = evolve(start, 2 * static_cast<std::size_t>(N), "dirac");
  Csv mass({"step", "time", "mult_at_origin", "mass", "expected"});
  std::size_t mismatches = 0;
  for (std::size_t k = 0; k < tr.configs.size(); ++k) {
    int mult = 0;
    for (const auto& root : tr.configs[k].roots())
      if (root.theta == origin) mult = root.mult;
    const long expected_mult = 2L * N - static_cast<long>(k);
    if (mult != expected_mult) ++mismatches;
    mass.row(k, tr.time(k), mult, mult / (2.0 * N), static_cast<double>(expected_mult) / (2.0 * N));
  }
  Csv csv({"step", "time", "root_index", "theta", "mult"});
  write_trajectory(csv, tr);
  out.write("trajectory.csv", csv.str());
  out.write("mass.csv", mass.str());
  r.results["steps"] = tr.configs.size() - 1;
  r.checks.push_back({"mass at origin equals (2N-k)/(2N)", static_cast<double>(mismatches) <= threshold(c, "mass_mismatches"),
                      static_cast<double>(mismatches), threshold(c, "mass_mismatches")});
}

// -- vj-scaling / speed-check -------------------------------------------------

/// Reference density (1 + a cos theta) / (2pi) and its CDF.
inline double cosine_density(double theta, double a) { return (1.0 + a * std::cos(theta)) / kTwoPi; }

inline ParticleConfig cosine_quantile_config(double a, int N) {
  return init_from_cdf([a](double t) { return (t + a * std::sin(t)) / kTwoPi; }, N);
}

inline void run_vj_scaling(RunResult& r, const OutputDir& out) {
  const auto& c = r.config;
  const double a = c.at("amplitude").get<double>();
  require(std::abs(a) < 1.0, ErrorKind::Config, "amplitude must lie in (-1, 1)");
  Csv csv({"N", "max_abs_V", "ratio_min", "ratio_max", "min_step", "max_step", "K"});
  std::vector<double> ns, vs;
  for (int N : n_list(c)) {
    auto cfg = cosine_quantile_config(a, N);
    auto d = gap_diagnostics(cfg, [a](double t) { return cosine_density(t, a); }, true);
    csv.row(N, d.max_abs_error_term, d.ratio_min, d.ratio_max, d.min_step, d.max_step, d.k_constant);
    ns.push_back(N);
    vs.push_back(d.max_abs_error_term);
  }
  out.write("vj.csv", csv.str());
  const double slope = ns.size() >= 2 ? loglog_slope(ns, vs) : std::numeric_limits<double>::quiet_NaN();
  r.results["loglog_slope"] = slope;
  const double lo = threshold(c, "slope_min"), hi = threshold(c, "slope_max");
  r.checks.push_back({"log-log slope of max|V_j| >= min", slope >= lo, slope, lo});
  r.checks.push_back({"log-log slope of max|V_j| <= max", slope <= hi, slope, hi});
}

inline void run_speed_check(RunResult& r, const OutputDir& out) {
  const auto& c = r.config;
  const double a = c.at("amplitude").get<double>();
  const double ratio = c.at("degenerate_ratio").get<double>();
  require(std::abs(a) < 1.0, ErrorKind::Config, "amplitude must lie in (-1, 1)");
  Csv csv({"N", "mean_residual", "max_residual", "included", "excluded"});
  std::vector<double> means;
  for (int N : n_list(c)) {
    auto st = speed_vs_heuristic(cosine_quantile_config(a, N), ratio);
    csv.row(N, st.mean_residual, st.max_residual, st.included, st.excluded);
    means.push_back(st.mean_residual);
  }
  out.write("speed.csv", csv.str());
  const bool finite = std::all_of(means.begin(), means.end(), [](double v) { return std::isfinite(v); });
  const bool decreasing = means.size() >= 2 && means.back() < means.front();
  r.results["mean_residuals"] = means;
  r.checks.push_back({"residuals finite", finite, static_cast<double>(finite), 1.0});
  r.checks.push_back({"mean residual at largest N below smallest N", finite && decreasing,
                      means.size() >= 2 ? means.back() - means.front() : 0.0, 0.0});
}

// -- stability-check ---------------------------------------------------------

struct PairTrial {
  double epsilon = 0.0;
  PairRunStats stats;
};

/// Pair generator shared with the acceptance suite. "epsilon": G = F +
/// eps (1 + phi)/2 with |phi| <= 1 smooth; "ordered": F and G independent with
/// G shifted up until G >= F.
inline std::pair<CdfField, CdfField> random_pair(std::mt19937_64& rng, const SchemeConfig& s, int modes,
                                                 const std::string& kind, double eps_min, double eps_max) {
  for (int attempt = 0; attempt < 64; ++attempt) {
    CdfField F = random_hm_cdf(rng, s.M, s.m, modes);
    std::vector<double> g;
    if (kind == "epsilon") {
      double eps = eps_min + (eps_max - eps_min) * uniform01(rng);
      auto phi = random_smooth_periodic(rng, s.M, modes, 1.0);  // |phi'| <= 1
      double amp = 0.0;
      for (double v : phi) amp = std::max(amp, std::abs(v));
      g = F.periodic();
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += eps * 0.5 * (1.0 + (amp > 0 ? phi[j] / amp : 0.0));
    } else if (kind == "ordered") {
      CdfField G = random_hm_cdf(rng, s.M, s.m, modes);
      double lift = 0.0;
      for (std::size_t j = 0; j < s.M; ++j) lift = std::max(lift, F.periodic()[j] - G.periodic()[j]);
      lift += 0.05 * uniform01(rng);
      g = G.periodic();
      for (double& v : g) v += lift;
    } else {
      fail(ErrorKind::Config, "unknown perturbation kind '" + kind + "' (epsilon, ordered)");
    }
    CdfField G(std::move(g));
    if (check_Hm(G, s.m).satisfied) return {std::move(F), std::move(G)};
  }
  fail(ErrorKind::Config, "could not draw an H_m pair; lower epsilon_max or m");
}

inline void run_stability_check(RunResult& r, const OutputDir& out, std::uint64_t seed) {
  const auto& c = r.config;
  auto scheme = scheme_from(c);
  const auto pairs = c.at("pairs").get<std::size_t>();
  const auto steps = c.at("steps").get<std::size_t>();
  const int modes = c.at("modes").get<int>();
  const auto kind = c.at("perturbation").get<std::string>();
  const double eps_min = c.at("epsilon_min").get<double>(), eps_max = c.at("epsilon_max").get<double>();
  Csv csv({"pair", "initial_sup", "max_sup", "max_order_violation", "min_slope", "speed_violations", "steps"});
  double worst_excess = -std::numeric_limits<double>::infinity(), worst_order = 0.0;
  double worst_slope = std::numeric_limits<double>::infinity();
  std::size_t speed = 0;
  for (std::size_t p = 0; p < pairs; ++p) {
    auto rng = trial_rng(seed, p);
    auto [F, G] = random_pair(rng, scheme, modes, kind, eps_min, eps_max);
    auto st = run_pair(F, G, scheme, steps);
    csv.row(p, st.initial_sup_distance, st.max_sup_distance, st.max_order_violation, st.min_slope, st.speed_violations,
            st.steps);
    worst_excess = std::max(worst_excess, st.max_sup_distance - st.initial_sup_distance);
    worst_order = std::max(worst_order, st.max_order_violation);
    worst_slope = std::min(worst_slope, st.min_slope);
    speed += st.speed_violations;
  }
  out.write("stability.csv", csv.str());
  r.results["max_sup_excess"] = worst_excess;
  r.results["max_order_violation"] = worst_order;
  r.results["min_slope"] = worst_slope;
  r.results["speed_violations"] = speed;
  r.checks.push_back({"sup distance <= initial + slack", worst_excess <= threshold(c, "stability_slack"), worst_excess,
                      threshold(c, "stability_slack")});
  r.checks.push_back({"ordering preserved", worst_order <= threshold(c, "order"), worst_order, threshold(c, "order")});
  r.checks.push_back({"min slope >= m - slack", worst_slope >= scheme.m - threshold(c, "slope_floor"), worst_slope,
                      scheme.m - threshold(c, "slope_floor")});
  r.checks.push_back({"speed bound", static_cast<double>(speed) <= threshold(c, "speed_violations"),
                      static_cast<double>(speed), threshold(c, "speed_violations")});
}

}  // namespace detail

/// Defaults merged with the user config (JSON merge patch).
inline json effective_config(const std::string& kind, const json& user) {
  json c = default_config(kind);
  c.merge_patch(user);
  return c;
}

/// Runs one experiment and writes manifest.json, summary.json and the data
/// files into req.out_dir.
inline RunResult run_experiment(const ExperimentRequest& req) {
  const auto t0 = std::chrono::steady_clock::now();
  RunResult r;
  r.kind = req.kind;
  r.config = effective_config(req.kind, req.config);
  std::optional<std::uint64_t> seed = req.seed;
  if (!seed && r.config.contains("seed")) seed = r.config.at("seed").get<std::uint64_t>();
  if (seed) r.config["seed"] = *seed;
  detail::require(!is_randomized(req.kind, r.config) || seed.has_value(), ErrorKind::Config,
                  "experiment '" + req.kind + "' is randomized and needs a seed (--seed or \"seed\" in the config)");
  OutputDir out(req.out_dir);
  try {
    if (req.kind == "operator-check") detail::run_operator_check(r, out);
    else if (req.kind == "particle-run") detail::run_particle(r, out, seed);
    else if (req.kind == "pde-run") detail::run_pde(r, out);
    else if (req.kind == "compare") detail::run_compare(r, out);
    else if (req.kind == "comparison-tests") detail::run_comparison_tests(r, out, *seed);
    else if (req.kind == "dirac") detail::run_dirac(r, out);
    else if (req.kind == "vj-scaling") detail::run_vj_scaling(r, out);
    else if (req.kind == "speed-check") detail::run_speed_check(r, out);
    else if (req.kind == "stability-check") detail::run_stability_check(r, out, *seed);
  } catch (const json::exception& e) {
    detail::fail(ErrorKind::Config, std::string("bad config value: ") + e.what());
  }
  json checks = json::array();
  for (const auto& c : r.checks) checks.push_back(to_json(c));
  json summary = {{"kind", r.kind}, {"passed", r.passed()}, {"checks", checks}, {"results", r.results}};
  out.write("summary.json", summary.dump(2) + "\n");
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  json manifest = {{"kind", r.kind},        {"config", r.config},      {"seed", seed ? json(*seed) : json(nullptr)},
                   {"version", kVersion},   {"wall_time_s", wall},     {"threads", thread_count()},
                   {"root_tolerance", kRootTolerance}, {"merge_radius", kMergeRadius}};
  out.write("manifest.json", manifest.dump(2) + "\n");
  return r;
}

}  // namespace rootflow::lab

// rootflow <kind> [--config path.json] [--seed S] [--out dir] [overrides]
//
// Exit codes: 0 all checks pass, 1 a check failed, 2 usage or config error,
// 3 numerical failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "rootflow/lab.hpp"

namespace {

constexpr int kExitPass = 0;
constexpr int kExitCheck = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

std::string schema_hint(const std::string& kind) {
  return "defaults for '" + kind + "' (any key may be overridden in --config):\n" +
         rootflow::lab::default_config(kind).dump(2);
}

}  // namespace

int main(int argc, char** argv) {
  using rootflow::json;
  namespace lab = rootflow::lab;

  CLI::App app{"Particle and PDE laboratory for roots of trigonometric polynomials under differentiation"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::optional<long> M, N, trials, pairs;
  std::optional<double> T, m;
  bool iid = false;
  bool show_defaults = false;

  for (const auto& kind : lab::experiment_kinds()) {
    auto* sub = app.add_subcommand(kind, "run the " + kind + " experiment");
    sub->add_option("--config", config_path, "JSON config merged over the defaults")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "seed for randomized experiments");
    sub->add_option("--out", out_dir, "output directory (default rootflow-out/<kind>)");
    sub->add_option("--M", M, "grid size");
    sub->add_option("--N", N, "half particle count (replaces N_list when present)");
    sub->add_option("--trials", trials, "number of randomized trials");
    sub->add_option("--pairs", pairs, "number of random pairs");
    sub->add_option("--T", T, "final time");
    sub->add_option("--m", m, "truncation floor");
    sub->add_flag("--iid-sample", iid, "particle-run: i.i.d. roots from the initial measure, one derivative step");
    sub->add_flag("--show-defaults", show_defaults, "print the default config and exit");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitPass : kExitUsage;
  }

  const std::string kind = app.get_subcommands().front()->get_name();
  if (show_defaults) {
    std::cout << lab::default_config(kind).dump(2) << "\n";
    return kExitPass;
  }

  lab::ExperimentRequest req;
  req.kind = kind;
  req.seed = seed;
  req.out_dir = out_dir.empty() ? "rootflow-out/" + kind : out_dir;
  try {
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      req.config = json::parse(in);
      if (!req.config.is_object()) throw std::runtime_error("config root must be a JSON object");
    }
    const json defaults = lab::default_config(kind);
    auto set_if = [&](const char* key, const auto& value) {
      if (!value) return;
      if (!defaults.contains(key)) throw std::runtime_error(std::string("--") + key + " does not apply to " + kind);
      req.config[key] = *value;
    };
    set_if("M", M);
    set_if("trials", trials);
    set_if("pairs", pairs);
    set_if("T", T);
    set_if("m", m);
    if (N) {
      if (defaults.contains("N_list")) req.config["N_list"] = json::array({*N});
      else if (defaults.contains("N")) req.config["N"] = *N;
      else throw std::runtime_error("--N does not apply to " + kind);
    }
    if (iid) {
      if (kind != "particle-run") throw std::runtime_error("--iid-sample only applies to particle-run");
      req.config["iid_sample"] = true;
    }
  } catch (const std::exception& e) {
    std::cerr << "rootflow: " << e.what() << "\n" << schema_hint(kind) << "\n";
    return kExitUsage;
  }

  try {
    auto result = lab::run_experiment(req);
    for (const auto& c : result.checks)
      std::printf("%s  %s  value=%.6g threshold=%.6g\n", c.pass ? "PASS" : "FAIL", c.name.c_str(), c.value,
                  c.threshold);
    std::printf("artifacts in %s\n", req.out_dir.string().c_str());
    return result.passed() ? kExitPass : kExitCheck;
  } catch (const rootflow::Error& e) {
    std::cerr << "rootflow: " << e.what() << "\n";
    if (e.kind() == rootflow::ErrorKind::Numerical || e.kind() == rootflow::ErrorKind::Pole) return kExitNumerical;
    if (e.kind() == rootflow::ErrorKind::Config) std::cerr << schema_hint(kind) << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "rootflow: " << e.what() << "\n";
    return kExitNumerical;
  }
}

#pragma once

// JSON forms of measures, particle configurations and operator reports.

#include <cstdio>
#include <string>
#include <vector>

#include <json.hpp>

#include "rootflow/circle_measures.hpp"
#include "rootflow/error.hpp"
#include "rootflow/nonlocal_ops.hpp"
#include "rootflow/trig_roots.hpp"

namespace rootflow {

using json = nlohmann::json;

/// Shortest round-trip decimal form of a double ("%.17g").
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline json to_json(const CircleMeasure& mu) {
  json j;
  j["atoms"] = json::array();
  for (const auto& a : mu.atoms()) j["atoms"].push_back({{"theta", a.theta}, {"w", a.weight}});
  if (mu.has_density()) j["density"] = {{"M", mu.density().size()}, {"samples", mu.density()}};
  return j;
}

inline CircleMeasure measure_from_json(const json& j) {
  try {
    std::vector<Atom> atoms;
    if (j.contains("atoms"))
      for (const auto& a : j.at("atoms")) atoms.push_back({a.at("theta").get<double>(), a.at("w").get<double>()});
    std::vector<double> density;
    if (j.contains("density")) {
      const auto& d = j.at("density");
      density = d.at("samples").get<std::vector<double>>();
      if (d.contains("M"))
        detail::require(d.at("M").get<std::size_t>() == density.size(), ErrorKind::Config,
                        "density.M does not match the number of samples");
    }
    return {std::move(atoms), std::move(density)};
  } catch (const json::exception& e) {
    detail::fail(ErrorKind::Config, std::string("malformed measure JSON: ") + e.what());
  }
}

inline json to_json(const ParticleConfig& c) {
  json j;
  j["anchor"] = c.anchor();
  j["roots"] = json::array();
  for (const auto& r : c.roots()) j["roots"].push_back({{"theta", r.theta}, {"mult", r.mult}});
  return j;
}

inline ParticleConfig particles_from_json(const json& j) {
  try {
    std::vector<Root> roots;
    for (const auto& r : j.at("roots")) roots.push_back({r.at("theta").get<double>(), r.value("mult", 1)});
    return {j.value("anchor", 0.0), std::move(roots)};
  } catch (const json::exception& e) {
    detail::fail(ErrorKind::Config, std::string("malformed particle JSON: ") + e.what());
  }
}

inline json to_json(const OperatorReport& r) {
  json rows = json::array();
  for (const auto& row : r.rows) rows.push_back({{"op", row.op}, {"k", row.k}, {"max_error", row.max_error}});
  return {{"backend", r.backend},
          {"M", r.M},
          {"kmax", r.kmax},
          {"max_multiplier_error", r.max_multiplier_error},
          {"ramp_residual", r.ramp_residual},
          {"a0_minus_h_derivative", r.a0_minus_h_derivative},
          {"hilbert_prefactor", r.hilbert_prefactor},
          {"half_laplacian_prefactor", r.half_laplacian_prefactor},
          {"rows", rows}};
}

}  // namespace rootflow

#include "mbsde/config.hpp"

#include "mbsde/library.hpp"

#include <cmath>
#include <fstream>
#include <initializer_list>
#include <sstream>

namespace mbsde {

namespace {

using nlohmann::json;

void only(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    if (!known) throw ConfigError("unknown field '" + where + "." + k + "'");
  }
}

double number(const json& j, const std::string& where) {
  if (!j.is_number()) throw ConfigError(where + " must be a number");
  double v = j.get<double>();
  if (!std::isfinite(v)) throw ConfigError(where + " must be finite");
  return v;
}

double positive(const json& j, const std::string& where) {
  double v = number(j, where);
  if (!(v > 0)) throw ConfigError(where + " must be positive");
  return v;
}

std::uint64_t count(const json& j, const std::string& where, std::uint64_t min = 1) {
  std::uint64_t v = 0;
  if (j.is_number_unsigned()) {
    v = j.get<std::uint64_t>();
  } else if (j.is_number_integer()) {
    if (j.get<std::int64_t>() < 0) throw ConfigError(where + " must be non-negative");
    v = static_cast<std::uint64_t>(j.get<std::int64_t>());
  } else if (j.is_number_float() && j.get<double>() >= 0 && j.get<double>() < 9e15
             && std::floor(j.get<double>()) == j.get<double>()) {
    v = static_cast<std::uint64_t>(j.get<double>());  // accepts 1e5
  } else {
    throw ConfigError(where + " must be a non-negative integer");
  }
  if (v < min) throw ConfigError(where + " must be >= " + std::to_string(min));
  return v;
}

std::string text(const json& j, const std::string& where) {
  if (!j.is_string()) throw ConfigError(where + " must be a string");
  return j.get<std::string>();
}

}  // namespace

Route parse_route(const std::string& s) {
  if (s == "picard") return Route::picard;
  if (s == "project") return Route::project;
  if (s == "markovian") return Route::markovian;
  if (s == "auto") return Route::automatic;
  throw ConfigError("unknown route '" + s + "' (picard | project | markovian | auto)");
}

std::string to_string(Route r) {
  switch (r) {
    case Route::picard: return "picard";
    case Route::project: return "project";
    case Route::markovian: return "markovian";
    case Route::automatic: return "auto";
  }
  return "auto";
}

RunConfig parse_config(const json& j) {
  only(j, "config", {"problem", "grid", "ensemble", "route", "estimator", "tolerances", "output"});
  RunConfig c;
  if (!j.contains("problem")) throw ConfigError("missing field 'problem'");
  const json& p = j["problem"];
  if (p.is_string()) {
    c.scenario = p.get<std::string>();
  } else {
    only(p, "problem", {"scenario", "params"});
    if (!p.contains("scenario")) throw ConfigError("missing field 'problem.scenario'");
    c.scenario = text(p["scenario"], "problem.scenario");
    if (p.contains("params")) {
      if (!p["params"].is_object()) throw ConfigError("problem.params must be an object");
      c.params = p["params"];
    }
  }
  find_scenario(c.scenario);

  if (j.contains("grid")) {
    const json& g = j["grid"];
    only(g, "grid", {"T", "N"});
    if (g.contains("T")) c.T = positive(g["T"], "grid.T");
    if (g.contains("N")) c.N = count(g["N"], "grid.N");
  }
  if (j.contains("ensemble")) {
    const json& e = j["ensemble"];
    only(e, "ensemble", {"M", "seed"});
    if (e.contains("M")) c.M = static_cast<Index>(count(e["M"], "ensemble.M", 2));
    if (e.contains("seed")) c.seed = count(e["seed"], "ensemble.seed", 0);
  }
  if (j.contains("route")) c.route = parse_route(text(j["route"], "route"));
  if (j.contains("estimator")) {
    const json& e = j["estimator"];
    only(e, "estimator", {"kind", "basis", "branching", "budget", "nested_paths"});
    if (e.contains("kind")) c.estimator = parse_estimator(text(e["kind"], "estimator.kind"));
    if (e.contains("basis")) {
      const json& b = e["basis"];
      only(b, "estimator.basis", {"family", "degree", "cross_degree", "cells"});
      if (b.contains("family")) c.basis.family = parse_basis_family(text(b["family"], "estimator.basis.family"));
      if (b.contains("degree")) c.basis.degree = static_cast<int>(count(b["degree"], "estimator.basis.degree", 0));
      if (b.contains("cross_degree"))
        c.basis.cross_degree = static_cast<int>(count(b["cross_degree"], "estimator.basis.cross_degree", 0));
      if (b.contains("cells")) c.basis.cells = static_cast<int>(count(b["cells"], "estimator.basis.cells"));
    }
    if (e.contains("branching")) c.branching = count(e["branching"], "estimator.branching", 2);
    if (e.contains("budget")) c.budget = positive(e["budget"], "estimator.budget");
    if (e.contains("nested_paths")) c.nested_paths = static_cast<Index>(count(e["nested_paths"], "estimator.nested_paths"));
  }
  if (j.contains("tolerances")) {
    const json& t = j["tolerances"];
    only(t, "tolerances", {"picard_tol", "max_iter", "window_steps", "outer_tol", "max_outer", "bound_slack",
                           "se_mult", "oracle_tolerance"});
    if (t.contains("picard_tol")) c.picard_tol = positive(t["picard_tol"], "tolerances.picard_tol");
    if (t.contains("max_iter")) c.max_iter = count(t["max_iter"], "tolerances.max_iter");
    if (t.contains("window_steps") && !t["window_steps"].is_null())
      c.window_steps = count(t["window_steps"], "tolerances.window_steps");
    if (t.contains("outer_tol")) c.outer_tol = positive(t["outer_tol"], "tolerances.outer_tol");
    if (t.contains("max_outer")) c.max_outer = count(t["max_outer"], "tolerances.max_outer");
    if (t.contains("bound_slack")) {
      c.bound_slack = number(t["bound_slack"], "tolerances.bound_slack");
      if (c.bound_slack < 0) throw ConfigError("tolerances.bound_slack must be non-negative");
    }
    if (t.contains("se_mult")) c.se_mult = positive(t["se_mult"], "tolerances.se_mult");
    if (t.contains("oracle_tolerance") && !t["oracle_tolerance"].is_null())
      c.oracle_tolerance = positive(t["oracle_tolerance"], "tolerances.oracle_tolerance");
  }
  if (j.contains("output")) c.output = text(j["output"], "output");
  if (c.window_steps && c.N % *c.window_steps)
    throw ConfigError("tolerances.window_steps must divide grid.N");
  return c;
}

RunConfig parse_config_text(const std::string& s) {
  json j;
  try {
    j = json::parse(s);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(j);
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

json to_json(const RunConfig& c) {
  json j;
  j["problem"] = {{"scenario", c.scenario}, {"params", c.params}};
  j["grid"] = {{"N", c.N}};
  if (c.T) j["grid"]["T"] = *c.T;
  j["ensemble"] = {{"M", c.M}, {"seed", c.seed}};
  j["route"] = to_string(c.route);
  j["estimator"] = {{"kind", to_string(c.estimator)},
                    {"basis",
                     {{"family", to_string(c.basis.family)},
                      {"degree", c.basis.degree},
                      {"cross_degree", c.basis.cross_degree},
                      {"cells", c.basis.cells}}},
                    {"branching", c.branching},
                    {"budget", c.budget},
                    {"nested_paths", c.nested_paths}};
  j["tolerances"] = {{"picard_tol", c.picard_tol}, {"max_iter", c.max_iter},     {"outer_tol", c.outer_tol},
                     {"max_outer", c.max_outer},   {"bound_slack", c.bound_slack}, {"se_mult", c.se_mult}};
  if (c.window_steps) j["tolerances"]["window_steps"] = *c.window_steps;
  if (c.oracle_tolerance) j["tolerances"]["oracle_tolerance"] = *c.oracle_tolerance;
  j["output"] = c.output;
  return j;
}

}  // namespace mbsde

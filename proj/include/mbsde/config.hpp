#pragma once

#include "mbsde/basis.hpp"
#include "mbsde/condexp.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>

namespace mbsde {

enum class Route { picard, project, markovian, automatic };

Route parse_route(const std::string& s);
std::string to_string(Route r);

/// One run, read from a JSON document:
///
///   {
///     "problem":    "zero-driver" | {"scenario": "linear-vector", "params": {...}},
///     "grid":       {"T": 1.0, "N": 32},
///     "ensemble":   {"M": 10000, "seed": 1},
///     "route":      "picard" | "project" | "markovian" | "auto",
///     "estimator":  {"kind": "regression" | "nested",
///                    "basis": {"family": "polynomial", "degree": 5, "cross_degree": 2, "cells": 8},
///                    "branching": 1000, "budget": 5e9, "nested_paths": 200},
///     "tolerances": {"picard_tol": 1e-8, "max_iter": 50, "window_steps": 4, "outer_tol": 1e-8,
///                    "max_outer": 30, "bound_slack": 0.05, "se_mult": 3,
///                    "oracle_tolerance": 1e-3},
///     "output":     "out/run1"
///   }
///
/// Only "problem" is required. Unknown fields anywhere are errors. grid.T
/// defaults to the scenario's horizon.
struct RunConfig {
  std::string scenario;
  nlohmann::json params = nlohmann::json::object();
  std::optional<double> T;
  std::size_t N = 32;
  Index M = 10000;
  std::uint64_t seed = 0;
  Route route = Route::automatic;
  EstimatorKind estimator = EstimatorKind::regression;
  BasisSpec basis;
  std::size_t branching = 1000;
  double budget = 5e9;
  Index nested_paths = 200;
  double picard_tol = 1e-8;
  std::size_t max_iter = 50;
  std::optional<std::size_t> window_steps;
  double outer_tol = 1e-8;
  std::size_t max_outer = 30;
  double bound_slack = 0.05;
  double se_mult = 3.0;
  std::optional<double> oracle_tolerance;  // replaces se_mult SE + allowance when set
  std::string output = "mbsde-out";
};

/// Throws ConfigError with the offending field path.
RunConfig parse_config(const nlohmann::json& j);
RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path);

/// Round-trips through parse_config.
nlohmann::json to_json(const RunConfig& c);

}  // namespace mbsde

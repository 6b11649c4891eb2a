#pragma once

#include "mbsde/config.hpp"
#include "mbsde/diagnostics.hpp"
#include "mbsde/library.hpp"
#include "mbsde/solution.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace mbsde {

/// Process exit codes of the batch front end.
enum ExitCode : int { exit_ok = 0, exit_config = 1, exit_divergence = 2, exit_bound = 3 };

/// One row of a verdict table.
struct Check {
  std::string name;
  std::string kind;       // bound | consistency | oracle | structure | solver
  std::string condition;  // observed <= threshold, in words
  double threshold = 0.0;
  double observed = 0.0;
  bool pass = true;
};

nlohmann::json to_json(const Check& c);

/// Everything a run produces. Serialised artifacts are plain strings so that
/// byte-identical reruns can be compared directly.
struct RunArtifacts {
  int exit_code = exit_ok;
  std::string message;  // human-readable outcome
  nlohmann::json summary;
  nlohmann::json diagnostics;
  std::string knots_csv;      // t,mean_Y,max_abs_Y,bound_phi,mean_abs_Z[,mean_Y1,...]
  std::string reports_jsonl;  // one solver report per line
  std::vector<Check> checks;
};

/// Solves the configured problem along the selected route. Exit code 0 needs a
/// converged solver and passing bound checks; 2 is solver divergence, 3 a
/// failed bound, 1 an invalid config. Never throws for those cases.
RunArtifacts run(const RunConfig& c);

/// run() plus structural validation, Lipschitz certificate, route consistency
/// rows, backend agreement and the scenario's oracle. Exit 0 iff every check passes.
RunArtifacts verify(const RunConfig& c);

/// Writes summary.json, diagnostics.json, knots.csv and reports.jsonl into dir.
void write_artifacts(const RunArtifacts& a, const std::string& dir);

/// Fixed-width table: name, kind, observed, threshold, verdict.
std::string verdict_table(const std::vector<Check>& checks);

/// Convergence table over N or M: one row per value and Y_0 coordinate.
struct SweepResult {
  std::string parameter;  // "N" or "M"
  std::string csv;        // value,coordinate,y0,se,oracle,abs_error,residual_mean_sq,exit_code
  std::vector<double> values;
  std::vector<double> residual_mean_sq;
  std::vector<double> max_abs_error;
  std::vector<double> max_se;   // largest Y_0 coordinate SE per value
  double residual_slope = 0.0;  // least-squares slope of log residual vs log dt (N sweeps)
  double error_slope = 0.0;
  int exit_code = exit_ok;      // worst code over the sweep
};

SweepResult sweep(const RunConfig& c, const std::string& parameter, const std::vector<std::size_t>& values);

/// Nested Monte Carlo reference for Y_0 of the fitted solution plus the
/// scenario's own oracle where it has one.
nlohmann::json oracle_reference(const RunConfig& c);

/// Least-squares slope of log y against log x.
double log_log_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace mbsde

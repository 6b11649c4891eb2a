#pragma once

#include "mbsde/condexp.hpp"
#include "mbsde/problem.hpp"
#include "mbsde/simulate.hpp"
#include "mbsde/solution.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace mbsde {

/// Piecewise-constant basis with 8 cells per coordinate. Cell averages are
/// monotone and stay inside the payload range, so tail paths cannot inflate
/// the max over paths the way polynomial extrapolation does.
BasisSpec bmo_basis();

/// Grid-knot proxy for the BMO norm of Z over the field's window: the max over
/// knots of sqrt(max_m E_k sum_{j>=k} |Z_j|^2 dt). A lower bound for the
/// supremum over stopping times.
double estimate_bmo(const SolutionField& sol, const PathEnsemble& ens, const BasisSpec& spec = bmo_basis());
/// Same with conditional expectations from the nested estimator (Z given as a
/// fitted function of the state at every knot).
double estimate_bmo_nested(const SolutionField& sol, const PathEnsemble& ens, const NestedOptions& opt);

double sup_norm_y(const SolutionField& sol);
/// sqrt(mean_m sum_k |Z_k|^2 dt)
double h2_norm_z(const SolutionField& sol);

struct ResidualReport {
  std::vector<double> t;
  Matrix mean;          // knots x d
  Matrix se;            // knots x d, includes the sampling error of the Z dW term
  Vector mean_sq;       // per knot, mean over paths of |r|^2
  Vector max_abs;       // per knot
  double avg_sq = 0.0;  // average of mean_sq over knots
  double total_sq = 0.0;
  std::vector<std::size_t> flagged;  // knots whose mean is more than z_threshold SE from 0
  bool centered = true;
};

/// r[m,k] = Y_k - Y_{k+1} - f(t_k, Y_k, Z_k) dt + Z_k dW_k on every knot of the window.
ResidualReport residual_check(const BsdeProblem& p, const SolutionField& sol, const PathEnsemble& ens,
                              double z_threshold = 3.0);

struct BoundVerdict {
  std::string name;
  std::string source;  // constants the bound is built from
  double bound = 0.0;  // at the first knot
  double max_observed = 0.0;
  double slack = 0.0;  // min over knots of allowed - observed
  std::size_t worst_knot = 0;
  bool pass = true;
  std::vector<double> t, curve, observed;
};

/// max_m |Y_k| <= (C+1) exp((C+1)^2 (T-t_k)/2) (1 + rel_slack) + se_mult SE_k at every knot.
BoundVerdict check_y_bound(const SolutionField& sol, double C, double T, double rel_slack = 0.05,
                           double se_mult = 3.0);

struct DriftCheck {
  KnotArray H;  // N knots, n columns (zero outside the field's window)
  MeasureWeight weight;
  MeanEstimate terminal_mean;
  double max_ratio = 0.0;  // max |H| / (rho(|Y|)|Z|) over points with |Z| > 0
};

/// H = rho(|Y|) |Z| (Y^T Z) / |Y^T Z|, set to 0 where |Y^T Z| < 1e-14, and its
/// stochastic exponential.
DriftCheck build_b4_drift(const SolutionField& sol, const RhoSpec& rho, const PathEnsemble& ens);

struct DiagnosticsReport {
  Index paths = 0;
  double sup_y = 0.0;
  double h2_z = 0.0;
  double bmo_z = 0.0;
  std::string bmo_caveat = "knot-supremum proxy: lower bound for the stopping-time BMO norm";
  std::vector<BoundVerdict> verdicts;
  std::optional<ResidualReport> residual;
  std::optional<MeanEstimate> drift_weight;
  std::vector<std::string> notes;

  bool all_pass() const;
};

DiagnosticsReport diagnose(const BsdeProblem& p, const SolutionField& sol, const PathEnsemble& ens);

nlohmann::json to_json(const DiagnosticsReport& r);
nlohmann::json to_json(const BoundVerdict& v);
nlohmann::json to_json(const ResidualReport& r);

/// Regression models of the stored Y_k and Z_k on the basis of W_{t_k} at every
/// knot of the window. Exact when the field already is a basis function of W_{t_k}.
std::vector<KnotModel> refit_models(const SolutionField& sol, const PathEnsemble& ens, const BasisSpec& spec = {});

struct BackendAgreement {
  std::size_t knot = 0;
  Index paths = 0;          // paths re-evaluated by the nested estimator
  std::size_t branching = 0;
  Vector nested_mean;       // per coordinate, mean of the nested values over the checked paths
  Vector rms_diff;          // per coordinate, RMS over paths of Y_regression - Y_nested
  Vector nested_se;         // per coordinate, RMS of the per-path nested SE
  double regression_se = 0.0;
  Vector tolerance;         // se_mult sqrt(nested_se^2 + regression_se^2)
  bool pass = true;
};

/// Re-evaluates Y_k = E_k[xi + sum_{j>=k} f(t_j, Y_j, Z_j) dt] by nested simulation
/// along fresh suffixes, with (Y_j, Z_j) read from the field's fitted functions
/// (refitted on W_{t_j} when the field carries none), and compares with Y_k.
BackendAgreement backend_agreement(const BsdeProblem& p, const SolutionField& sol, const PathEnsemble& ens,
                                   std::size_t knot, const NestedOptions& opt, const BasisSpec& spec = {},
                                   double se_mult = 3.0);

nlohmann::json to_json(const BackendAgreement& b);

/// CSV with columns t,bound,max_observed.
std::string bound_curve_csv(const BoundVerdict& v);

}  // namespace mbsde

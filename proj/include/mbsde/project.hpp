#pragma once

#include "mbsde/picard.hpp"
#include "mbsde/problem.hpp"
#include "mbsde/simulate.hpp"
#include "mbsde/solution.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace mbsde {

/// (U, V) of the projected one-dimensional equation, stored as a d = 1 field.
struct ScalarSolution {
  SolutionField field;  // Y holds U (N+1 knots), Z holds V (N knots, n cols)
  std::vector<PicardReport> reports;
  bool converged = false;
  std::string route;  // "picard" or "cole-hopf"
  std::vector<std::string> warnings;

  Eigen::Map<const Matrix> U(std::size_t k) const { return field.y(k); }
  Eigen::Map<const Matrix> V(std::size_t k) const { return field.z(k); }
};

/// One-dimensional problem U = a^T xi + int F(s, U, V) ds - int V dW with
/// F = a^T P + u Q + v R. Carries no structural certificate.
BsdeProblem projected_problem(const BsdeProblem& p);

/// Picard engine with adaptive windows on the projected problem. The options'
/// window_steps, if set, disables adaptivity.
ScalarSolution solve_scalar_quadratic(const BsdeProblem& p, const PathEnsemble& ens,
                                      const PicardOptions& opt = {});

/// Exact transform for F = (gamma/2)|v|^2: U_k = log E_k[e^{gamma a^T xi}] / gamma and
/// V_k = Z(e^{gamma U_{k+1}}) / (gamma e^{gamma U_k}). Throws SolverError when a
/// fitted exponential moment is not positive.
ScalarSolution solve_scalar_cole_hopf(const BsdeProblem& p, const PathEnsemble& ens, double gamma,
                                      const BasisSpec& spec = {});

struct GrowthCheck {
  std::string name;
  std::size_t samples = 0;
  std::size_t violations = 0;
  double max_excess = 0.0;  // max(lhs - rhs), 0 when none
};

struct FrozenCoefficients {
  KnotArray P;  // N knots, d cols
  KnotArray Q;  // N knots, 1 col
  KnotArray R;  // N knots, n cols
  std::vector<GrowthCheck> growth;
  std::vector<std::string> warnings;
};

/// P, Q, R evaluated along (t_k, U_k, V_k). Growth violations are warnings.
FrozenCoefficients freeze_coefficients(const BsdeProblem& p, const PathEnsemble& ens,
                                       const ScalarSolution& scalar);

struct LinearSolveInfo {
  double min_log_gamma = 0.0;
  double max_log_gamma = 0.0;
  double min_ess = 0.0;  // smallest effective sample size (measure route)
  MeanEstimate weight_mean;  // E[weight_T] (measure route)
  std::vector<std::string> warnings;
};

/// Y_k = E_k[(G_N/G_k) xi + sum_{j>=k} (G_j/G_k) P_j dt] with dG = G (Q dt + R^T dW);
/// Z_k = Z(G_{k+1}/G_k Y_{k+1}) - Y_k R_k^T. Aborts when G underflows 1e-300.
SolutionField solve_linear_via_gamma(const PathEnsemble& ens, const FrozenCoefficients& c,
                                     const Matrix& terminal, const BasisSpec& spec,
                                     LinearSolveInfo* info = nullptr);

/// Same equation under the measure with density E^R: Y from weighted
/// regressions of e^{int Q} xi + int e^{int Q} P ds, Z against dW - R dt.
SolutionField solve_linear_via_measure(const PathEnsemble& ens, const FrozenCoefficients& c,
                                       const Matrix& terminal, const BasisSpec& spec,
                                       LinearSolveInfo* info = nullptr);

/// Knot-wise agreement of two fields: per knot the root-mean-square over paths
/// of the difference against 3 combined regression SE.
struct FieldComparison {
  std::vector<double> t;
  std::vector<double> rms_diff;
  std::vector<double> tolerance;
  double max_abs = 0.0;
  double max_ratio = 0.0;  // max rms_diff / tolerance
  bool pass = true;
};

FieldComparison compare_fields(const SolutionField& a, const SolutionField& b, double se_mult = 3.0);

struct ConsistencyReport {
  FieldComparison y;       // a^T Y against U
  double max_abs_y = 0.0;  // max over knots and paths of |a^T Y - U|
  double z_gap = 0.0;      // mean over paths of sum_k |a^T Z_k - V_k|^2 dt
  double z_scale = 0.0;    // same for |V|^2, for scale
  bool pass = true;
};

ConsistencyReport projection_consistency(const SolutionField& sol, const ScalarSolution& scalar,
                                         const Vector& a, double se_mult = 3.0);

struct ProjectionPipeline {
  ScalarSolution scalar;
  FrozenCoefficients coeffs;
  SolutionField gamma;
  SolutionField measure;
  LinearSolveInfo gamma_info, measure_info;
  FieldComparison routes;
  ConsistencyReport consistency;

  bool pass() const { return scalar.converged && routes.pass && consistency.pass; }
};

/// Scalar solve, freeze, both linear routes, consistency.
ProjectionPipeline run_projection(const BsdeProblem& p, const PathEnsemble& ens,
                                  const PicardOptions& opt = {});

nlohmann::json to_json(const FieldComparison& c);
nlohmann::json to_json(const ProjectionPipeline& r);

}  // namespace mbsde

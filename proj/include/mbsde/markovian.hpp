#pragma once

#include "mbsde/condexp.hpp"
#include "mbsde/problem.hpp"
#include "mbsde/simulate.hpp"
#include "mbsde/solution.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace mbsde {

/// q_k(x) and r_k(x) for k = 0..N as fitted functions of the forward state.
/// The model at knot N fits h; its z part is empty.
struct DecouplingField {
  TimeGrid grid;
  Index d = 1;
  Index n = 1;
  std::vector<KnotModel> models;
  std::vector<Vector> lo, hi;  // per knot, range of the states the model was fitted on
  Vector y_se;                 // regression SE of q per knot
  std::vector<double> deltas;  // sup-norm change per outer iteration

  Vector q(std::size_t k, const Vector& x) const { return models.at(k).y(x); }
  Matrix r(std::size_t k, const Vector& x) const { return models.at(k).z(x, d, n); }
};

/// Field export: one row per coefficient, columns knot,basis,coordinate,coefficient.
/// Coordinates 0..d-1 are q; d + (j + d i) is r_{j,i}.
std::string field_csv(const DecouplingField& f);

struct FbsdeOptions {
  BasisSpec basis;
  double tol = 1e-8;
  std::size_t max_outer = 30;
  Vector x0;  // forward start, zero when empty
};

struct FbsdeResult {
  KnotArray forward;     // P on N+1 knots
  SolutionField field;   // (Q, R) along the forward paths
  DecouplingField decoupling;
  std::size_t outer_iterations = 0;
  bool converged = false;
  double max_q_sq = 0.0;  // max over knots and paths of |Q|^2
  std::vector<std::string> warnings;
};

/// Explicit multi-step regression sweep along given forward states:
///   Z_k = Z(Y_{k+1}),  Y_k = E_k[h(X_N) + sum_{j>=k} F(t_j, X_j, Y_{j+1}, Z_j) dt].
/// Regression states are X_k; martingale increments are dW_k.
SolutionField backward_sweep(const BsdeProblem& p, const PathEnsemble& ens, const KnotArray& states,
                             const BasisSpec& spec, DecouplingField* fit = nullptr);

/// Outer iteration: forward Euler with drift G(t, x, q(t,x), r(t,x)) under the
/// current field, backward sweep with driver F, refit. Throws SolverError when
/// |Q| exceeds 10 sqrt(C^2 e^{aT}(1+T)) (growth constant declared).
FbsdeResult solve_fbsde_decoupling(const BsdeProblem& p, const PathEnsemble& ens, const FbsdeOptions& opt = {});

struct TranslationInfo {
  double outside_fraction = 0.0;  // points outside the fitted range at some knot
  std::vector<std::string> warnings;
};

/// (Y, Z) = (q(t, W), r(t, W)) on the original Brownian paths; Y_N = h(W_T).
SolutionField fbsde_to_bsde(const BsdeProblem& p, const DecouplingField& field, const PathEnsemble& ens,
                            TranslationInfo* info = nullptr);

/// Per-coordinate quantile box holding the central `mass` of the rows of X.
std::pair<Vector, Vector> central_box(const Eigen::Ref<const Matrix>& X, double mass = 0.9);

/// Root-mean-square over paths of |r_k(x) - grad q_k(x)| relative to the RMS of r_k,
/// max over knots 0..N-1, with central differences of the fitted q.
double gradient_gap(const DecouplingField& field, const KnotArray& states, double step = 1e-4);

/// Stochastic exponential of -G(t, P, Q, R) along the converged forward paths.
MeasureWeight forward_measure(const BsdeProblem& p, const PathEnsemble& ens, const FbsdeResult& r);

struct LipschitzOptions {
  std::size_t samples = 10000;
  std::uint64_t seed = 0;
  double spread = 2.0;  // sample points ~ spread N(0, 1) per coordinate
};

struct LipschitzEstimate {
  std::string name;
  double constant = 0.0;  // max difference quotient
};

struct LipschitzReport {
  std::vector<LipschitzEstimate> estimates;  // F, G, h
  double at_zero = 0.0;  // max of |F(t,x,0,0)| + |G(t,x,0,0)| + |h(x)|
  double max_constant = 0.0;
  std::optional<double> declared;
  bool pass = true;  // max(max_constant, at_zero) <= declared (true when undeclared)
};

/// Difference quotients |F(p) - F(p')| / (|x-x'| + |y-y'| + |z-z'|) over random
/// pairs whose x, y, z offsets have independent log-uniform scales.
LipschitzReport lipschitz_certificate(const BsdeProblem& p, const LipschitzOptions& opt = {});

nlohmann::json to_json(const LipschitzReport& r);

}  // namespace mbsde

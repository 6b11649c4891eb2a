#pragma once

#include "mbsde/condexp.hpp"
#include "mbsde/problem.hpp"
#include "mbsde/solution.hpp"

#include <optional>
#include <string>
#include <vector>

namespace mbsde {

/// Ball B_R in which the short-horizon map is a contraction.
struct BallParams {
  double C = 1.0;
  double R = 3.0;
  double eps = 0.5;
  double rhoR = 0.0;
  double h = 0.0;
};

struct HorizonOptions {
  double horizon = 1.0;        // upper cap on h
  bool contraction = true;     // also enforce the rho(R) conditions
  double rel_precision = 1e-6;
};

/// Largest h <= horizon with
///   (i)  C h (1+R) + C rhoR h^{eps/2} R^{2-eps} <= C
///   (ii) rhoR h <= 1/8 and rhoR sqrt(2 (h + h^eps (2R)^{2-2eps})) <= 1/8.
double choose_h(double C, double R, double eps, double rhoR, const HorizonOptions& opt = {});

/// Left-hand sides of the horizon conditions at h, for postcondition replay.
struct HorizonSlack {
  double invariance;     // C - lhs(i)
  double lipschitz_y;    // 1/8 - rhoR h
  double lipschitz_z;    // 1/8 - rhoR sqrt(...)
};
HorizonSlack horizon_slack(double C, double R, double eps, double rhoR, double h);

/// Ball constants for the global problem: C replaced by (C+1) exp((C+1)^2 T/2), R = 3C'.
BallParams global_ball(const SubquadraticStructure& s, double T, bool contraction = true);

struct PicardOptions {
  double tol = 1e-8;
  std::size_t max_iter = 50;
  BasisSpec basis;
  std::optional<std::size_t> window_steps;  // overrides the horizon rule
  bool contraction_rule = true;              // enforce (ii) in choose_h
  bool adaptive = false;                     // halve windows that fail to contract
  double max_ratio = 0.6;
  std::size_t max_windows = 1000000;
};

struct PicardReport {
  Window window;
  std::size_t iterations = 0;
  std::vector<double> sup_deltas;
  std::vector<double> bmo_deltas;
  std::vector<double> ratios;  // from the second iteration on
  bool converged = false;
  double h = 0.0;
  double R = 0.0;
  double sup_y = 0.0;
  double bmo_z = 0.0;
  std::string message;

  double delta(std::size_t i) const;
  double max_ratio() const;
};

/// One application of the map phi on a window. `candidate` supplies (y, z) at
/// the knots first..last-1; null means the zero-driver solution.
SolutionField phi_step(const BsdeProblem& p, ProjectorCache& cache, Window w,
                       const SolutionField* candidate, const Matrix& terminal);

/// Iterates phi on one window from the zero-driver solution.
std::pair<SolutionField, PicardReport> solve_short_horizon(const BsdeProblem& p, ProjectorCache& cache,
                                                           Window w, const Matrix& terminal,
                                                           const PicardOptions& opt,
                                                           const BallParams* ball = nullptr);

struct GlobalSolution {
  SolutionField field;
  std::vector<PicardReport> reports;  // in solve order (last window first)
  BallParams ball;
  std::size_t window_steps = 0;
  bool converged = false;
  std::vector<std::string> warnings;
};

/// Solves backward window by window and pastes the pieces. Throws SolverError
/// (carrying the failing report in its message) when a window diverges and
/// `partial` is null; otherwise stores the partial result there first.
GlobalSolution solve_global(const BsdeProblem& p, const PathEnsemble& ens, const PicardOptions& opt,
                            GlobalSolution* partial = nullptr);

/// Largest divisor w of N with w dt <= h (at least 1).
std::size_t window_steps_for(const TimeGrid& g, double h);

/// max over window knots of sqrt(max_m E_k sum_{j>=k} |Z_j|^2 dt), regression based.
double window_bmo(ProjectorCache& cache, const KnotArray& Z, Window w, double dt);

}  // namespace mbsde

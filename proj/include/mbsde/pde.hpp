#pragma once

#include "mbsde/markovian.hpp"
#include "mbsde/problem.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace mbsde {

/// Spatial box [-L, L]^n with spacing dx; the explicit step is the largest
/// dt <= dx^2 / (2 n safety) that divides each grid step, unless dt is given.
struct PdeGrid {
  double L = 5.0;
  double dx = 0.02;
  double safety = 1.0;
  std::optional<double> dt;
  bool enforce_cfl = true;
};

/// u(t_k, .) on the nodes of the box at every knot of a time grid.
struct PdeField {
  TimeGrid grid;
  PdeGrid pde;
  Index n = 1;
  Index d = 1;
  Index per_axis = 0;          // nodes per axis
  double dt = 0.0;             // explicit step
  std::size_t substeps = 0;    // explicit steps per grid step
  std::vector<Matrix> u;       // per knot: nodes x d, node index i0 + per_axis i1

  Index nodes() const;
  Vector node(Index i) const;  // coordinates
  /// Multilinear interpolation at x (clamped to the box).
  Vector value(std::size_t k, const Vector& x) const;
};

/// Explicit backward scheme for u_t + (1/2) Lap u + F(t,x,u,Du) + (Du) G(t,x,u,Du) = 0,
/// u(T) = h, central differences, nonlinear terms at the previous level, boundary
/// values by linear extrapolation. n must be 1 or 2. Throws ConfigError when dt
/// breaks the stability bound and SolverError when the field grows more than 10x
/// in one step.
PdeField solve_pde(const BsdeProblem& p, const TimeGrid& grid, const PdeGrid& pde);

struct PdeComparison {
  std::vector<double> t;
  std::vector<double> max_diff;     // max over covered nodes of |u - q_k|
  std::vector<double> truncation;   // max over the same nodes of |u_dx - u_2dx|
  std::vector<double> se;           // regression SE of q_k
  std::vector<std::size_t> covered; // nodes inside the central region
  double max_ratio = 0.0;           // max diff / (truncation + se)
  double factor = 5.0;
  bool pass = true;
};

/// Compares the fitted q_k with u(t_k, .) on nodes inside the central 90% box of
/// the forward states at knots 1..N-1 (q_N is h itself). The truncation estimate
/// solves again with 2 dx.
PdeComparison pde_crosscheck(const BsdeProblem& p, const DecouplingField& field, const KnotArray& states,
                             const PdeGrid& pde, double factor = 5.0, PdeField* fine = nullptr);

/// Columns t, x0[, x1], u0[, u1 ...]; every `stride`-th node.
std::string pde_csv(const PdeField& f, Index stride = 1);

nlohmann::json to_json(const PdeComparison& c);

}  // namespace mbsde

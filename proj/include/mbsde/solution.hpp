#pragma once

#include "mbsde/condexp.hpp"
#include "mbsde/grid.hpp"
#include "mbsde/problem.hpp"
#include "mbsde/simulate.hpp"
#include "mbsde/types.hpp"

#include <string>
#include <vector>

namespace mbsde {

/// Discrete (Y, Z) on the knots of a window for every path. Knot indices in
/// the accessors are global grid indices.
struct SolutionField {
  TimeGrid grid;
  Window window;
  Index d = 1;
  Index n = 1;
  KnotArray Y;  // window.steps() + 1 knots, d columns
  KnotArray Z;  // window.steps() knots, d*n columns (column j + d*i is Z_{j,i})
  std::vector<KnotModel> models;  // one per knot when the solver is regression based
  Vector y_se;                    // per knot, largest per-coordinate regression SE
  std::string method;

  SolutionField() = default;
  SolutionField(const TimeGrid& g, Window w, Index paths, Index d, Index n);

  Index paths() const { return Y.paths(); }
  Eigen::Map<Matrix> y(std::size_t k) { return Y.at(k - window.first); }
  Eigen::Map<const Matrix> y(std::size_t k) const { return Y.at(k - window.first); }
  Eigen::Map<Matrix> z(std::size_t k) { return Z.at(k - window.first); }
  Eigen::Map<const Matrix> z(std::size_t k) const { return Z.at(k - window.first); }
  Vector y_at(std::size_t k, Index m) const { return Y.row(k - window.first, m); }
  Matrix z_at(std::size_t k, Index m) const;
  const KnotModel* model(std::size_t k) const;
  bool has_models() const { return !models.empty(); }
};

/// Concatenates window solutions given in any order into one field on the
/// union of their windows (windows must tile a contiguous range).
SolutionField paste(const std::vector<SolutionField>& parts);

/// f(t_k, path m, y_m, z_m) for every path; throws SolverError naming (m, k)
/// when the driver returns a non-finite value.
Matrix evaluate_driver(const BsdeProblem& p, const PathEnsemble& ens, std::size_t k,
                       const Eigen::Ref<const Matrix>& y, const Eigen::Ref<const Matrix>& z);

/// xi on every path (M x d).
Matrix evaluate_terminal(const BsdeProblem& p, const PathEnsemble& ens);

}  // namespace mbsde

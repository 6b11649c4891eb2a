#pragma once

#include "mbsde/basis.hpp"
#include "mbsde/grid.hpp"
#include "mbsde/simulate.hpp"
#include "mbsde/types.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace mbsde {

enum class EstimatorKind { regression, nested };

EstimatorKind parse_estimator(const std::string& s);
std::string to_string(EstimatorKind k);

struct CondExpEstimate {
  Matrix values;        // M x d
  EstimatorKind method = EstimatorKind::regression;
  Matrix coefficients;  // basis size x d (regression only)
  Vector se;            // per output coordinate, root-mean-square over paths
  Matrix path_se;       // M x d
  Index rank = 0;
  bool rank_deficient = false;
  std::vector<std::string> warnings;
};

/// Z estimates at one knot. Column j + d*i of `values` holds Z_{j,i}, so a row
/// maps onto a column-major d x n matrix.
struct ZEstimate {
  Matrix values;        // M x (d n)
  EstimatorKind method = EstimatorKind::regression;
  Matrix coefficients;  // basis size x (d n): Z(x) = basis(x) * coefficients
  Vector se;            // per entry, root-mean-square over paths
  Matrix path_se;       // M x (d n)
};

/// Minimum-norm least squares on a fixed design. The design is reduced by a
/// Householder QR; the SVD of R then drops directions with singular values
/// below 1e-10 of the largest. Solves reuse the factorisation.
class LeastSquares {
 public:
  LeastSquares() = default;
  explicit LeastSquares(const Eigen::Ref<const Matrix>& X);

  /// Coefficients for each column of Y, with one step of iterative refinement.
  Matrix solve(const Eigen::Ref<const Matrix>& X, const Eigen::Ref<const Matrix>& Y) const;
  /// Per-row leverage sqrt(x_m^T (X^T X)^+ x_m).
  Vector leverage_root(const Eigen::Ref<const Matrix>& X) const;

  Index cols() const { return T_.rows(); }
  Index rank() const { return T_.cols(); }
  bool rank_deficient() const { return rank() < cols(); }
  const Matrix& transform() const { return T_; }

 private:
  Matrix T_;  // V_r Sigma_r^{-1}
};

/// Conditional expectations at one knot by regression on the basis of a
/// regression state. Factorisations are computed once; every payload projected
/// with the same projector shares the design, so estimates are linear in the payload.
class KnotProjector {
 public:
  /// `increments` (M x n) and dt enable extract_z; `weights` turns the fit into
  /// weighted least squares.
  KnotProjector(const BasisSpec& spec, Matrix state, std::optional<Matrix> increments = {},
                double dt = 0.0, std::optional<Vector> weights = {}, double safety = 10.0);

  const Basis& basis() const { return basis_; }
  const Matrix& state() const { return state_; }
  Index paths() const { return state_.rows(); }

  CondExpEstimate project(const Matrix& payload) const;
  /// Z at this knot from the next-knot values (M x d).
  ZEstimate extract_z(const Matrix& next) const;
  /// Regression of an arbitrary payload onto the basis without the Z
  /// augmentation, returned as d*n columns (used by reweighted Z rules).
  ZEstimate project_z(const Matrix& payload) const;

 private:
  const Matrix& weighted() const { return sqrt_w_ ? Xw_ : X_; }
  Matrix augmented_design() const;

  Basis basis_;
  Matrix state_;
  std::optional<Matrix> increments_;
  double dt_ = 0.0;
  std::optional<Vector> sqrt_w_;
  Matrix X_;           // design on the state
  Matrix Xw_;          // sqrt-weighted design (weighted fits only)
  Matrix scaled_inc_;  // dW / sqrt(dt)
  Vector lev_;
  Matrix zlev_;        // per Brownian coordinate, leverage of the Z functional
  LeastSquares plain_;
  std::optional<LeastSquares> augmented_;
};

CondExpEstimate condexp_regress(const Matrix& payload, const BasisSpec& spec, const Matrix& state,
                                double safety = 10.0);
ZEstimate extract_z_regress(const Matrix& next, const BasisSpec& spec, const Matrix& state,
                            const Matrix& increments, double dt);

/// Weighted conditional expectation with weights ratio E_T / E_k of a measure weight.
CondExpEstimate weighted_condexp(const Matrix& payload, std::size_t knot, const MeasureWeight& w,
                                 const BasisSpec& spec, const Matrix& state);

/// Effective sample size (sum w)^2 / sum w^2.
double effective_sample_size(const Vector& w);

/// Payload evaluated on a full path (knots 0..N); the nested estimator feeds it
/// the original path up to the conditioning knot followed by a fresh suffix.
using PathPayload = std::function<void(const PathView& path, Vector& out)>;

struct NestedOptions {
  std::size_t branching = 1000;
  double budget = 5e9;  // max paths x branches x remaining steps
  std::uint64_t seed = 0;
  Index max_paths = -1;  // only the first max_paths paths (all if < 0)
};

struct NestedResult {
  CondExpEstimate y;
  ZEstimate z;  // per-path OLS of payload on [1, dW_k] over the branches
};

/// Brute-force conditional expectation: for each path m, B suffixes from
/// (t_k, W[m,k]) drawn from a stream seeded by (seed, m).
NestedResult nested_estimate(const PathEnsemble& ens, std::size_t knot, Index d,
                             const PathPayload& payload, const NestedOptions& opt);
CondExpEstimate condexp_nested(const PathEnsemble& ens, std::size_t knot, Index d,
                               const PathPayload& payload, const NestedOptions& opt);
ZEstimate extract_z_nested(const PathEnsemble& ens, std::size_t knot, Index d,
                           const PathPayload& payload, const NestedOptions& opt);

/// Regression state W_{t_k} for every path (M x n).
Matrix brownian_state(const PathEnsemble& ens, std::size_t k);

/// Lazily built projectors for every knot of an ensemble. The regression
/// state is W_{t_k} unless per-knot forward states are supplied.
class ProjectorCache {
 public:
  ProjectorCache(const PathEnsemble& ens, BasisSpec spec, const KnotArray* states = nullptr);

  /// Projector at knot k (with the increment dW_k attached when k < N).
  const KnotProjector& at(std::size_t k);
  void release(std::size_t k) { slots_.at(k).reset(); }
  Matrix state(std::size_t k) const;

  const PathEnsemble& ensemble() const { return *ens_; }
  const BasisSpec& spec() const { return spec_; }

 private:
  const PathEnsemble* ens_;
  BasisSpec spec_;
  const KnotArray* states_;
  std::vector<std::unique_ptr<KnotProjector>> slots_;
};

/// Fitted conditional-expectation functions at one knot: Y(x) = basis(x) y_coef
/// and Z(x) = basis(x) z_coef. Lets a regression solution be re-evaluated at
/// states that were not simulated (nested cross-checks, PDE comparison).
struct KnotModel {
  Basis basis;
  Matrix y_coef;  // K x d
  Matrix z_coef;  // K x (d n); empty at the terminal knot

  Vector y(const Vector& x) const;
  Matrix z(const Vector& x, Index d, Index n) const;
};

}  // namespace mbsde

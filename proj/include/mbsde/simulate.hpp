#pragma once

#include "mbsde/grid.hpp"
#include "mbsde/types.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>

namespace mbsde {

/// M Brownian paths on a grid. Increments and cumulative values are stored
/// knot-major (see KnotArray), one column per Brownian coordinate.
class PathEnsemble {
 public:
  PathEnsemble() = default;
  /// Builds an ensemble from given increments (knots = N, cols = n).
  PathEnsemble(TimeGrid grid, KnotArray increments, std::uint64_t seed);

  const TimeGrid& grid() const { return grid_; }
  Index paths() const { return increments_.paths(); }
  Index dim() const { return increments_.cols(); }
  std::size_t steps() const { return grid_.steps(); }
  std::uint64_t seed() const { return seed_; }
  std::uint64_t path_seed(Index m) const { return derive_seed({seed_, static_cast<std::uint64_t>(m)}); }

  const KnotArray& increments() const { return increments_; }
  const KnotArray& brownian() const { return brownian_; }

  /// Path m up to knot k.
  PathView path(Index m, std::size_t k) const {
    return {brownian_.raw().data() + m, static_cast<std::ptrdiff_t>(paths() * dim()),
            static_cast<std::ptrdiff_t>(paths()), k, dim(), &grid_};
  }

  /// Sums blocks of `factor` increments: the same paths seen on a grid with N/factor steps.
  PathEnsemble coarsen(std::size_t factor) const;
  /// First `count` paths only.
  PathEnsemble head(Index count) const;

  /// Flat little-endian dump: M, N, n (uint64), T (double), seed (uint64),
  /// then increments in row-major [m][k][i] order.
  void write_binary(std::ostream& os) const;
  static PathEnsemble read_binary(std::istream& is);
  void write_binary(const std::string& path) const;

  friend bool operator==(const PathEnsemble& a, const PathEnsemble& b) {
    return a.grid_ == b.grid_ && a.seed_ == b.seed_ && a.increments_ == b.increments_;
  }

 private:
  TimeGrid grid_;
  std::uint64_t seed_ = 0;
  KnotArray increments_;
  KnotArray brownian_;
};

/// i.i.d. N(0, dt) increments; path m draws from a stream seeded by derive_seed(seed, m).
PathEnsemble sample_brownian(const TimeGrid& grid, Index paths, Index dim, std::uint64_t seed);

/// drift(t_k, m, k, x, out): n-vector drift evaluated at the current state of path m.
using ForwardDrift =
    std::function<void(double t, Index m, std::size_t k, const Vector& x, Vector& out)>;

/// Euler-Maruyama X_{k+1} = X_k + drift dt + dW_k, X_0 = x0. Result has N+1 knots.
KnotArray euler_forward(const PathEnsemble& ens, const ForwardDrift& drift, const Vector& x0);

/// Log-Euler solution of dGamma = Gamma (Q dt + R^T dW), Gamma_0 = 1.
/// q has N knots and 1 column, r has N knots and n columns.
KnotArray euler_gamma(const PathEnsemble& ens, const KnotArray& q, const KnotArray& r);
/// Same recursion kept in log space.
KnotArray euler_log_gamma(const PathEnsemble& ens, const KnotArray& q, const KnotArray& r);

/// Discrete stochastic exponential of the integrand H.
struct MeasureWeight {
  KnotArray H;           // N knots, n columns
  KnotArray log_weight;  // N+1 knots, 1 column

  double weight(std::size_t k, Index m) const;
  Vector weights(std::size_t k) const;
  Vector terminal() const { return weights(log_weight.knots() - 1); }
};

MeasureWeight stochastic_exponential(const PathEnsemble& ens, const KnotArray& H);

/// Increments dW - H dt; expectations under the new measure still use the
/// original ensemble reweighted by the weight.
PathEnsemble girsanov_shift(const PathEnsemble& ens, const MeasureWeight& weight);

struct MeanEstimate {
  double mean = 0.0;
  double se = 0.0;
};

MeanEstimate sample_mean(const Eigen::Ref<const Vector>& x);
/// Self-normalised weighted mean sum(w x)/sum(w) with delta-method standard error.
MeanEstimate weighted_mean(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& w);
/// Plain importance-sampling mean of w x (unnormalised), with its standard error.
MeanEstimate reweighted_mean(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& w);

}  // namespace mbsde

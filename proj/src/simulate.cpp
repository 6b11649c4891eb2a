#include "mbsde/simulate.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

namespace mbsde {

static_assert(std::endian::native == std::endian::little,
              "ensemble export assumes a little-endian host");

TimeGrid::TimeGrid(double horizon, std::size_t steps)
    : horizon_(horizon), steps_(steps), dt_(horizon / static_cast<double>(steps)) {
  if (!(horizon > 0.0) || !std::isfinite(horizon))
    throw ConfigError("time grid: horizon must be positive and finite");
  if (steps < 1) throw ConfigError("time grid: need at least one step");
}

double TimeGrid::time(std::size_t k) const {
  return k == steps_ ? horizon_ : static_cast<double>(k) * dt_;
}

Window TimeGrid::window(std::size_t first, std::size_t last) const {
  if (first > last || last > steps_) {
    std::ostringstream msg;
    msg << "window [" << first << ", " << last << "] outside grid with " << steps_ << " steps";
    throw ConfigError(msg.str());
  }
  return {first, last};
}

namespace {

KnotArray cumulate(const KnotArray& dw) {
  KnotArray w(dw.knots() + 1, dw.paths(), dw.cols());
  for (std::size_t k = 0; k < dw.knots(); ++k) w.at(k + 1) = w.at(k) + dw.at(k);
  return w;
}

}  // namespace

PathEnsemble::PathEnsemble(TimeGrid grid, KnotArray increments, std::uint64_t seed)
    : grid_(grid), seed_(seed), increments_(std::move(increments)) {
  if (increments_.knots() != grid_.steps())
    throw ConfigError("ensemble: increment knots do not match the grid");
  if (increments_.paths() < 1 || increments_.cols() < 1)
    throw ConfigError("ensemble: need at least one path and one coordinate");
  brownian_ = cumulate(increments_);
}

PathEnsemble PathEnsemble::coarsen(std::size_t factor) const {
  if (factor == 0 || steps() % factor != 0)
    throw ConfigError("coarsen: factor must divide the step count");
  std::size_t coarse = steps() / factor;
  KnotArray dw(coarse, paths(), dim());
  for (std::size_t k = 0; k < coarse; ++k) {
    auto block = dw.at(k);
    for (std::size_t j = 0; j < factor; ++j) block += increments_.at(k * factor + j);
  }
  return PathEnsemble(TimeGrid(grid_.horizon(), coarse), std::move(dw), seed_);
}

PathEnsemble PathEnsemble::head(Index count) const {
  if (count < 1 || count > paths()) throw ConfigError("head: path count out of range");
  KnotArray dw(steps(), count, dim());
  for (std::size_t k = 0; k < steps(); ++k) dw.at(k) = increments_.at(k).topRows(count);
  return PathEnsemble(grid_, std::move(dw), seed_);
}

namespace {

template <class T>
void put(std::ostream& os, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  os.write(buf, sizeof(T));
}

template <class T>
T get(std::istream& is) {
  char buf[sizeof(T)];
  if (!is.read(buf, sizeof(T))) throw ConfigError("ensemble file truncated");
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace

void PathEnsemble::write_binary(std::ostream& os) const {
  put<std::uint64_t>(os, static_cast<std::uint64_t>(paths()));
  put<std::uint64_t>(os, static_cast<std::uint64_t>(steps()));
  put<std::uint64_t>(os, static_cast<std::uint64_t>(dim()));
  put<double>(os, grid_.horizon());
  put<std::uint64_t>(os, seed_);
  for (Index m = 0; m < paths(); ++m)
    for (std::size_t k = 0; k < steps(); ++k)
      for (Index i = 0; i < dim(); ++i) put<double>(os, increments_(k, m, i));
}

void PathEnsemble::write_binary(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open " + path + " for writing");
  write_binary(os);
}

PathEnsemble PathEnsemble::read_binary(std::istream& is) {
  auto M = get<std::uint64_t>(is);
  auto N = get<std::uint64_t>(is);
  auto n = get<std::uint64_t>(is);
  auto T = get<double>(is);
  auto seed = get<std::uint64_t>(is);
  KnotArray dw(N, static_cast<Index>(M), static_cast<Index>(n));
  for (std::uint64_t m = 0; m < M; ++m)
    for (std::uint64_t k = 0; k < N; ++k)
      for (std::uint64_t i = 0; i < n; ++i)
        dw(k, static_cast<Index>(m), static_cast<Index>(i)) = get<double>(is);
  return PathEnsemble(TimeGrid(T, N), std::move(dw), seed);
}

PathEnsemble sample_brownian(const TimeGrid& grid, Index paths, Index dim, std::uint64_t seed) {
  if (paths < 1) throw ConfigError("sample_brownian: need M >= 1");
  if (dim < 1) throw ConfigError("sample_brownian: need n >= 1");
  KnotArray dw(grid.steps(), paths, dim);
  const double sd = std::sqrt(grid.dt());
  for (Index m = 0; m < paths; ++m) {
    std::mt19937_64 rng(derive_seed({seed, static_cast<std::uint64_t>(m)}));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t k = 0; k < grid.steps(); ++k)
      for (Index i = 0; i < dim; ++i) dw(k, m, i) = sd * normal(rng);
  }
  return PathEnsemble(grid, std::move(dw), seed);
}

KnotArray euler_forward(const PathEnsemble& ens, const ForwardDrift& drift, const Vector& x0) {
  const Index M = ens.paths(), n = ens.dim();
  if (x0.size() != n) throw ConfigError("euler_forward: x0 has wrong dimension");
  const auto& grid = ens.grid();
  KnotArray x(grid.steps() + 1, M, n);
  Vector cur(n), b(n);
  for (Index m = 0; m < M; ++m) {
    cur = x0;
    x.set_row(0, m, cur);
    for (std::size_t k = 0; k < grid.steps(); ++k) {
      b.setZero();
      drift(grid.time(k), m, k, cur, b);
      if (!b.allFinite()) {
        std::ostringstream msg;
        msg << "euler_forward: non-finite drift at path " << m << ", knot " << k;
        throw SolverError(msg.str());
      }
      for (Index i = 0; i < n; ++i) cur[i] += b[i] * grid.dt() + ens.increments()(k, m, i);
      x.set_row(k + 1, m, cur);
    }
  }
  return x;
}

KnotArray euler_log_gamma(const PathEnsemble& ens, const KnotArray& q, const KnotArray& r) {
  const std::size_t N = ens.steps();
  const Index M = ens.paths();
  if (q.knots() != N || q.paths() != M || q.cols() != 1)
    throw ConfigError("euler_gamma: Q has wrong shape");
  if (r.knots() != N || r.paths() != M || r.cols() != ens.dim())
    throw ConfigError("euler_gamma: R has wrong shape");
  const double dt = ens.grid().dt();
  KnotArray lg(N + 1, M, 1);
  for (std::size_t k = 0; k < N; ++k) {
    auto rk = r.at(k);
    auto dw = ens.increments().at(k);
    Vector inc = (q.at(k).col(0).array() - 0.5 * rk.rowwise().squaredNorm().array()).matrix() * dt
                 + (rk.array() * dw.array()).rowwise().sum().matrix();
    if (!inc.allFinite()) throw SolverError("euler_gamma: non-finite coefficient");
    lg.at(k + 1).col(0) = lg.at(k).col(0) + inc;
  }
  return lg;
}

KnotArray euler_gamma(const PathEnsemble& ens, const KnotArray& q, const KnotArray& r) {
  KnotArray g = euler_log_gamma(ens, q, r);
  for (auto& v : g.raw()) v = std::exp(v);
  return g;
}

double MeasureWeight::weight(std::size_t k, Index m) const {
  return std::exp(log_weight(k, m, 0));
}

Vector MeasureWeight::weights(std::size_t k) const {
  return log_weight.at(k).col(0).array().exp().matrix();
}

MeasureWeight stochastic_exponential(const PathEnsemble& ens, const KnotArray& H) {
  const std::size_t N = ens.steps();
  if (H.knots() != N || H.paths() != ens.paths() || H.cols() != ens.dim())
    throw ConfigError("stochastic_exponential: H has wrong shape");
  const double dt = ens.grid().dt();
  MeasureWeight w{H, KnotArray(N + 1, ens.paths(), 1)};
  for (std::size_t k = 0; k < N; ++k) {
    auto hk = H.at(k);
    auto dw = ens.increments().at(k);
    w.log_weight.at(k + 1).col(0) =
        w.log_weight.at(k).col(0)
        + (hk.array() * dw.array()).rowwise().sum().matrix()
        - 0.5 * dt * hk.rowwise().squaredNorm();
  }
  return w;
}

PathEnsemble girsanov_shift(const PathEnsemble& ens, const MeasureWeight& weight) {
  const auto& H = weight.H;
  if (H.knots() != ens.steps() || H.paths() != ens.paths() || H.cols() != ens.dim())
    throw ConfigError("girsanov_shift: weight built on a different ensemble");
  KnotArray dw = ens.increments();
  const double dt = ens.grid().dt();
  for (std::size_t k = 0; k < ens.steps(); ++k) dw.at(k) -= dt * H.at(k);
  return PathEnsemble(ens.grid(), std::move(dw), ens.seed());
}

MeanEstimate sample_mean(const Eigen::Ref<const Vector>& x) {
  const double M = static_cast<double>(x.size());
  MeanEstimate e;
  e.mean = x.mean();
  if (x.size() > 1) {
    double var = (x.array() - e.mean).square().sum() / (M - 1.0);
    e.se = std::sqrt(var / M);
  }
  return e;
}

MeanEstimate weighted_mean(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& w) {
  const double M = static_cast<double>(x.size());
  const double sw = w.sum();
  MeanEstimate e;
  e.mean = w.dot(x) / sw;
  if (x.size() > 1) {
    // ratio-estimator variance: mean of (w (x - mean))^2 over (mean w)^2
    double wbar = sw / M;
    double v = (w.array() * (x.array() - e.mean)).square().sum() / (M - 1.0);
    e.se = std::sqrt(v / M) / wbar;
  }
  return e;
}

MeanEstimate reweighted_mean(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& w) {
  Vector wx = (w.array() * x.array()).matrix();
  return sample_mean(wx);
}

}  // namespace mbsde

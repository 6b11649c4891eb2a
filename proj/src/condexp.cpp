#include "mbsde/condexp.hpp"

#include <cmath>
#include <random>
#include <sstream>

namespace mbsde {

EstimatorKind parse_estimator(const std::string& s) {
  if (s == "regression") return EstimatorKind::regression;
  if (s == "nested") return EstimatorKind::nested;
  throw ConfigError("unknown estimator '" + s + "'");
}

std::string to_string(EstimatorKind k) {
  return k == EstimatorKind::regression ? "regression" : "nested";
}

LeastSquares::LeastSquares(const Eigen::Ref<const Matrix>& X) {
  const Index K = X.cols();
  const Index q = std::min(X.rows(), K);
  Eigen::HouseholderQR<Matrix> qr(X);
  Matrix R = Matrix::Zero(q, K);
  R = qr.matrixQR().topRows(q).triangularView<Eigen::Upper>();
  Eigen::JacobiSVD<Matrix> svd(R, Eigen::ComputeFullV);
  const Vector& s = svd.singularValues();
  Index r = 0;
  const double smax = s.size() ? s[0] : 0.0;
  while (r < s.size() && s[r] > 1e-10 * smax) ++r;
  T_ = svd.matrixV().leftCols(r) * s.head(r).cwiseInverse().asDiagonal();
}

Matrix LeastSquares::solve(const Eigen::Ref<const Matrix>& X,
                           const Eigen::Ref<const Matrix>& Y) const {
  Matrix beta = T_ * (T_.transpose() * (X.transpose() * Y));
  Matrix resid = Y - X * beta;
  beta += T_ * (T_.transpose() * (X.transpose() * resid));
  return beta;
}

Vector LeastSquares::leverage_root(const Eigen::Ref<const Matrix>& X) const {
  return (X * T_).rowwise().norm();
}

KnotProjector::KnotProjector(const BasisSpec& spec, Matrix state, std::optional<Matrix> increments,
                             double dt, std::optional<Vector> weights, double safety)
    : basis_(spec, state), state_(std::move(state)), increments_(std::move(increments)), dt_(dt) {
  const Index M = state_.rows();
  if (static_cast<double>(M) < safety * static_cast<double>(basis_.size())) {
    std::ostringstream msg;
    msg << "regression needs at least " << safety << " paths per basis function (M = " << M
        << ", basis size = " << basis_.size() << ")";
    throw ConfigError(msg.str());
  }
  if (weights) {
    if (weights->size() != M) throw ConfigError("regression weights have wrong length");
    Vector w = *weights / weights->mean();
    sqrt_w_ = w.cwiseSqrt();
  }
  X_ = basis_.design(state_);
  if (sqrt_w_) Xw_ = sqrt_w_->asDiagonal() * X_;
  plain_ = LeastSquares(weighted());
  lev_ = plain_.leverage_root(X_);
  if (increments_) {
    if (increments_->rows() != M) throw ConfigError("increments have wrong length");
    if (!(dt_ > 0.0)) throw ConfigError("extract_z needs a positive step");
    scaled_inc_ = *increments_ / std::sqrt(dt_);
    augmented_ = LeastSquares(augmented_design());
    const Index K = basis_.size(), n = increments_->cols();
    const Matrix& T = augmented_->transform();
    zlev_.resize(M, n);
    for (Index i = 0; i < n; ++i)
      zlev_.col(i) = (X_ * T.middleRows(K * (1 + i), K)).rowwise().norm() / std::sqrt(dt_);
  }
}

Matrix KnotProjector::augmented_design() const {
  const Index K = basis_.size(), n = scaled_inc_.cols();
  const Matrix& X = weighted();
  Matrix A(X.rows(), K * (1 + n));
  A.leftCols(K) = X;
  for (Index i = 0; i < n; ++i) A.middleCols(K * (1 + i), K) = scaled_inc_.col(i).asDiagonal() * X;
  return A;
}

CondExpEstimate KnotProjector::project(const Matrix& payload) const {
  const Index M = paths();
  if (payload.rows() != M) throw ConfigError("payload has wrong number of paths");
  const Matrix& Xw = weighted();
  Matrix Yw = sqrt_w_ ? Matrix(sqrt_w_->asDiagonal() * payload) : payload;

  CondExpEstimate e;
  e.method = EstimatorKind::regression;
  e.coefficients = plain_.solve(Xw, Yw);
  e.values = X_ * e.coefficients;
  e.rank = plain_.rank();
  e.rank_deficient = plain_.rank_deficient();
  if (e.rank_deficient) e.warnings.push_back("rank-deficient design; minimum-norm solution used");

  const double dof = std::max<double>(1.0, static_cast<double>(M - e.rank));
  Vector sigma(payload.cols());
  if (sqrt_w_) {
    sigma = ((Yw - Xw * e.coefficients).colwise().squaredNorm().transpose() / dof).cwiseSqrt();
  } else {
    sigma = ((Yw - e.values).colwise().squaredNorm().transpose() / dof).cwiseSqrt();
  }
  e.path_se = lev_ * sigma.transpose();
  e.se = sigma * std::sqrt(lev_.squaredNorm() / static_cast<double>(M));
  return e;
}

ZEstimate KnotProjector::extract_z(const Matrix& next) const {
  if (!augmented_) throw ConfigError("extract_z: projector built without increments");
  const Index M = paths(), K = basis_.size(), n = scaled_inc_.cols(), d = next.cols();
  if (next.rows() != M) throw ConfigError("extract_z: payload has wrong number of paths");
  const Matrix& Xw = weighted();
  // products with the augmented design [X, diag(dW_i/sqrt(dt)) X] without forming it
  auto At = [&](const Matrix& Y) {
    Matrix out(K * (1 + n), Y.cols());
    out.topRows(K) = Xw.transpose() * Y;
    for (Index i = 0; i < n; ++i)
      out.middleRows(K * (1 + i), K) = Xw.transpose() * (scaled_inc_.col(i).asDiagonal() * Y);
    return out;
  };
  auto A = [&](const Matrix& b) {
    Matrix out = Xw * b.topRows(K);
    for (Index i = 0; i < n; ++i)
      out += scaled_inc_.col(i).asDiagonal() * (Xw * b.middleRows(K * (1 + i), K));
    return out;
  };
  const Matrix& T = augmented_->transform();
  Matrix Yw = sqrt_w_ ? Matrix(sqrt_w_->asDiagonal() * next) : next;
  Matrix beta = T * (T.transpose() * At(Yw));
  Matrix resid = Yw - A(beta);
  beta += T * (T.transpose() * At(resid));
  resid = Yw - A(beta);
  const double dof = std::max<double>(1.0, static_cast<double>(M - augmented_->rank()));
  Vector sigma = (resid.colwise().squaredNorm().transpose() / dof).cwiseSqrt();

  const double s = 1.0 / std::sqrt(dt_);
  ZEstimate z;
  z.method = EstimatorKind::regression;
  z.coefficients.resize(K, d * n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) z.coefficients.col(j + d * i) = beta.block(K * (1 + i), j, K, 1) * s;
  z.values = X_ * z.coefficients;

  // the Z functional picks block i of the augmented coefficients
  z.path_se.resize(M, d * n);
  z.se.resize(d * n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) {
      z.path_se.col(j + d * i) = zlev_.col(i) * sigma[j];
      z.se[j + d * i] = sigma[j] * std::sqrt(zlev_.col(i).squaredNorm() / static_cast<double>(M));
    }
  return z;
}

ZEstimate KnotProjector::project_z(const Matrix& payload) const {
  CondExpEstimate e = project(payload);
  ZEstimate z;
  z.method = EstimatorKind::regression;
  z.values = std::move(e.values);
  z.coefficients = std::move(e.coefficients);
  z.se = std::move(e.se);
  z.path_se = std::move(e.path_se);
  return z;
}

CondExpEstimate condexp_regress(const Matrix& payload, const BasisSpec& spec, const Matrix& state,
                                double safety) {
  return KnotProjector(spec, state, {}, 0.0, {}, safety).project(payload);
}

ZEstimate extract_z_regress(const Matrix& next, const BasisSpec& spec, const Matrix& state,
                            const Matrix& increments, double dt) {
  return KnotProjector(spec, state, increments, dt).extract_z(next);
}

double effective_sample_size(const Vector& w) {
  double s = w.sum();
  return s * s / w.squaredNorm();
}

CondExpEstimate weighted_condexp(const Matrix& payload, std::size_t knot, const MeasureWeight& w,
                                 const BasisSpec& spec, const Matrix& state) {
  const std::size_t N = w.log_weight.knots() - 1;
  if (knot > N) throw ConfigError("weighted_condexp: knot outside the grid");
  Vector ratio = (w.log_weight.at(N).col(0) - w.log_weight.at(knot).col(0)).array().exp().matrix();
  KnotProjector proj(spec, state, {}, 0.0, ratio);
  CondExpEstimate e = proj.project(payload);
  double ess = effective_sample_size(ratio);
  if (ess < 0.1 * static_cast<double>(ratio.size())) {
    std::ostringstream msg;
    msg << "effective sample size " << ess << " below 10% of " << ratio.size() << " paths";
    e.warnings.push_back(msg.str());
  }
  return e;
}

NestedResult nested_estimate(const PathEnsemble& ens, std::size_t knot, Index d,
                             const PathPayload& payload, const NestedOptions& opt) {
  const auto& grid = ens.grid();
  const std::size_t N = grid.steps();
  const Index n = ens.dim();
  if (knot > N) throw ConfigError("nested: knot outside the grid");
  if (opt.branching < 2) throw ConfigError("nested: branching must be >= 2");
  const Index count = opt.max_paths < 0 ? ens.paths() : std::min(opt.max_paths, ens.paths());
  const double cost = static_cast<double>(count) * static_cast<double>(opt.branching)
                      * static_cast<double>(N - knot);
  if (cost > opt.budget) {
    std::ostringstream msg;
    msg << "nested estimator refused: " << count << " paths x " << opt.branching << " branches x "
        << (N - knot) << " steps exceeds budget " << opt.budget;
    throw ConfigError(msg.str());
  }

  NestedResult res;
  res.y.method = EstimatorKind::nested;
  res.y.values.resize(count, d);
  res.y.path_se.resize(count, d);
  res.z.method = EstimatorKind::nested;
  res.z.values = Matrix::Zero(count, d * n);
  res.z.path_se = Matrix::Zero(count, d * n);

  const double sd = std::sqrt(grid.dt());
  const double B = static_cast<double>(opt.branching);
  std::vector<double> buf((N + 1) * n);
  Vector out(d), dw(n), a(n + 1);
  for (Index m = 0; m < count; ++m) {
    for (std::size_t k = 0; k <= knot; ++k)
      for (Index i = 0; i < n; ++i) buf[k * n + i] = ens.brownian()(k, m, i);
    PathView view(buf.data(), n, 1, N, n, &grid);
    if (knot == N) {
      out.setZero();
      payload(view, out);
      res.y.values.row(m) = out.transpose();
      res.y.path_se.row(m).setZero();
      continue;
    }
    std::mt19937_64 rng(derive_seed({opt.seed, static_cast<std::uint64_t>(m)}));
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector sum = Vector::Zero(d), sumsq = Vector::Zero(d);
    Matrix gram = Matrix::Zero(n + 1, n + 1), cross = Matrix::Zero(n + 1, d);
    for (std::size_t b = 0; b < opt.branching; ++b) {
      for (std::size_t k = knot; k < N; ++k)
        for (Index i = 0; i < n; ++i) {
          double inc = sd * normal(rng);
          if (k == knot) dw[i] = inc;
          buf[(k + 1) * n + i] = buf[k * n + i] + inc;
        }
      out.setZero();
      payload(view, out);
      if (!out.allFinite()) {
        std::ostringstream msg;
        msg << "nested: non-finite payload on path " << m << ", branch " << b;
        throw SolverError(msg.str());
      }
      sum += out;
      sumsq += out.cwiseAbs2();
      a[0] = 1.0;
      a.tail(n) = dw;
      gram.noalias() += a * a.transpose();
      cross.noalias() += a * out.transpose();
    }
    Vector mean = sum / B;
    Vector var = ((sumsq - B * mean.cwiseAbs2()) / (B - 1.0)).cwiseMax(0.0);
    res.y.values.row(m) = mean.transpose();
    res.y.path_se.row(m) = (var / B).cwiseSqrt().transpose();

    Eigen::LDLT<Matrix> ldlt(gram);
    Matrix coef = ldlt.solve(cross);  // (n+1) x d
    Matrix ginv = ldlt.solve(Matrix::Identity(n + 1, n + 1));
    const double dof = std::max(1.0, B - static_cast<double>(n + 1));
    for (Index j = 0; j < d; ++j) {
      double rss = std::max(0.0, sumsq[j] - coef.col(j).dot(cross.col(j)));
      double s2 = rss / dof;
      for (Index i = 0; i < n; ++i) {
        res.z.values(m, j + d * i) = coef(1 + i, j);
        res.z.path_se(m, j + d * i) = std::sqrt(s2 * std::max(0.0, ginv(1 + i, 1 + i)));
      }
    }
  }
  auto rms = [](const Matrix& s) {
    return Vector((s.colwise().squaredNorm() / static_cast<double>(s.rows())).cwiseSqrt().transpose());
  };
  res.y.se = rms(res.y.path_se);
  res.z.se = rms(res.z.path_se);
  return res;
}

CondExpEstimate condexp_nested(const PathEnsemble& ens, std::size_t knot, Index d,
                               const PathPayload& payload, const NestedOptions& opt) {
  return nested_estimate(ens, knot, d, payload, opt).y;
}

ZEstimate extract_z_nested(const PathEnsemble& ens, std::size_t knot, Index d,
                           const PathPayload& payload, const NestedOptions& opt) {
  return nested_estimate(ens, knot, d, payload, opt).z;
}

Matrix brownian_state(const PathEnsemble& ens, std::size_t k) {
  return ens.brownian().at(k);
}

ProjectorCache::ProjectorCache(const PathEnsemble& ens, BasisSpec spec, const KnotArray* states)
    : ens_(&ens), spec_(spec), states_(states), slots_(ens.steps() + 1) {
  if (states && (states->knots() != ens.steps() + 1 || states->paths() != ens.paths()))
    throw ConfigError("projector cache: regression states do not match the ensemble");
}

Matrix ProjectorCache::state(std::size_t k) const {
  return states_ ? Matrix(states_->at(k)) : brownian_state(*ens_, k);
}

const KnotProjector& ProjectorCache::at(std::size_t k) {
  auto& slot = slots_.at(k);
  if (!slot) {
    if (k < ens_->steps())
      slot = std::make_unique<KnotProjector>(spec_, state(k), Matrix(ens_->increments().at(k)),
                                             ens_->grid().dt());
    else
      slot = std::make_unique<KnotProjector>(spec_, state(k));
  }
  return *slot;
}

Vector KnotModel::y(const Vector& x) const {
  return (basis.eval(x) * y_coef).transpose();
}

Matrix KnotModel::z(const Vector& x, Index d, Index n) const {
  Eigen::RowVectorXd row = basis.eval(x) * z_coef;
  return Eigen::Map<const Matrix>(row.data(), d, n);
}

}  // namespace mbsde

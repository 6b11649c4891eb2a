#include "mbsde/condexp.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace mbsde;

namespace {

BasisSpec poly(int degree) {
  BasisSpec b;
  b.degree = degree;
  return b;
}

// indices of paths whose state lies in the central 90% of the first coordinate
std::vector<Index> central(const Matrix& state, double mass = 0.9) {
  std::vector<double> v(state.rows());
  for (Index m = 0; m < state.rows(); ++m) v[m] = state(m, 0);
  std::vector<double> s = v;
  std::sort(s.begin(), s.end());
  double lo = s[static_cast<std::size_t>((1 - mass) / 2 * s.size())];
  double hi = s[static_cast<std::size_t>((1 + mass) / 2 * s.size()) - 1];
  std::vector<Index> out;
  for (Index m = 0; m < state.rows(); ++m)
    if (v[m] >= lo && v[m] <= hi) out.push_back(m);
  return out;
}

}  // namespace

TEST(Basis, SizesAndConstant) {
  Matrix s = Matrix::Random(200, 2);
  BasisSpec b;
  b.degree = 7;
  b.cross_degree = 2;
  Basis basis(b, s);
  EXPECT_EQ(basis.size(), 16);
  auto row = basis.eval(Vector::Zero(2));
  EXPECT_EQ(row[0], 1.0);
  // zero-spread coordinate is dropped
  Matrix s0 = Matrix::Zero(200, 2);
  EXPECT_EQ(Basis(b, s0).size(), 1);
  BasisSpec pc;
  pc.family = BasisFamily::piecewise_constant;
  pc.cells = 4;
  Basis cells(pc, s);
  EXPECT_EQ(cells.size(), 16);
  EXPECT_DOUBLE_EQ(cells.design(s).rowwise().sum().minCoeff(), 1.0);
}

TEST(Regression, ConstantPayloadExact) {
  TimeGrid g(1.0, 4);
  auto ens = sample_brownian(g, 2000, 1, 1);
  auto e = condexp_regress(Matrix::Constant(2000, 1, 2.5), poly(5), brownian_state(ens, 2));
  EXPECT_LT((e.values.array() - 2.5).abs().maxCoeff(), 1e-12);
}

TEST(Regression, ReproducesBasisFunctions) {
  TimeGrid g(1.0, 4);
  auto ens = sample_brownian(g, 5000, 2, 2);
  Matrix state = brownian_state(ens, 3);
  BasisSpec b;
  b.degree = 4;
  b.cross_degree = 2;
  Basis basis(b, state);
  Matrix X = basis.design(state);
  Matrix payload(5000, 2);
  payload.col(0) = X.col(3) * 2.0 - X.col(0);
  payload.col(1) = X.col(basis.size() - 1);
  auto e = condexp_regress(payload, b, state);
  double rel = (e.values - payload).norm() / payload.norm();
  EXPECT_LT(rel, 1e-8);
  EXPECT_FALSE(e.rank_deficient);
}

TEST(Regression, SineConditionalExpectation) {
  TimeGrid g(1.0, 2);
  auto ens = sample_brownian(g, 100000, 1, 3);
  Matrix payload = ens.brownian().at(2).array().sin().matrix();
  Matrix state = brownian_state(ens, 1);
  auto e = condexp_regress(payload, poly(5), state);
  double worst = 0.0;
  for (Index m : central(state))
    worst = std::max(worst, std::abs(e.values(m, 0) - std::sin(state(m, 0)) * std::exp(-0.25)));
  EXPECT_LT(worst, 0.01);
}

TEST(Regression, NoiseSlopesWithinThreeStandardErrors) {
  TimeGrid g(1.0, 2);
  auto ens = sample_brownian(g, 20000, 1, 4);
  Matrix state = brownian_state(ens, 1);
  auto noise = sample_brownian(g, 20000, 1, 999);
  Matrix payload = noise.brownian().at(2);
  auto e = condexp_regress(payload, poly(3), state);
  // oracle: classical OLS standard errors from the normal equations
  Basis basis(poly(3), state);
  Matrix X = basis.design(state);
  Matrix XtX = X.transpose() * X;
  Vector beta = XtX.ldlt().solve(X.transpose() * payload.col(0));
  double s2 = (payload.col(0) - X * beta).squaredNorm() / (X.rows() - X.cols());
  Vector se = (s2 * XtX.inverse().diagonal()).cwiseSqrt();
  EXPECT_LT((beta - e.coefficients.col(0)).norm(), 1e-10);
  for (Index j = 1; j < X.cols(); ++j) EXPECT_LT(std::abs(e.coefficients(j, 0)), 3.0 * se[j]);
  EXPECT_LT((e.values.array() - payload.mean()).abs().maxCoeff(), 0.1);
}

TEST(Regression, LinearInPayload) {
  TimeGrid g(1.0, 4);
  auto ens = sample_brownian(g, 4000, 2, 5);
  Matrix state = brownian_state(ens, 2);
  KnotProjector proj(poly(4), state);
  Matrix A = ens.brownian().at(4).array().sin().matrix();
  Matrix B = ens.brownian().at(3).array().square().matrix();
  auto ea = proj.project(A), eb = proj.project(B), ec = proj.project(1.5 * A - 0.25 * B);
  EXPECT_LT((ec.values - (1.5 * ea.values - 0.25 * eb.values)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Regression, TowerPropertyOnLinearPayload) {
  TimeGrid g(1.0, 4);
  auto ens = sample_brownian(g, 20000, 1, 6);
  Matrix payload = ens.brownian().at(4) * 2.0 + Matrix::Constant(20000, 1, 1.0);
  auto at3 = condexp_regress(payload, poly(3), brownian_state(ens, 3));
  auto via = condexp_regress(at3.values, poly(3), brownian_state(ens, 1));
  auto direct = condexp_regress(payload, poly(3), brownian_state(ens, 1));
  Matrix state1 = brownian_state(ens, 1);
  int outside = 0;
  auto idx = central(state1);
  for (Index m : idx) {
    double tol = 3.0 * std::sqrt(std::pow(via.path_se(m, 0), 2) + std::pow(direct.path_se(m, 0), 2));
    if (std::abs(via.values(m, 0) - direct.values(m, 0)) > tol) ++outside;
  }
  EXPECT_EQ(outside, 0);
}

TEST(Regression, SafetyFactorEnforced) {
  TimeGrid g(1.0, 4);
  auto ens = sample_brownian(g, 50, 1, 7);
  EXPECT_THROW(condexp_regress(Matrix::Zero(50, 1), poly(5), brownian_state(ens, 2)), ConfigError);
}

TEST(ExtractZ, ConstantHasNullIntegrand) {
  TimeGrid g(1.0, 8);
  auto ens = sample_brownian(g, 20000, 2, 8);
  auto z = extract_z_regress(Matrix::Constant(20000, 1, 3.0), poly(3), brownian_state(ens, 4),
                             ens.increments().at(4), g.dt());
  EXPECT_LT(z.values.cwiseAbs().maxCoeff(), 1e-8);
}

TEST(ExtractZ, IdentityIntegrand) {
  TimeGrid g(1.0, 8);
  auto ens = sample_brownian(g, 20000, 2, 9);
  Matrix next = ens.brownian().at(5).col(0);
  auto z = extract_z_regress(next, poly(3), brownian_state(ens, 4), ens.increments().at(4), g.dt());
  // linear payload lies in the augmented span: exact up to rounding
  EXPECT_LT((z.values.col(0).array() - 1.0).abs().maxCoeff(), 1e-8);
  EXPECT_LT(z.values.col(1).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(ExtractZ, SineClaimDelta) {
  const double T = 1.0;
  TimeGrid g(T, 64);
  auto ens = sample_brownian(g, 100000, 1, 10);
  for (std::size_t k : {0u, 16u, 40u, 63u}) {
    Matrix next = (ens.brownian().at(k + 1).array().sin() * std::exp(-(T - g.time(k + 1)) / 2)).matrix();
    Matrix state = brownian_state(ens, k);
    auto z = extract_z_regress(next, poly(5), state, ens.increments().at(k), g.dt());
    double worst = 0.0;
    for (Index m : central(k == 0 ? ens.brownian().at(1) : state))
      worst = std::max(worst, std::abs(z.values(m, 0) - std::cos(state(m, 0)) * std::exp(-(T - g.time(k)) / 2)));
    EXPECT_LT(worst, 0.02) << "knot " << k;
  }
}

TEST(Nested, ConstantPayloadExact) {
  TimeGrid g(1.0, 8);
  auto ens = sample_brownian(g, 20, 1, 11);
  NestedOptions opt;
  opt.branching = 50;
  opt.seed = 3;
  auto e = condexp_nested(ens, 4, 1, [](const PathView&, Vector& out) { out[0] = 1.25; }, opt);
  EXPECT_LT((e.values.array() - 1.25).abs().maxCoeff(), 1e-15);
}

TEST(Nested, SineClosedForm) {
  TimeGrid g(1.0, 8);
  auto ens = sample_brownian(g, 200, 1, 12);
  NestedOptions opt;
  opt.branching = 2000;
  opt.seed = 4;
  auto e = condexp_nested(ens, 4, 1, [](const PathView& p, Vector& out) { out[0] = std::sin(p(0)); }, opt);
  int outside = 0;
  for (Index m = 0; m < 200; ++m) {
    double exact = std::sin(ens.brownian()(4, m, 0)) * std::exp(-0.25);
    if (std::abs(e.values(m, 0) - exact) > 3.0 * e.path_se(m, 0)) ++outside;
  }
  EXPECT_LE(outside, 4);  // 3-SE exceedances expected at rate 0.27%
}

TEST(Nested, MartingaleAndExactLinearZ) {
  TimeGrid g(1.0, 8);
  auto ens = sample_brownian(g, 50, 2, 13);
  NestedOptions opt;
  opt.branching = 500;
  opt.seed = 5;
  const std::size_t k = 3;
  auto res = nested_estimate(ens, k, 1, [&](const PathView& p, Vector& out) {
    out[0] = 2.0 + 0.7 * (p(k + 1, 0) - p(k, 0)) - 1.3 * (p(k + 1, 1) - p(k, 1));
  }, opt);
  for (Index m = 0; m < 50; ++m) {
    EXPECT_NEAR(res.z.values(m, 0), 0.7, 1e-10);
    EXPECT_NEAR(res.z.values(m, 1), -1.3, 1e-10);
  }
  auto w = condexp_nested(ens, k, 1, [](const PathView& p, Vector& out) { out[0] = p(0); }, opt);
  int outside = 0;
  for (Index m = 0; m < 50; ++m)
    if (std::abs(w.values(m, 0) - ens.brownian()(k, m, 0)) > 3.0 * w.path_se(m, 0)) ++outside;
  EXPECT_LE(outside, 2);
}

TEST(Nested, BudgetGuard) {
  TimeGrid g(1.0, 8);
  auto ens = sample_brownian(g, 100, 1, 14);
  NestedOptions opt;
  opt.branching = 1000;
  opt.budget = 1e5;
  EXPECT_THROW(condexp_nested(ens, 0, 1, [](const PathView&, Vector& out) { out[0] = 0; }, opt), ConfigError);
  opt.branching = 1;
  opt.budget = 1e12;
  EXPECT_THROW(condexp_nested(ens, 0, 1, [](const PathView&, Vector& out) { out[0] = 0; }, opt), ConfigError);
}

TEST(Weighted, UnitWeightMatchesUnweighted) {
  TimeGrid g(1.0, 4);
  auto ens = sample_brownian(g, 5000, 1, 15);
  auto w = stochastic_exponential(ens, KnotArray(4, 5000, 1));
  Matrix payload = ens.brownian().at(4).array().cos().matrix();
  auto a = weighted_condexp(payload, 2, w, poly(4), brownian_state(ens, 2));
  auto b = condexp_regress(payload, poly(4), brownian_state(ens, 2));
  EXPECT_LT((a.values - b.values).cwiseAbs().maxCoeff(), 1e-12);
  auto one = weighted_condexp(Matrix::Ones(5000, 1), 2, w, poly(4), brownian_state(ens, 2));
  EXPECT_LT((one.values.array() - 1.0).abs().maxCoeff(), 1e-12);
}

TEST(Weighted, GirsanovShiftedMean) {
  TimeGrid g(1.0, 4);
  const Index M = 100000;
  const double h = 0.3;
  auto ens = sample_brownian(g, M, 1, 16);
  auto w = stochastic_exponential(ens, KnotArray(4, M, 1, h));
  auto e = weighted_condexp(ens.brownian().at(4), 0, w, poly(3), brownian_state(ens, 0));
  EXPECT_LT(std::abs(e.values(0, 0) - h * 1.0), 3.0 * e.se[0]);
  EXPECT_TRUE(e.warnings.empty());
}

TEST(Weighted, EssWarning) {
  TimeGrid g(1.0, 4);
  auto ens = sample_brownian(g, 2000, 1, 17);
  auto w = stochastic_exponential(ens, KnotArray(4, 2000, 1, 3.0));
  auto e = weighted_condexp(Matrix::Ones(2000, 1), 0, w, poly(2), brownian_state(ens, 0));
  ASSERT_FALSE(e.warnings.empty());
  EXPECT_NE(e.warnings[0].find("effective sample size"), std::string::npos);
}

TEST(KnotModel, EvaluatesFittedFunctions) {
  TimeGrid g(1.0, 4);
  auto ens = sample_brownian(g, 3000, 1, 18);
  Matrix state = brownian_state(ens, 2);
  KnotProjector proj(poly(3), state, ens.increments().at(2), g.dt());
  Matrix next = ens.brownian().at(3) * 0.5;
  auto y = proj.project(next);
  auto z = proj.extract_z(next);
  KnotModel km{proj.basis(), y.coefficients, z.coefficients};
  for (Index m : {0, 7, 99}) {
    Vector x = state.row(m).transpose();
    EXPECT_NEAR(km.y(x)[0], y.values(m, 0), 1e-12);
    EXPECT_NEAR(km.z(x, 1, 1)(0, 0), 0.5, 1e-8);
  }
}

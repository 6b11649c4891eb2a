#include "mbsde/project.hpp"
#include "mbsde/scenarios.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace mbsde;

namespace {

struct Coefs {
  std::function<double(double, const RowVector&)> Q = [](double, const RowVector&) { return 0.0; };
  std::function<void(double, const RowVector&, Vector&)> P = [](double, const RowVector&, Vector& o) {
    o.setZero();
  };
  std::function<void(double, const RowVector&, Vector&)> R = [](double, const RowVector&, Vector& o) {
    o.setZero();
  };
};

BsdeProblem projectable(Index d, Index n, double T, Vector a, TerminalFn xi, Coefs c, double C = 1.0,
                        double rho = 0.0) {
  ProjectableStructure s;
  s.a = std::move(a);
  s.P = [c](double, const PathView&, double u, const RowVector& v, Vector& o) { c.P(u, v, o); };
  s.Q = [c](double, const PathView&, double u, const RowVector& v) { return c.Q(u, v); };
  s.R = [c](double, const PathView&, double u, const RowVector& v, Vector& o) { c.R(u, v, o); };
  s.C = C;
  s.rho = RhoSpec::constant(rho);
  return make_projectable_problem("test", d, n, T, std::move(xi), 1.0, s);
}

TerminalFn sine1() {
  return [](const PathView& p, Vector& o) { o[0] = std::sin(p(0)); };
}

BasisSpec poly(int degree) {
  BasisSpec b;
  b.degree = degree;
  return b;
}

PicardOptions options(int degree = 4) {
  PicardOptions o;
  o.basis = poly(degree);
  return o;
}

}  // namespace

TEST(ScalarQuadratic, ZeroDriverIsConditionalExpectationOfFirstCoordinate) {
  TimeGrid g(1.0, 16);
  auto ens = sample_brownian(g, 4000, 2, 1);
  auto p = projectable(2, 2, 1.0, Vector::Unit(2, 0), sine_cosine_terminal(), {});
  auto s = solve_scalar_quadratic(p, ens, options());
  ASSERT_TRUE(s.converged);
  EXPECT_EQ(s.reports.size(), 1u);
  Matrix xi = evaluate_terminal(p, ens);
  EXPECT_EQ(Matrix(s.U(16)), Matrix(xi.col(0)));
  ProjectorCache cache(ens, poly(4));
  for (std::size_t k : {0u, 5u, 11u})
    EXPECT_LT((s.U(k) - cache.at(k).project(xi.col(0)).values).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ScalarQuadratic, ColeHopfAgainstPlainMonteCarlo) {
  const double gamma = 0.5, T = 0.5;
  TimeGrid g(T, 32);
  auto ens = sample_brownian(g, 40000, 1, 2);
  ScalarQuadraticParams qp;
  qp.gamma = gamma;
  qp.T = T;
  auto p = scalar_quadratic_problem(qp);
  Vector e(ens.paths());
  for (Index m = 0; m < ens.paths(); ++m) e[m] = std::exp(gamma * std::sin(ens.brownian()(32, m, 0)));
  auto mc = sample_mean(e);
  const double oracle = std::log(mc.mean) / gamma;
  const double se = mc.se / (gamma * mc.mean);

  auto ch = solve_scalar_cole_hopf(p, ens, gamma, poly(5));
  EXPECT_NEAR(ch.U(0)(0, 0), oracle, 1e-12);

  auto s = solve_scalar_quadratic(p, ens, options(5));
  ASSERT_TRUE(s.converged);
  EXPECT_NEAR(s.U(0)(0, 0), oracle, 3 * se + 0.02);
  // V from both routes: v = E_k[e^{gamma xi} dW] / (gamma E_k e^{gamma xi}) on the bulk
  double worst = 0;
  for (Index m = 0; m < ens.paths(); ++m)
    if (std::abs(ens.brownian()(16, m, 0)) < 1.0)
      worst = std::max(worst, std::abs(s.V(16)(m, 0) - ch.V(16)(m, 0)));
  EXPECT_LT(worst, 0.05);
}

TEST(ScalarQuadratic, LinearInUGrowsLikeExponential) {
  const double T = 0.5;
  TimeGrid g(T, 32);
  auto ens = sample_brownian(g, 20000, 1, 3);
  Coefs c;
  c.Q = [](double, const RowVector&) { return 1.0; };
  auto p = projectable(1, 1, T, Vector::Ones(1), [](const PathView& q, Vector& o) { o[0] = std::cos(q(0)); }, c);
  auto s = solve_scalar_quadratic(p, ens, options());
  ASSERT_TRUE(s.converged);
  Vector xi(ens.paths());
  for (Index m = 0; m < ens.paths(); ++m) xi[m] = std::cos(ens.brownian()(32, m, 0));
  auto mc = sample_mean(xi);
  // discretisation: (1 + dt)^N against e^T
  const double bias = std::exp(T) * T * g.dt();
  EXPECT_NEAR(s.U(0)(0, 0), std::exp(T) * mc.mean, 3 * std::exp(T) * mc.se + bias);
  EXPECT_NEAR(s.U(0)(0, 0), std::exp(T) * std::exp(-T / 2), 3 * std::exp(T) * mc.se + bias + 0.02);
}

TEST(ScalarQuadratic, WindowPartitionDoesNotChangeTheSolution) {
  TimeGrid g(0.5, 32);
  auto ens = sample_brownian(g, 20000, 1, 4);
  auto p = scalar_quadratic_problem();
  auto a = solve_scalar_quadratic(p, ens, options());
  auto o = options();
  o.window_steps = 8;
  auto b = solve_scalar_quadratic(p, ens, o);
  ASSERT_TRUE(a.converged && b.converged);
  EXPECT_EQ(b.reports.size(), 4u);
  EXPECT_NEAR(a.U(0)(0, 0), b.U(0)(0, 0), 3 * std::hypot(a.field.y_se[0], b.field.y_se[0]) + 1e-3);
}

TEST(Freeze, PointwiseEvaluation) {
  TimeGrid g(0.5, 8);
  auto ens = sample_brownian(g, 500, 2, 5);
  Coefs c;
  c.Q = [](double u, const RowVector&) { return std::sin(u); };
  c.R = [](double, const RowVector& v, Vector& o) { o = v.transpose(); };
  auto p = projectable(2, 2, 0.5, Vector::Ones(2), sine_cosine_terminal(), c, 1.0, 1.0);
  auto s = solve_scalar_quadratic(p, ens, options(3));
  ASSERT_TRUE(s.converged);
  auto f = freeze_coefficients(p, ens, s);
  for (std::size_t k = 0; k < 8; ++k)
    for (Index m = 0; m < 500; ++m) {
      EXPECT_EQ(f.Q(k, m, 0), std::sin(s.U(k)(m, 0)));
      EXPECT_EQ(f.R(k, m, 0), s.V(k)(m, 0));
      EXPECT_EQ(f.R(k, m, 1), s.V(k)(m, 1));
      EXPECT_EQ(f.P(k, m, 0), 0.0);
    }
  EXPECT_TRUE(f.warnings.empty());
}

TEST(Freeze, GrowthViolationIsAWarning) {
  TimeGrid g(0.5, 4);
  auto ens = sample_brownian(g, 200, 1, 6);
  Coefs c;
  c.Q = [](double, const RowVector&) { return 3.0; };
  auto p = projectable(1, 1, 0.5, Vector::Ones(1), sine1(), c, 1.0);
  auto s = solve_scalar_quadratic(p, ens, options(2));
  auto f = freeze_coefficients(p, ens, s);
  ASSERT_EQ(f.warnings.size(), 1u);
  EXPECT_EQ(f.growth[1].violations, f.growth[1].samples);
  EXPECT_NEAR(f.growth[1].max_excess, 2.0, 1e-12);
}

namespace {

FrozenCoefficients constant_coefficients(const PathEnsemble& ens, Index d, double p, double q, Vector r) {
  const std::size_t N = ens.steps();
  FrozenCoefficients c{KnotArray(N, ens.paths(), d, p), KnotArray(N, ens.paths(), 1, q),
                       KnotArray(N, ens.paths(), ens.dim()), {}, {}};
  for (std::size_t k = 0; k < N; ++k)
    for (Index i = 0; i < ens.dim(); ++i) c.R.at(k).col(i).setConstant(r[i]);
  return c;
}

}  // namespace

TEST(GammaRoute, DeterministicLinearOde) {
  TimeGrid g(1.0, 20);
  auto ens = sample_brownian(g, 300, 1, 7);
  const double q = 0.7, cst = 1.3;
  auto c = constant_coefficients(ens, 1, 0.0, q, Vector::Zero(1));
  Matrix xi = Matrix::Constant(300, 1, cst);
  auto y = solve_linear_via_gamma(ens, c, xi, poly(3));
  for (std::size_t k = 0; k <= 20; ++k)
    EXPECT_NEAR(y.y(k).maxCoeff(), cst * std::exp(q * (1.0 - g.time(k))), 1e-12 * std::exp(q));
  for (double v : y.Z.raw()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(GammaRoute, IntegratedConstantP) {
  TimeGrid g(1.0, 10);
  auto ens = sample_brownian(g, 300, 2, 8);
  auto c = constant_coefficients(ens, 2, 0.4, 0.0, Vector::Zero(2));
  auto y = solve_linear_via_gamma(ens, c, Matrix::Zero(300, 2), poly(3));
  for (std::size_t k = 0; k <= 10; ++k)
    EXPECT_NEAR(y.y(k).cwiseAbs().maxCoeff(), 0.4 * (1.0 - g.time(k)), 1e-12);
}

TEST(GammaRoute, ZeroCoefficientsGiveConditionalExpectation) {
  TimeGrid g(1.0, 8);
  auto ens = sample_brownian(g, 2000, 2, 9);
  auto c = constant_coefficients(ens, 2, 0.0, 0.0, Vector::Zero(2));
  auto p = zero_driver_problem(1.0);
  Matrix xi = evaluate_terminal(p, ens);
  auto y = solve_linear_via_gamma(ens, c, xi, poly(3));
  PicardOptions o = options(3);
  o.window_steps = 8;
  auto ref = solve_global(p, ens, o).field;
  EXPECT_LT(std::abs(y.y(0)(0, 1) - ref.y(0)(0, 1)), 1e-12);
  for (std::size_t k = 0; k < 8; ++k) {
    EXPECT_LT((y.y(k) - ref.y(k)).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((y.z(k) - ref.z(k)).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(GammaRoute, UnderflowAborts) {
  TimeGrid g(1.0, 4);
  auto ens = sample_brownian(g, 100, 1, 10);
  auto c = constant_coefficients(ens, 1, 0.0, -1e4, Vector::Zero(1));
  EXPECT_THROW(solve_linear_via_gamma(ens, c, Matrix::Ones(100, 1), poly(2)), SolverError);
}

TEST(MeasureRoute, NoMeasureChangeMatchesGamma) {
  TimeGrid g(0.5, 16);
  auto ens = sample_brownian(g, 3000, 1, 11);
  auto c = constant_coefficients(ens, 1, 0.2, 0.3, Vector::Zero(1));
  Matrix xi(3000, 1);
  for (Index m = 0; m < 3000; ++m) xi(m, 0) = std::sin(ens.brownian()(16, m, 0));
  LinearSolveInfo info;
  auto a = solve_linear_via_gamma(ens, c, xi, poly(4));
  auto b = solve_linear_via_measure(ens, c, xi, poly(4), &info);
  EXPECT_EQ(info.weight_mean.mean, 1.0);
  EXPECT_EQ(info.min_ess, 3000.0);
  for (std::size_t k = 0; k <= 16; ++k) EXPECT_LT((a.y(k) - b.y(k)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(MeasureRoute, ShiftedPayoffOracle) {
  // Y = xi + int Z r ds - int Z dW: Y_0 = E[sin(W_T + r T)]
  const double T = 1.0, r = 0.6;
  TimeGrid g(T, 32);
  const Index M = 40000;
  auto ens = sample_brownian(g, M, 1, 12);
  auto c = constant_coefficients(ens, 1, 0.0, 0.0, Vector::Constant(1, r));
  Matrix xi(M, 1);
  Vector shifted(M);
  for (Index m = 0; m < M; ++m) {
    xi(m, 0) = std::sin(ens.brownian()(32, m, 0));
    shifted[m] = std::sin(ens.brownian()(32, m, 0) + r * T);
  }
  auto mc = sample_mean(shifted);
  EXPECT_NEAR(mc.mean, std::sin(r * T) * std::exp(-T / 2), 3 * mc.se);
  LinearSolveInfo gi, mi;
  auto a = solve_linear_via_gamma(ens, c, xi, poly(5), &gi);
  auto b = solve_linear_via_measure(ens, c, xi, poly(5), &mi);
  EXPECT_NEAR(a.y(0)(0, 0), mc.mean, 3 * std::hypot(a.y_se[0], mc.se));
  EXPECT_NEAR(b.y(0)(0, 0), mc.mean, 3 * std::hypot(b.y_se[0], mc.se));
  EXPECT_LT(std::abs(mi.weight_mean.mean - 1.0), 3 * mi.weight_mean.se);
  // u(t,x) = e^{-(T-t)/2} sin(x + r(T-t)), so Z = u_x
  double worst = 0;
  for (Index m = 0; m < M; ++m) {
    double w = ens.brownian()(16, m, 0);
    if (std::abs(w) > 1.0) continue;
    double z = std::exp(-(T - g.time(16)) / 2) * std::cos(w + r * (T - g.time(16)));
    worst = std::max({worst, std::abs(a.z(16)(m, 0) - z), std::abs(b.z(16)(m, 0) - z)});
  }
  EXPECT_LT(worst, 0.05);
  EXPECT_TRUE(compare_fields(a, b).pass);
}

TEST(Consistency, ScalarProblemIsItsOwnProjection) {
  TimeGrid g(0.5, 16);
  auto ens = sample_brownian(g, 3000, 1, 13);
  auto p = projectable(1, 1, 0.5, Vector::Ones(1), sine1(), {});
  auto r = run_projection(p, ens, options());
  EXPECT_LT(r.consistency.max_abs_y, 1e-12);
  EXPECT_LT(r.consistency.z_gap, 1e-20);
  EXPECT_TRUE(r.pass());
}

TEST(Consistency, CompositeScenarioRoutesAgree) {
  auto p = projectable_composite_problem();
  TimeGrid g(p.horizon, 32);
  auto ens = sample_brownian(g, 20000, 2, 14);
  auto r = run_projection(p, ens, options());
  auto j = to_json(r);
  EXPECT_TRUE(r.scalar.converged);
  EXPECT_TRUE(r.coeffs.warnings.empty()) << j["freeze"].dump();
  EXPECT_TRUE(r.routes.pass) << j["routes"].dump();
  EXPECT_TRUE(r.consistency.pass) << j["consistency"].dump();
  EXPECT_LT(r.consistency.z_gap, 0.05 * r.consistency.z_scale);
  EXPECT_LT(std::abs(r.measure_info.weight_mean.mean - 1.0), 3 * r.measure_info.weight_mean.se);
  EXPECT_TRUE(j["pass"].get<bool>());
}

TEST(Consistency, RequiresProjectableStructure) {
  TimeGrid g(1.0, 4);
  auto ens = sample_brownian(g, 100, 2, 15);
  EXPECT_THROW(run_projection(zero_driver_problem(1.0), ens, options(2)), ConfigError);
}

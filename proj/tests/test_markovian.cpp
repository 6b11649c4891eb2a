#include "mbsde/diagnostics.hpp"
#include "mbsde/markovian.hpp"
#include "mbsde/pde.hpp"
#include "mbsde/scenarios.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace mbsde;

namespace {

using ScalarF = std::function<double(double x, double y, double z)>;

// n = d = 1 markovian problem from scalar callables
BsdeProblem scalar_markovian(double T, ScalarF F, ScalarF G, std::function<double(double)> h, double C = 1.0) {
  MarkovianStructure s;
  s.F = [F](double, const Vector& x, const Vector& y, const Matrix& z, Vector& o) { o[0] = F(x[0], y[0], z(0, 0)); };
  s.G = [G](double, const Vector& x, const Vector& y, const Matrix& z, Vector& o) { o[0] = G(x[0], y[0], z(0, 0)); };
  s.h = [h](const Vector& x, Vector& o) { o[0] = h(x[0]); };
  s.lipschitz_constant = C;
  s.growth_constant = C;
  s.rho = RhoSpec::constant(C);
  return make_markovian_problem("test", 1, 1, T, s);
}

double zero(double, double, double) { return 0.0; }

FbsdeOptions options(int degree = 5) {
  FbsdeOptions o;
  o.basis.degree = degree;
  return o;
}

}  // namespace

TEST(Decoupling, ZeroDriftReducesToPlainSweep) {
  auto p = damped_heat_problem();
  TimeGrid g(p.horizon, 16);
  auto ens = sample_brownian(g, 5000, 1, 1);
  auto r = solve_fbsde_decoupling(p, ens, options());
  EXPECT_EQ(r.forward, ens.brownian());
  ASSERT_TRUE(r.converged);
  EXPECT_EQ(r.outer_iterations, 2u);
  EXPECT_LT(r.decoupling.deltas[1], 1e-12);
  auto plain = backward_sweep(p, ens, ens.brownian(), options().basis);
  EXPECT_EQ(r.field.Y, plain.Y);
  EXPECT_EQ(r.field.Z, plain.Z);
  auto y = fbsde_to_bsde(p, r.decoupling, ens);
  for (std::size_t k = 0; k < 16; ++k) EXPECT_LT((y.y(k) - plain.y(k)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Decoupling, DampedSineHasZeroMean) {
  auto p = damped_heat_problem();
  TimeGrid g(p.horizon, 16);
  auto ens = sample_brownian(g, 20000, 1, 2);
  auto r = solve_fbsde_decoupling(p, ens, options());
  Vector xi(ens.paths());
  for (Index m = 0; m < ens.paths(); ++m) xi[m] = std::sin(ens.brownian()(16, m, 0));
  const double se = sample_mean(xi).se;
  EXPECT_NEAR(r.field.y(0)(0, 0), 0.0, 3 * se);
}

TEST(Decoupling, ConstantDriftShiftsTheHeatKernel) {
  const double T = 0.5, gdrift = 0.8;
  auto p = scalar_markovian(T, zero, [=](double, double, double) { return gdrift; },
                            [](double x) { return std::sin(x); });
  TimeGrid g(T, 16);
  auto ens = sample_brownian(g, 20000, 1, 3);
  auto r = solve_fbsde_decoupling(p, ens, options());
  ASSERT_TRUE(r.converged);
  Vector shifted(ens.paths());
  for (Index m = 0; m < ens.paths(); ++m) shifted[m] = std::sin(ens.brownian()(16, m, 0) + gdrift * T);
  auto mc = sample_mean(shifted);
  EXPECT_NEAR(r.field.y(0)(0, 0), mc.mean, 3 * mc.se + 1e-10);
  EXPECT_NEAR(mc.mean, std::sin(gdrift * T) * std::exp(-T / 2), 3 * mc.se);
  auto y = fbsde_to_bsde(p, r.decoupling, ens);
  EXPECT_NEAR(y.y(0)(0, 0), std::sin(gdrift * T) * std::exp(-T / 2), 3 * mc.se + 0.01);
}

TEST(Decoupling, TranslatedSolutionSatisfiesTheBsde) {
  auto p = drifted_fbsde_problem();
  TimeGrid g(p.horizon, 32);
  auto ens = sample_brownian(g, 20000, 1, 4);
  auto r = solve_fbsde_decoupling(p, ens, options());
  ASSERT_TRUE(r.converged) << r.warnings.front();
  const auto& s = *p.as<MarkovianStructure>();
  auto qb = fbsde_q_bound(*s.growth_constant, p.horizon);
  EXPECT_LE(r.max_q_sq, qb.bound * 1.05);
  TranslationInfo info;
  auto y = fbsde_to_bsde(p, r.decoupling, ens, &info);
  EXPECT_LT(info.outside_fraction, 0.01);
  auto res = residual_check(p, y, ens);
  EXPECT_TRUE(res.centered);
  auto w = forward_measure(p, ens, r);
  auto wm = sample_mean(w.terminal());
  EXPECT_LT(std::abs(wm.mean - 1.0), 3 * wm.se);
  EXPECT_LT(gradient_gap(r.decoupling, r.forward), 0.2);
}

TEST(Decoupling, BlowupAbortsCitingTheBound) {
  auto p = scalar_markovian(0.5, [](double, double y, double) { return 20.0 * y; }, zero,
                            [](double x) { return std::sin(x); });
  TimeGrid g(0.5, 16);
  auto ens = sample_brownian(g, 2000, 1, 5);
  try {
    solve_fbsde_decoupling(p, ens, options(3));
    FAIL() << "expected SolverError";
  } catch (const SolverError& e) {
    EXPECT_NE(std::string(e.what()).find("a priori bound"), std::string::npos);
  }
}

TEST(Decoupling, FieldExport) {
  auto p = damped_heat_problem();
  TimeGrid g(p.horizon, 4);
  auto ens = sample_brownian(g, 500, 1, 6);
  auto r = solve_fbsde_decoupling(p, ens, options(3));
  std::string csv = field_csv(r.decoupling);
  EXPECT_EQ(csv.rfind("knot,basis,coordinate,coefficient\n", 0), 0u);
  // knot 0 has only the constant; knots 1..3 have 4 functions and (q, r); knot 4 has q only
  std::size_t lines = std::count(csv.begin(), csv.end(), '\n');
  EXPECT_EQ(lines, 1u + 2 + 3 * 4 * 2 + 4);
}

TEST(Lipschitz, KnownConstants) {
  auto p = scalar_markovian(1.0, [](double x, double y, double) { return 2 * y + std::sin(x); }, zero,
                            [](double x) { return std::sin(x); }, 3.0);
  LipschitzOptions o;
  o.samples = 10000;
  o.seed = 7;
  auto r = lipschitz_certificate(p, o);
  EXPECT_GT(r.estimates[0].constant, 2.0 - 0.05);
  EXPECT_LE(r.estimates[0].constant, 2.0 + 1e-9);
  EXPECT_GT(r.estimates[2].constant, 1.0 - 0.01);
  EXPECT_LE(r.estimates[2].constant, 1.0 + 1e-9);
  EXPECT_EQ(r.estimates[1].constant, 0.0);
  EXPECT_TRUE(r.pass);

  auto q = scalar_markovian(1.0, [](double, double y, double) { return y; }, zero, [](double) { return 0.0; }, 0.5);
  auto rq = lipschitz_certificate(q, o);
  EXPECT_NEAR(rq.estimates[0].constant, 1.0, 1e-3);
  EXPECT_LE(rq.estimates[0].constant, 1.0 + 1e-12);
  EXPECT_FALSE(rq.pass);
  EXPECT_TRUE(to_json(rq).contains("declared"));
}

TEST(Lipschitz, LibraryScenariosMeetTheirDeclaredConstants) {
  for (const auto& p : {decoupled_fbsde_problem(), drifted_fbsde_problem(), damped_heat_problem()})
    EXPECT_TRUE(lipschitz_certificate(p).pass) << p.name << to_json(lipschitz_certificate(p)).dump();
}

TEST(Pde, HeatEigenfunction) {
  const double T = 0.25;
  auto p = scalar_markovian(T, zero, zero, [](double x) { return std::sin(x); });
  PdeGrid pg;
  pg.dx = 0.01;
  pg.dt = 1e-5;
  TimeGrid g(T, 5);
  auto u = solve_pde(p, g, pg);
  double worst = 0;
  for (std::size_t k = 0; k <= 5; ++k)
    for (Index i = 0; i < u.nodes(); ++i) {
      double x = u.node(i)[0];
      if (std::abs(x) > 3) continue;
      worst = std::max(worst, std::abs(u.u[k](i, 0) - std::sin(x) * std::exp(-(T - g.time(k)) / 2)));
    }
  EXPECT_LE(worst, 1e-3);
}

TEST(Pde, ConstantTerminalStaysConstant) {
  auto p = scalar_markovian(0.5, zero, zero, [](double) { return 0.7; });
  PdeGrid pg;
  pg.dx = 0.05;
  auto u = solve_pde(p, TimeGrid(0.5, 4), pg);
  for (const auto& m : u.u) EXPECT_LT((m.array() - 0.7).abs().maxCoeff(), 1e-12);
}

TEST(Pde, DampedEigenfunction) {
  const double T = 0.25;
  auto p = damped_heat_problem({1.0, T});
  PdeGrid pg;
  pg.dx = 0.01;
  pg.dt = 1e-5;
  TimeGrid g(T, 5);
  auto u = solve_pde(p, g, pg);
  for (Index i = 0; i < u.nodes(); i += 7) {
    double x = u.node(i)[0];
    if (std::abs(x) > 3) continue;
    EXPECT_NEAR(u.u[0](i, 0), std::sin(x) * std::exp(-1.5 * T), 1e-3);
    EXPECT_NEAR(u.value(0, Vector::Constant(1, x + 0.003))[0], std::sin(x + 0.003) * std::exp(-1.5 * T), 1e-3);
  }
}

TEST(Pde, TwoDimensionalSeparable) {
  const double T = 0.25;
  DecoupledFbsdeParams dp;
  dp.damping = 0;
  dp.forcing = 0;
  dp.terminal_scale = 1;
  dp.T = T;
  auto p = decoupled_fbsde_problem(dp);
  PdeGrid pg;
  pg.L = 4;
  pg.dx = 0.1;
  auto u = solve_pde(p, TimeGrid(T, 2), pg);
  Vector x(2);
  x << 0.3, -0.7;
  Vector v = u.value(0, x);
  EXPECT_NEAR(v[0], std::sin(0.3) * std::exp(-T / 2), 2e-3);
  EXPECT_NEAR(v[1], std::cos(-0.7) * std::exp(-T / 2), 2e-3);
  EXPECT_NE(pde_csv(u, 10).find("t,x0,x1,u0,u1"), std::string::npos);
}

TEST(Pde, StabilityGuards) {
  auto p = scalar_markovian(1.0, zero, zero, [](double x) { return x > 0 ? 1.0 : 0.0; });
  PdeGrid pg;
  pg.dx = 0.1;
  pg.dt = 0.1;
  EXPECT_THROW(solve_pde(p, TimeGrid(1.0, 10), pg), ConfigError);
  pg.enforce_cfl = false;
  try {
    solve_pde(p, TimeGrid(1.0, 10), pg);
    FAIL() << "expected SolverError";
  } catch (const SolverError& e) {
    EXPECT_NE(std::string(e.what()).find("CFL"), std::string::npos);
  }
}

TEST(Pde, CrosscheckAgainstDecouplingField) {
  auto p = damped_heat_problem();
  TimeGrid g(p.horizon, 32);
  auto ens = sample_brownian(g, 20000, 1, 8);
  auto r = solve_fbsde_decoupling(p, ens, options());
  PdeGrid pg;
  pg.dx = 0.02;
  auto c = pde_crosscheck(p, r.decoupling, r.forward, pg);
  EXPECT_TRUE(c.pass) << to_json(c).dump();
  EXPECT_GT(c.covered.back(), 10u);
}

TEST(Pde, CrosscheckWithDrift) {
  auto p = drifted_fbsde_problem();
  TimeGrid g(p.horizon, 32);
  auto ens = sample_brownian(g, 20000, 1, 9);
  auto r = solve_fbsde_decoupling(p, ens, options());
  PdeGrid pg;
  pg.dx = 0.02;
  auto c = pde_crosscheck(p, r.decoupling, r.forward, pg);
  EXPECT_TRUE(c.pass) << to_json(c).dump();
}

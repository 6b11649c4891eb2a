#include "mbsde/scenarios.hpp"

#include <algorithm>
#include <cmath>

namespace mbsde {

namespace {

void zero(double, const PathView&, const Vector&, const Matrix&, Vector& out) { out.setZero(); }

}  // namespace

TerminalFn sine_cosine_terminal(double scale) {
  return [scale](const PathView& p, Vector& out) {
    out[0] = scale * std::sin(p(0));
    out[1] = scale * std::cos(p(1));
  };
}

BsdeProblem zero_driver_problem(double T) {
  SubquadraticStructure s;
  s.C = std::sqrt(2.0);
  s.eps = 0.5;
  s.rho = RhoSpec::constant(0.0);
  s.F = zero;
  s.G = zero;
  return make_subquadratic_problem("zero-driver", 2, 2, T, sine_cosine_terminal(), std::sqrt(2.0), s);
}

BsdeProblem sine_terminal_problem(double T) {
  SubquadraticStructure s;
  s.C = 1.0;
  s.eps = 0.5;
  s.rho = RhoSpec::constant(0.0);
  s.F = zero;
  s.G = zero;
  return make_subquadratic_problem(
      "sine-terminal", 1, 1, T, [](const PathView& p, Vector& out) { out[0] = std::sin(p(0)); }, 1.0, s);
}

BsdeProblem linear_vector_problem(const LinearVectorParams& lp) {
  if (lp.A.rows() != 2 || lp.A.cols() != 2 || lp.b.size() != 2)
    throw ConfigError("linear-vector: A must be 2x2 and b of length 2");
  const double a_norm = lp.A.operatorNorm();
  SubquadraticStructure s;
  s.C = std::max({a_norm, lp.b.norm(), std::sqrt(2.0) * std::abs(lp.terminal_scale)});
  s.eps = 0.5;
  s.rho = RhoSpec::constant(a_norm);
  const Matrix A = lp.A;
  const Vector b = lp.b;
  s.F = [A, b](double, const PathView&, const Vector& y, const Matrix&, Vector& out) { out = A * y + b; };
  s.G = zero;
  return make_subquadratic_problem("linear-vector", 2, 2, lp.T, sine_cosine_terminal(lp.terminal_scale),
                                   std::sqrt(2.0) * std::abs(lp.terminal_scale), s);
}

BsdeProblem scalar_quadratic_problem(const ScalarQuadraticParams& qp) {
  if (!(qp.gamma > 0)) throw ConfigError("scalar-quadratic: gamma must be positive");
  ProjectableStructure s;
  s.a = Vector::Ones(1);
  const double g = qp.gamma;
  s.P = [](double, const PathView&, double, const RowVector&, Vector& out) { out.setZero(); };
  s.Q = [](double, const PathView&, double, const RowVector&) { return 0.0; };
  // f = z R with R = (gamma/2) v^T gives the quadratic term
  s.R = [g](double, const PathView&, double, const RowVector& v, Vector& out) {
    out = 0.5 * g * v.transpose();
  };
  s.C = 1.0;
  s.rho = RhoSpec::constant(0.5 * g);
  return make_projectable_problem("scalar-quadratic", 1, 1, qp.T,
                                  [](const PathView& p, Vector& out) { out[0] = std::sin(p(0)); }, 1.0, s);
}

BsdeProblem projectable_composite_problem(const ProjectableCompositeParams& cp) {
  if (!(cp.q_clip >= 0) || !(cp.r_scale >= 0)) throw ConfigError("projectable-composite: negative constant");
  ProjectableStructure s;
  s.a = Vector::Ones(2);
  const double ps = cp.p_scale, qs = cp.q_scale, clip = cp.q_clip, rs = cp.r_scale;
  s.P = [ps](double, const PathView&, double u, const RowVector&, Vector& out) {
    out[0] = ps * std::cos(u);
    out[1] = -ps;
  };
  s.Q = [qs, clip](double, const PathView&, double u, const RowVector&) {
    return std::clamp(qs * std::sin(u), -clip, clip);
  };
  s.R = [rs](double, const PathView&, double, const RowVector& v, Vector& out) { out = rs * v.transpose(); };
  s.C = std::max({std::sqrt(2.0) * ps, clip, 1.0});
  s.rho = RhoSpec::constant(rs);
  return make_projectable_problem("projectable-composite", 2, 2, cp.T, sine_cosine_terminal(cp.terminal_scale),
                                  std::sqrt(2.0) * std::abs(cp.terminal_scale), s);
}

BsdeProblem subquadratic_power_problem(const SubquadraticPowerParams& sp) {
  if (sp.b.size() != 2) throw ConfigError("subquadratic-power: b must have length 2");
  SubquadraticStructure s;
  s.C = sp.C;
  s.eps = sp.eps;
  s.rho = RhoSpec::constant(sp.rho);
  const Vector b = sp.b;
  const double lambda = sp.lambda, kappa = sp.kappa, eps = sp.eps;
  s.F = [b, lambda](double, const PathView&, const Vector& y, const Matrix&, Vector& out) {
    out = b - lambda * y;
  };
  s.G = [kappa, eps](double, const PathView&, const Vector&, const Matrix& z, Vector& out) {
    Vector w = z.row(0).transpose();
    out = kappa * (z * w) / std::pow(1.0 + z.squaredNorm(), eps / 2);
  };
  return make_subquadratic_problem("subquadratic-power", 2, 2, sp.T, sine_cosine_terminal(sp.terminal_scale),
                                   std::sqrt(2.0) * std::abs(sp.terminal_scale), s);
}

BsdeProblem decoupled_fbsde_problem(const DecoupledFbsdeParams& dp) {
  MarkovianStructure s;
  const double a = dp.damping, c = dp.forcing, sc = dp.terminal_scale;
  s.F = [a, c](double, const Vector& x, const Vector& y, const Matrix&, Vector& out) {
    out[0] = -a * y[0] + c * std::sin(x[0]);
    out[1] = -a * y[1] + c * std::cos(x[1]);
  };
  s.G = [](double, const Vector&, const Vector&, const Matrix&, Vector& out) { out.setZero(); };
  s.h = [sc](const Vector& x, Vector& out) {
    out[0] = sc * std::sin(x[0]);
    out[1] = sc * std::cos(x[1]);
  };
  s.lipschitz_constant = std::max({std::abs(a), std::abs(c), std::abs(sc), 1.0});
  s.growth_constant = std::max({std::abs(a), std::sqrt(2.0) * std::abs(c), std::sqrt(2.0) * std::abs(sc), 1.0});
  s.rho = RhoSpec::constant(0.0);
  return make_markovian_problem("decoupled-fbsde", 2, 2, dp.T, s);
}

BsdeProblem drifted_fbsde_problem(const DriftedFbsdeParams& dp) {
  MarkovianStructure s;
  const double b = dp.drift, k = dp.coupling, a = dp.damping;
  s.F = [a](double, const Vector&, const Vector& y, const Matrix&, Vector& out) { out[0] = -a * y[0]; };
  s.G = [b, k](double, const Vector&, const Vector& y, const Matrix&, Vector& out) {
    out[0] = b + k * std::sin(y[0]);
  };
  s.h = [](const Vector& x, Vector& out) { out[0] = std::sin(x[0]); };
  s.lipschitz_constant = std::max({std::abs(a), std::abs(k), std::abs(b) + 1.0});
  s.growth_constant = std::max({std::abs(a), std::abs(b) + std::abs(k), 1.0});
  s.rho = RhoSpec::constant(std::abs(b) + std::abs(k));
  return make_markovian_problem("drifted-fbsde", 1, 1, dp.T, s);
}

BsdeProblem damped_heat_problem(const DampedHeatParams& hp) {
  MarkovianStructure s;
  const double a = hp.damping;
  s.F = [a](double, const Vector&, const Vector& y, const Matrix&, Vector& out) { out[0] = -a * y[0]; };
  s.G = [](double, const Vector&, const Vector&, const Matrix&, Vector& out) { out.setZero(); };
  s.h = [](const Vector& x, Vector& out) { out[0] = std::sin(x[0]); };
  s.lipschitz_constant = std::max(std::abs(a), 1.0);
  s.growth_constant = std::max(std::abs(a), 1.0);
  s.rho = RhoSpec::constant(0.0);
  return make_markovian_problem("damped-heat", 1, 1, hp.T, s);
}

}  // namespace mbsde

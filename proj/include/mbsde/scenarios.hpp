#pragma once

#include "mbsde/problem.hpp"

#include <string>
#include <vector>

namespace mbsde {

/// xi = scale (sin W^1_T, cos W^2_T) for d = n = 2.
TerminalFn sine_cosine_terminal(double scale = 1.0);

/// f = 0, xi = (sin W^1_T, cos W^2_T), d = n = 2.
BsdeProblem zero_driver_problem(double T = 1.0);
/// f = 0, xi = sin W_T, d = n = 1.
BsdeProblem sine_terminal_problem(double T = 1.0);

struct LinearVectorParams {
  Matrix A = (Matrix(2, 2) << -0.5, 0.2, 0.1, -0.3).finished();
  Vector b = (Vector(2) << 0.1, 0.2).finished();
  double terminal_scale = 0.5;
  double T = 0.5;
};
/// f = A y + b, xi = s (sin W^1_T, cos W^2_T).
BsdeProblem linear_vector_problem(const LinearVectorParams& p = {});

struct ScalarQuadraticParams {
  double gamma = 0.5;
  double T = 0.5;
};
/// d = n = 1, f = (gamma/2) |z|^2, xi = sin W_T; projectable with a = 1.
BsdeProblem scalar_quadratic_problem(const ScalarQuadraticParams& p = {});

struct ProjectableCompositeParams {
  double p_scale = 0.1;
  double q_scale = 0.5;
  double q_clip = 0.5;  // Q is clipped to [-q_clip, q_clip]
  double r_scale = 0.25;
  double terminal_scale = 0.5;
  double T = 0.5;
};
/// d = n = 2, a = (1, 1): P = p (cos u, -1), Q = clip(q sin u), R = r v^T,
/// xi = s (sin W^1_T, cos W^2_T). The projected driver is quadratic in v.
BsdeProblem projectable_composite_problem(const ProjectableCompositeParams& p = {});

struct SubquadraticPowerParams {
  double C = 0.8;
  double eps = 0.9;
  double rho = 0.25;
  double lambda = 0.2;
  double kappa = 0.1;
  Vector b = (Vector(2) << 0.1, -0.1).finished();
  double terminal_scale = 0.5;
  double T = 0.5;
};
/// d = n = 2, f = F + G with F = b - lambda y and
/// G = kappa z (z^T e_1) / (1 + |z|^2)^{eps/2}, so |G| <= kappa |z|^{2-eps}.
BsdeProblem subquadratic_power_problem(const SubquadraticPowerParams& p = {});

struct DecoupledFbsdeParams {
  double damping = 0.5;
  double forcing = 0.2;
  double terminal_scale = 0.5;
  double T = 0.5;
};
/// d = n = 2, G = 0, F = -damping y + forcing (sin x1, cos x2), h = s (sin x1, cos x2).
BsdeProblem decoupled_fbsde_problem(const DecoupledFbsdeParams& p = {});

struct DriftedFbsdeParams {
  double drift = 0.5;
  double coupling = 0.3;
  double damping = 0.2;
  double T = 0.5;
};
/// d = n = 1, F = -damping y, G = drift + coupling sin(y), h = sin.
BsdeProblem drifted_fbsde_problem(const DriftedFbsdeParams& p = {});

struct DampedHeatParams {
  double damping = 1.0;
  double T = 0.5;
};
/// d = n = 1, F = -damping y, G = 0, h = sin; u = sin(x) e^{-(1/2 + damping)(T-t)}.
BsdeProblem damped_heat_problem(const DampedHeatParams& p = {});

}  // namespace mbsde

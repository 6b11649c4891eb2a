#include "mbsde/library.hpp"

#include "mbsde/scenarios.hpp"

#include <cmath>
#include <set>
#include <sstream>

namespace mbsde {

namespace {

using nlohmann::json;

// Parameter reader that rejects keys it was never asked about.
class Params {
 public:
  Params(const std::string& scenario, const json& j) : scenario_(scenario), j_(j.is_null() ? json::object() : j) {
    if (!j_.is_object()) throw ConfigError(scenario + ": params must be an object");
  }

  double number(const std::string& key, double fallback) {
    seen_.insert(key);
    if (!j_.contains(key)) return fallback;
    if (!j_[key].is_number()) throw ConfigError(scenario_ + ": param " + key + " must be a number");
    return j_[key].get<double>();
  }

  Vector vector(const std::string& key, const Vector& fallback) {
    seen_.insert(key);
    if (!j_.contains(key)) return fallback;
    const json& a = j_[key];
    if (!a.is_array() || a.size() != static_cast<std::size_t>(fallback.size()))
      throw ConfigError(scenario_ + ": param " + key + " must be an array of length " + std::to_string(fallback.size()));
    Vector v(fallback.size());
    for (Index i = 0; i < v.size(); ++i) {
      if (!a[i].is_number()) throw ConfigError(scenario_ + ": param " + key + " must hold numbers");
      v[i] = a[i].get<double>();
    }
    return v;
  }

  Matrix matrix(const std::string& key, const Matrix& fallback) {
    seen_.insert(key);
    if (!j_.contains(key)) return fallback;
    const json& a = j_[key];
    const auto rows = static_cast<std::size_t>(fallback.rows()), cols = static_cast<std::size_t>(fallback.cols());
    auto bad = [&] {
      return ConfigError(scenario_ + ": param " + key + " must be a " + std::to_string(rows) + "x" + std::to_string(cols)
                         + " array of rows");
    };
    if (!a.is_array() || a.size() != rows) throw bad();
    Matrix m(fallback.rows(), fallback.cols());
    for (std::size_t r = 0; r < rows; ++r) {
      if (!a[r].is_array() || a[r].size() != cols) throw bad();
      for (std::size_t c = 0; c < cols; ++c) {
        if (!a[r][c].is_number()) throw bad();
        m(static_cast<Index>(r), static_cast<Index>(c)) = a[r][c].get<double>();
      }
    }
    return m;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError(scenario_ + ": unknown param '" + k + "'");
  }

 private:
  std::string scenario_;
  json j_;
  std::set<std::string> seen_;
};

ScenarioInstance closed_form(BsdeProblem p, Vector value, std::string method, double abs_tol) {
  ScenarioInstance s;
  s.problem = std::move(p);
  s.oracle_name = method;
  s.abs_tol = abs_tol;
  Vector se = Vector::Zero(value.size());
  s.oracle = [value, se, method](const PathEnsemble&) { return OracleValue{value, se, method}; };
  return s;
}

ScenarioInstance nested_only(BsdeProblem p, double abs_tol) {
  ScenarioInstance s;
  s.problem = std::move(p);
  s.oracle_name = "nested";
  s.abs_tol = abs_tol;
  return s;
}

// E[Y_0] for f = A y + b: m' = -(A m + b) backward from m(T) = E xi, classical RK4.
Vector linear_mean_ode(const Matrix& A, const Vector& b, const Vector& terminal_mean, double T) {
  const int steps = 20000;
  const double h = T / steps;
  Vector m = terminal_mean;
  auto rhs = [&](const Vector& v) -> Vector { return A * v + b; };  // d m / d(T - t)
  for (int i = 0; i < steps; ++i) {
    Vector k1 = rhs(m), k2 = rhs(m + 0.5 * h * k1), k3 = rhs(m + 0.5 * h * k2), k4 = rhs(m + h * k3);
    m += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  return m;
}

std::vector<ScenarioInfo> build_library() {
  std::vector<ScenarioInfo> lib;

  lib.push_back({"zero-driver", "f = 0, xi = (sin W1_T, cos W2_T); Y_0 = (0, e^{-T/2})", "zero", 1.0, {},
                 [](double T, const json& j) {
                   Params("zero-driver", j).finish();
                   return closed_form(zero_driver_problem(T), (Vector(2) << 0.0, std::exp(-T / 2)).finished(),
                                      "closed form", 0.0);
                 }});

  lib.push_back({"sine-terminal", "f = 0, xi = sin W_T; Y_0 = 0", "zero", 1.0, {},
                 [](double T, const json& j) {
                   Params("sine-terminal", j).finish();
                   return closed_form(sine_terminal_problem(T), Vector::Zero(1), "closed form", 0.0);
                 }});

  lib.push_back({"linear-vector", "f = A y + b, xi = s (sin W1_T, cos W2_T); E Y_0 from the mean ODE", "linear", 0.5,
                 {"A", "b", "terminal_scale"},
                 [](double T, const json& j) {
                   Params pr("linear-vector", j);
                   LinearVectorParams lp;
                   lp.A = pr.matrix("A", lp.A);
                   lp.b = pr.vector("b", lp.b);
                   lp.terminal_scale = pr.number("terminal_scale", lp.terminal_scale);
                   lp.T = T;
                   pr.finish();
                   Vector exi = (Vector(2) << 0.0, lp.terminal_scale * std::exp(-T / 2)).finished();
                   return closed_form(linear_vector_problem(lp), linear_mean_ode(lp.A, lp.b, exi, T),
                                      "mean ODE (RK4)", 0.01);
                 }});

  lib.push_back({"scalar-quadratic", "f = (gamma/2)|z|^2, xi = sin W_T; Cole-Hopf (1/gamma) log E e^{gamma xi}",
                 "scalar-quadratic", 0.5, {"gamma"},
                 [](double T, const json& j) {
                   Params pr("scalar-quadratic", j);
                   ScalarQuadraticParams qp;
                   qp.gamma = pr.number("gamma", qp.gamma);
                   qp.T = T;
                   pr.finish();
                   ScenarioInstance s;
                   s.problem = scalar_quadratic_problem(qp);
                   s.oracle_name = "Cole-Hopf (plain MC on the run ensemble)";
                   s.abs_tol = 0.02;
                   const double g = qp.gamma;
                   s.oracle = [g](const PathEnsemble& ens) {
                     const std::size_t N = ens.steps();
                     Vector e(ens.paths());
                     for (Index m = 0; m < ens.paths(); ++m) e[m] = std::exp(g * std::sin(ens.brownian()(N, m, 0)));
                     auto mc = sample_mean(e);
                     OracleValue o;
                     o.value = Vector::Constant(1, std::log(mc.mean) / g);
                     o.se = Vector::Constant(1, mc.se / (g * mc.mean));
                     o.method = "Cole-Hopf";
                     return o;
                   };
                   return s;
                 }});

  lib.push_back({"projectable-composite", "d = 2, a = (1,1), P = p(cos u, -1), Q = clip(q sin u), R = r v^T",
                 "projectable-composite", 0.5, {"p_scale", "q_scale", "q_clip", "r_scale", "terminal_scale"},
                 [](double T, const json& j) {
                   Params pr("projectable-composite", j);
                   ProjectableCompositeParams cp;
                   cp.p_scale = pr.number("p_scale", cp.p_scale);
                   cp.q_scale = pr.number("q_scale", cp.q_scale);
                   cp.q_clip = pr.number("q_clip", cp.q_clip);
                   cp.r_scale = pr.number("r_scale", cp.r_scale);
                   cp.terminal_scale = pr.number("terminal_scale", cp.terminal_scale);
                   cp.T = T;
                   pr.finish();
                   return nested_only(projectable_composite_problem(cp), 0.01);
                 }});

  lib.push_back({"subquadratic-power", "f = b - lambda y + kappa z (z^T e1)/(1+|z|^2)^{eps/2}", "subquadratic-power",
                 0.5, {"C", "eps", "rho", "lambda", "kappa", "b", "terminal_scale"},
                 [](double T, const json& j) {
                   Params pr("subquadratic-power", j);
                   SubquadraticPowerParams sp;
                   sp.C = pr.number("C", sp.C);
                   sp.eps = pr.number("eps", sp.eps);
                   sp.rho = pr.number("rho", sp.rho);
                   sp.lambda = pr.number("lambda", sp.lambda);
                   sp.kappa = pr.number("kappa", sp.kappa);
                   sp.b = pr.vector("b", sp.b);
                   sp.terminal_scale = pr.number("terminal_scale", sp.terminal_scale);
                   sp.T = T;
                   pr.finish();
                   return nested_only(subquadratic_power_problem(sp), 0.01);
                 }});

  lib.push_back({"decoupled-fbsde", "G = 0, F = -a y + c (sin x1, cos x2), h = s (sin x1, cos x2)", "decoupled-fbsde",
                 0.5, {"damping", "forcing", "terminal_scale"},
                 [](double T, const json& j) {
                   Params pr("decoupled-fbsde", j);
                   DecoupledFbsdeParams dp;
                   dp.damping = pr.number("damping", dp.damping);
                   dp.forcing = pr.number("forcing", dp.forcing);
                   dp.terminal_scale = pr.number("terminal_scale", dp.terminal_scale);
                   dp.T = T;
                   pr.finish();
                   // second coordinate: s e^{-(a+1/2)T} + c (1 - e^{-(a+1/2)T}) / (a + 1/2)
                   const double k = dp.damping + 0.5, e = std::exp(-k * T);
                   Vector y0(2);
                   y0[0] = 0.0;
                   y0[1] = dp.terminal_scale * e + dp.forcing * (std::abs(k) > 1e-12 ? (1 - e) / k : T);
                   return closed_form(decoupled_fbsde_problem(dp), y0, "closed form", 0.01);
                 }});

  lib.push_back({"drifted-fbsde", "F = -a y, G = b + k sin y, h = sin", "drifted-fbsde", 0.5,
                 {"drift", "coupling", "damping"},
                 [](double T, const json& j) {
                   Params pr("drifted-fbsde", j);
                   DriftedFbsdeParams dp;
                   dp.drift = pr.number("drift", dp.drift);
                   dp.coupling = pr.number("coupling", dp.coupling);
                   dp.damping = pr.number("damping", dp.damping);
                   dp.T = T;
                   pr.finish();
                   return nested_only(drifted_fbsde_problem(dp), 0.01);
                 }});

  lib.push_back({"damped-heat", "F = -a y, G = 0, h = sin; u = sin(x) e^{-(a+1/2)(T-t)}", "damped-heat", 0.5,
                 {"damping"},
                 [](double T, const json& j) {
                   Params pr("damped-heat", j);
                   DampedHeatParams hp;
                   hp.damping = pr.number("damping", hp.damping);
                   hp.T = T;
                   pr.finish();
                   return closed_form(damped_heat_problem(hp), Vector::Zero(1), "closed form", 0.01);
                 }});
  return lib;
}

}  // namespace

const std::vector<ScenarioInfo>& scenario_library() {
  static const std::vector<ScenarioInfo> lib = build_library();
  return lib;
}

const ScenarioInfo& find_scenario(const std::string& name) {
  for (const auto& s : scenario_library())
    if (s.name == name) return s;
  for (const auto& s : scenario_library())
    if (s.family == name && s.family != "zero") return s;
  std::ostringstream msg;
  msg << "unknown scenario '" << name << "'; known:";
  for (const auto& s : scenario_library()) msg << ' ' << s.name;
  throw ConfigError(msg.str());
}

}  // namespace mbsde

#include "mbsde/runner.hpp"

#include "mbsde/markovian.hpp"
#include "mbsde/pde.hpp"
#include "mbsde/picard.hpp"
#include "mbsde/project.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>

namespace mbsde {

namespace {

using nlohmann::json;

std::string fmt(double v) {
  if (!std::isfinite(v)) return "";
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::setprecision(12) << v;
  return os.str();
}

std::string brief(double v) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::setprecision(6) << v;
  return os.str();
}

std::vector<double> to_vec(const Vector& v) { return {v.data(), v.data() + v.size()}; }

struct Solved {
  ScenarioInstance scen;
  Route route = Route::automatic;
  PathEnsemble ens;
  SolutionField sol;
  bool converged = false;
  std::vector<std::string> warnings;
  json reports = json::array();
  json route_json = json::object();
  std::vector<Check> checks;
  std::function<double(double)> phi;
  std::optional<FbsdeResult> fbsde;
  Vector y0, y0_se;
};

Route resolve_route(const BsdeProblem& p, Route r) {
  const std::string has = structure_name(p.structure);
  if (r == Route::automatic) {
    if (p.as<SubquadraticStructure>()) return Route::picard;
    if (p.as<ProjectableStructure>()) return Route::project;
    if (p.as<MarkovianStructure>()) return Route::markovian;
    throw ConfigError(p.name + " declares no structure; no solver route applies");
  }
  if (r == Route::picard && !p.as<SubquadraticStructure>())
    throw ConfigError("route picard needs a subquadratic certificate (constants C, eps, rho); " + p.name
                      + " declares " + has + " structure");
  if (r == Route::project && !p.as<ProjectableStructure>())
    throw ConfigError("route project needs a projectable structure (a, P, Q, R); " + p.name + " declares " + has
                      + " structure");
  if (r == Route::markovian && !p.as<MarkovianStructure>())
    throw ConfigError("route markovian needs a markovian structure (F, G, h); " + p.name + " declares " + has
                      + " structure");
  return r;
}

json report_json(const PicardReport& r) {
  return {{"window", {r.window.first, r.window.last}},
          {"iterations", r.iterations},
          {"sup_deltas", r.sup_deltas},
          {"bmo_deltas", r.bmo_deltas},
          {"ratios", r.ratios},
          {"converged", r.converged},
          {"h", r.h},
          {"R", r.R},
          {"sup_y", r.sup_y},
          {"bmo_z", r.bmo_z},
          {"message", r.message}};
}

Check weight_check(const std::string& name, const MeanEstimate& w, double se_mult) {
  return {name, "measure", "|E weight_T - 1| <= " + fmt(se_mult) + " SE", se_mult * w.se, std::abs(w.mean - 1.0),
          std::abs(w.mean - 1.0) <= se_mult * w.se + 1e-12};
}

// Per-coordinate SE of Y_0 from the pathwise representation xi + sum f dt.
Vector representation_se(const BsdeProblem& p, const SolutionField& sol, const PathEnsemble& ens) {
  const std::size_t N = ens.steps();
  const double dt = ens.grid().dt();
  Matrix S = evaluate_terminal(p, ens);
  for (std::size_t k = 0; k < N; ++k) S += evaluate_driver(p, ens, k, sol.y(k), sol.z(k)) * dt;
  Vector se(sol.d);
  for (Index j = 0; j < sol.d; ++j) se[j] = sample_mean(S.col(j)).se;
  return se;
}

PicardOptions picard_options(const RunConfig& c) {
  PicardOptions o;
  o.tol = c.picard_tol;
  o.max_iter = c.max_iter;
  o.basis = c.basis;
  o.window_steps = c.window_steps;
  return o;
}

Solved solve(const RunConfig& c, const PathEnsemble* given = nullptr) {
  const ScenarioInfo& info = find_scenario(c.scenario);
  const double T = c.T.value_or(info.default_T);
  Solved s;
  s.scen = info.make(T, c.params);
  const BsdeProblem& p = s.scen.problem;
  check_structure(p);
  s.route = resolve_route(p, c.route);
  s.ens = given ? *given : sample_brownian(TimeGrid(T, c.N), c.M, p.n, c.seed);
  switch (s.route) {
    case Route::picard: {
      const auto& sq = *p.as<SubquadraticStructure>();
      auto g = solve_global(p, s.ens, picard_options(c));
      s.sol = std::move(g.field);
      s.converged = g.converged;
      s.warnings = g.warnings;
      double worst = 0.0;
      for (const auto& r : g.reports) {
        s.reports.push_back(report_json(r));
        worst = std::max(worst, r.max_ratio());
      }
      s.route_json = {{"window_steps", g.window_steps},
                      {"windows", g.reports.size()},
                      {"ball", {{"C", g.ball.C}, {"R", g.ball.R}, {"eps", g.ball.eps}, {"rhoR", g.ball.rhoR}, {"h", g.ball.h}}},
                      {"max_ratio", worst}};
      const double C = sq.C;
      s.phi = [C, T](double t) { return apriori_y_bound(C, T, t); };
      auto v = check_y_bound(s.sol, C, T, c.bound_slack, c.se_mult);
      s.checks.push_back({"y_apriori_bound", "bound", "max |Y_t| <= phi(t)(1+slack) + SE", v.bound * (1 + c.bound_slack),
                          v.max_observed, v.pass});
      auto drift = build_b4_drift(s.sol, sq.rho, s.ens);
      s.checks.push_back(weight_check("b4_drift_weight", drift.terminal_mean, c.se_mult));
      s.checks.push_back({"contraction_ratio", "solver", "max Picard ratio after the first iteration", 0.6, worst,
                          worst <= 0.6});
      break;
    }
    case Route::project: {
      auto pipe = run_projection(p, s.ens, picard_options(c));
      s.sol = pipe.gamma;
      s.converged = pipe.scalar.converged;
      s.warnings = pipe.scalar.warnings;
      for (const auto& w : pipe.coeffs.warnings) s.warnings.push_back(w);
      for (const auto& w : pipe.gamma_info.warnings) s.warnings.push_back(w);
      for (const auto& w : pipe.measure_info.warnings) s.warnings.push_back(w);
      for (const auto& r : pipe.scalar.reports) s.reports.push_back(report_json(r));
      s.route_json = to_json(pipe);
      s.checks.push_back({"route_equivalence", "consistency", "RMS |Y_gamma - Y_measure| / 3 combined SE", 1.0,
                          pipe.routes.max_ratio, pipe.routes.pass});
      s.checks.push_back({"projection_consistency", "consistency", "RMS |a^T Y - U| / 3 combined SE", 1.0,
                          pipe.consistency.y.max_ratio, pipe.consistency.pass});
      s.checks.push_back(weight_check("measure_weight", pipe.measure_info.weight_mean, c.se_mult));
      break;
    }
    case Route::markovian: {
      const auto& ms = *p.as<MarkovianStructure>();
      FbsdeOptions fo;
      fo.basis = c.basis;
      fo.tol = c.outer_tol;
      fo.max_outer = c.max_outer;
      auto r = solve_fbsde_decoupling(p, s.ens, fo);
      TranslationInfo ti;
      s.sol = fbsde_to_bsde(p, r.decoupling, s.ens, &ti);
      s.converged = r.converged;
      s.warnings = r.warnings;
      for (const auto& w : ti.warnings) s.warnings.push_back(w);
      for (std::size_t i = 0; i < r.decoupling.deltas.size(); ++i)
        s.reports.push_back({{"outer", i + 1}, {"delta", r.decoupling.deltas[i]}});
      s.route_json = {{"outer_iterations", r.outer_iterations},
                      {"converged", r.converged},
                      {"deltas", r.decoupling.deltas},
                      {"max_q_sq", r.max_q_sq},
                      {"outside_fraction", ti.outside_fraction},
                      {"gradient_gap", gradient_gap(r.decoupling, r.forward)}};
      if (ms.growth_constant) {
        auto qb = fbsde_q_bound(*ms.growth_constant, T);
        s.route_json["q_bound"] = qb.bound;
        s.route_json["q_bound_a"] = qb.a;
        const double root = std::sqrt(qb.bound);
        s.phi = [root](double) { return root; };
        const double allowed = qb.bound * (1 + c.bound_slack);
        s.checks.push_back({"fbsde_q_bound", "bound", "max |Q_t|^2 <= C^2 e^{aT}(1+T)(1+slack)", allowed, r.max_q_sq,
                            r.max_q_sq <= allowed});
      }
      auto w = forward_measure(p, s.ens, r);
      s.checks.push_back(weight_check("forward_measure_weight", sample_mean(w.terminal()), c.se_mult));
      s.fbsde = std::move(r);
      break;
    }
    case Route::automatic: break;
  }
  s.y0 = s.sol.y(0).row(0).transpose();
  s.y0_se = representation_se(p, s.sol, s.ens);
  return s;
}

std::string knots_csv(const Solved& s) {
  const SolutionField& f = s.sol;
  const std::size_t N = f.grid.steps();
  std::ostringstream os;
  os << "t,mean_Y,max_abs_Y,bound_phi,mean_abs_Z";
  for (Index j = 1; j < f.d; ++j) os << ",mean_Y" << j;
  os << '\n';
  for (std::size_t k = 0; k <= N; ++k) {
    const double t = f.grid.time(k);
    Vector mean = f.y(k).colwise().mean().transpose();
    os << fmt(t) << ',' << fmt(mean[0]) << ',' << fmt(f.y(k).rowwise().norm().maxCoeff()) << ','
       << (s.phi ? fmt(s.phi(t)) : "") << ',' << (k < N ? fmt(f.z(k).rowwise().norm().mean()) : "");
    for (Index j = 1; j < f.d; ++j) os << ',' << fmt(mean[j]);
    os << '\n';
  }
  return os.str();
}

struct OracleOutcome {
  json j;
  std::vector<Check> checks;
};

OracleOutcome compare_oracle(const RunConfig& c, const Solved& s, const OracleValue& o, const std::string& label) {
  OracleOutcome out;
  std::vector<double> threshold, error;
  bool pass = true;
  for (Index i = 0; i < s.y0.size(); ++i) {
    const double tol = c.oracle_tolerance ? *c.oracle_tolerance
                                          : c.se_mult * std::hypot(s.y0_se[i], o.se[i]) + s.scen.abs_tol;
    const double err = std::abs(s.y0[i] - o.value[i]);
    threshold.push_back(tol);
    error.push_back(err);
    pass = pass && err <= tol;
    std::string cond = c.oracle_tolerance ? "|Y_0 - oracle| <= configured tolerance"
                                          : "|Y_0 - oracle| <= " + fmt(c.se_mult) + " combined SE + " + fmt(s.scen.abs_tol);
    out.checks.push_back({label + "[" + std::to_string(i) + "]", "oracle", cond, tol, err, err <= tol});
  }
  out.j = {{"method", o.method},     {"value", to_vec(o.value)}, {"se", to_vec(o.se)},
           {"threshold", threshold}, {"abs_error", error},       {"pass", pass}};
  return out;
}

// Y_0 by nested simulation of xi + sum f dt along the fitted solution.
OracleValue nested_y0(const RunConfig& c, const Solved& s, BackendAgreement* out = nullptr) {
  NestedOptions no;
  const double steps = static_cast<double>(s.ens.steps());
  no.branching = static_cast<std::size_t>(
      std::min(static_cast<double>(c.branching) * static_cast<double>(c.nested_paths), c.budget / steps));
  no.budget = c.budget;
  no.seed = derive_seed({c.seed, 0x4e455354ULL});
  no.max_paths = 1;
  auto b = backend_agreement(s.scen.problem, s.sol, s.ens, 0, no, c.basis, c.se_mult);
  if (out) *out = b;
  return {b.nested_mean, b.nested_se, "nested (" + std::to_string(no.branching) + " branches)"};
}

// the run's settings without the output location, so reruns elsewhere stay byte-identical
json settings(const RunConfig& c) {
  json j = to_json(c);
  j.erase("output");
  return j;
}

json summary_json(const RunConfig& c, const Solved& s) {
  json y0 = json::array();
  for (Index i = 0; i < s.y0.size(); ++i) y0.push_back({{"coordinate", i}, {"value", s.y0[i]}, {"se", s.y0_se[i]}});
  const BsdeProblem& p = s.scen.problem;
  return {{"scenario", p.name},
          {"structure", structure_name(p.structure)},
          {"route", to_string(s.route)},
          {"d", p.d},
          {"n", p.n},
          {"T", p.horizon},
          {"N", s.ens.steps()},
          {"M", s.ens.paths()},
          {"seed", c.seed},
          {"converged", s.converged},
          {"y0", y0},
          {"warnings", s.warnings},
          {"config", settings(c)}};
}

void fail(RunArtifacts& a, int code, const std::string& what, const RunConfig& c) {
  a.exit_code = code;
  a.message = (code == exit_config ? "config error: " : "solver failure: ") + what;
  a.summary = {{"scenario", c.scenario}, {"exit_code", code}, {"message", a.message}, {"config", settings(c)}};
  a.diagnostics = json::object();
  a.knots_csv.clear();
  a.reports_jsonl.clear();
}

int gate(const Solved& s, const std::vector<Check>& checks, bool all_kinds, std::string& message) {
  if (!s.converged) {
    message = "solver did not converge";
    for (const auto& w : s.warnings) message += "; " + w;
    return exit_divergence;
  }
  std::string failed;
  for (const auto& ch : checks)
    if (!ch.pass && (all_kinds || ch.kind == "bound"))
      failed += (failed.empty() ? "" : ", ") + ch.name + " (observed " + fmt(ch.observed) + " vs threshold "
                + fmt(ch.threshold) + ")";
  if (!failed.empty()) {
    message = "failed checks: " + failed;
    return exit_bound;
  }
  message = "ok";
  return exit_ok;
}

template <class Body>
RunArtifacts guarded(const RunConfig& c, Body body) {
  RunArtifacts a;
  try {
    body(a);
  } catch (const ConfigError& e) {
    fail(a, exit_config, e.what(), c);
  } catch (const SolverError& e) {
    fail(a, exit_divergence, e.what(), c);
  } catch (const std::invalid_argument& e) {
    fail(a, exit_config, e.what(), c);
  } catch (const std::exception& e) {
    fail(a, exit_divergence, e.what(), c);
  }
  return a;
}

void fill(RunArtifacts& a, const RunConfig& c, const Solved& s, bool all_kinds) {
  const BsdeProblem& p = s.scen.problem;
  a.summary = summary_json(c, s);
  if (s.scen.oracle) {
    auto o = compare_oracle(c, s, s.scen.oracle(s.ens), "oracle_y0");
    a.summary["oracle"] = o.j;
    if (all_kinds) a.checks.insert(a.checks.end(), o.checks.begin(), o.checks.end());
  }
  json d = to_json(diagnose(p, s.sol, s.ens));
  d["route"] = s.route_json;
  json rows = json::array();
  for (const auto& ch : a.checks) rows.push_back(to_json(ch));
  d["checks"] = rows;
  a.diagnostics = d;
  a.knots_csv = knots_csv(s);
  std::ostringstream os;
  for (const auto& r : s.reports) os << r.dump() << '\n';
  a.reports_jsonl = os.str();
  a.exit_code = gate(s, a.checks, all_kinds, a.message);
  a.summary["exit_code"] = a.exit_code;
  a.summary["message"] = a.message;
}

}  // namespace

json to_json(const Check& c) {
  return {{"name", c.name},         {"kind", c.kind},         {"condition", c.condition},
          {"threshold", c.threshold}, {"observed", c.observed}, {"pass", c.pass}};
}

RunArtifacts run(const RunConfig& c) {
  return guarded(c, [&](RunArtifacts& a) {
    Solved s = solve(c);
    a.checks = s.checks;
    if (c.estimator == EstimatorKind::nested) {
      NestedOptions no;
      no.branching = c.branching;
      no.budget = c.budget;
      no.seed = derive_seed({c.seed, 0x4147524545ULL});
      no.max_paths = c.nested_paths;
      auto b = backend_agreement(s.scen.problem, s.sol, s.ens, s.ens.steps() / 2, no, c.basis, c.se_mult);
      a.checks.push_back({"backend_agreement", "consistency", "RMS |Y_regression - Y_nested| / combined SE",
                          b.tolerance.maxCoeff(), b.rms_diff.maxCoeff(), b.pass});
    }
    fill(a, c, s, false);
  });
}

RunArtifacts verify(const RunConfig& c) {
  return guarded(c, [&](RunArtifacts& a) {
    Solved s = solve(c);
    const BsdeProblem& p = s.scen.problem;
    auto val = validate_problem(p, 2000, derive_seed({c.seed, 0x56414cULL}));
    for (const auto& ch : val.checks)
      a.checks.push_back({"structure:" + ch.name, "structure", "sampled violations", 0.0,
                          static_cast<double>(ch.violations + ch.nonfinite), ch.passes()});
    a.checks.push_back({"solver_converged", "solver", "converged within the iteration cap", 1.0,
                        s.converged ? 1.0 : 0.0, s.converged});
    a.checks.insert(a.checks.end(), s.checks.begin(), s.checks.end());

    auto res = residual_check(p, s.sol, s.ens, 4.0);
    a.checks.push_back({"residual_centered", "consistency", "knots with |mean r| > 4 SE", 0.0,
                        static_cast<double>(res.flagged.size()), res.centered});

    if (s.fbsde) {
      LipschitzOptions lo;
      lo.seed = derive_seed({c.seed, 0x4c4950ULL});
      auto lip = lipschitz_certificate(p, lo);
      if (lip.declared)
        a.checks.push_back({"lipschitz_certificate", "structure", "max(difference quotient, |F|+|G|+|h| at 0)",
                            *lip.declared, std::max(lip.max_constant, lip.at_zero), lip.pass});
      if (p.n <= 2) {
        PdeGrid pg;
        pg.dx = p.n == 1 ? 0.02 : 0.1;
        auto pc = pde_crosscheck(p, s.fbsde->decoupling, s.fbsde->forward, pg);
        a.checks.push_back({"pde_crosscheck", "consistency", "max |q_k - u| / (FD truncation + SE)", pc.factor,
                            pc.max_ratio, pc.pass});
      }
    }

    NestedOptions no;
    no.branching = c.branching;
    no.budget = c.budget;
    no.seed = derive_seed({c.seed, 0x4147524545ULL});
    no.max_paths = c.nested_paths;
    auto b = backend_agreement(p, s.sol, s.ens, s.ens.steps() / 2, no, c.basis, c.se_mult);
    a.checks.push_back({"backend_agreement", "consistency", "RMS |Y_regression - Y_nested| at t = T/2",
                        b.tolerance.maxCoeff(), b.rms_diff.maxCoeff(), b.pass});

    if (!s.scen.oracle) {
      auto o = compare_oracle(c, s, nested_y0(c, s), "nested_y0");
      a.checks.insert(a.checks.end(), o.checks.begin(), o.checks.end());
    }
    fill(a, c, s, true);
  });
}

void write_artifacts(const RunArtifacts& a, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto put = [&](const std::string& name, const std::string& body) {
    std::ofstream os(fs::path(dir) / name, std::ios::binary);
    if (!os) throw ConfigError("cannot write " + (fs::path(dir) / name).string());
    os << body;
  };
  put("summary.json", a.summary.dump(2) + "\n");
  put("diagnostics.json", a.diagnostics.dump(2) + "\n");
  put("knots.csv", a.knots_csv);
  put("reports.jsonl", a.reports_jsonl);
}

std::string verdict_table(const std::vector<Check>& checks) {
  std::size_t w = 5;
  for (const auto& c : checks) w = std::max(w, c.name.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(w)) << "check" << "  " << std::setw(12) << "kind" << std::right
     << std::setw(14) << "observed" << std::setw(14) << "threshold" << "  verdict\n";
  for (const auto& c : checks)
    os << std::left << std::setw(static_cast<int>(w)) << c.name << "  " << std::setw(12) << c.kind << std::right
       << std::setw(14) << brief(c.observed) << std::setw(14) << brief(c.threshold) << "  "
       << (c.pass ? "PASS" : "FAIL") << '\n';
  return os.str();
}

double log_log_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ConfigError("log_log_slope: need two or more points");
  Matrix A(x.size(), 2);
  Vector b(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0) || !(y[i] > 0)) throw ConfigError("log_log_slope: values must be positive");
    A(static_cast<Index>(i), 0) = 1.0;
    A(static_cast<Index>(i), 1) = std::log(x[i]);
    b[static_cast<Index>(i)] = std::log(y[i]);
  }
  return A.colPivHouseholderQr().solve(b)[1];
}

SweepResult sweep(const RunConfig& c, const std::string& parameter, const std::vector<std::size_t>& values) {
  if (parameter != "N" && parameter != "M") throw ConfigError("sweep parameter must be N or M");
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  SweepResult out;
  out.parameter = parameter;
  std::optional<PathEnsemble> fine;
  if (parameter == "N") {
    // common random numbers: every grid is a coarsening of the finest one
    std::size_t top = *std::max_element(values.begin(), values.end());
    for (auto v : values)
      if (v == 0 || top % v) throw ConfigError("sweep over N: every value must divide the largest");
    const ScenarioInfo& info = find_scenario(c.scenario);
    const double T = c.T.value_or(info.default_T);
    const Index n = info.make(T, c.params).problem.n;
    fine = sample_brownian(TimeGrid(T, top), c.M, n, c.seed);
  }
  std::ostringstream os;
  os << "value,coordinate,y0,se,oracle,abs_error,residual_mean_sq,exit_code\n";
  for (auto v : values) {
    RunConfig cv = c;
    if (parameter == "N") cv.N = v;
    else cv.M = static_cast<Index>(v);
    std::optional<PathEnsemble> ens;
    if (fine) ens = fine->coarsen(fine->steps() / v);
    int code = exit_ok;
    Solved s;
    try {
      s = solve(cv, ens ? &*ens : nullptr);
      code = s.converged ? exit_ok : exit_divergence;
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      out.exit_code = std::max(out.exit_code, static_cast<int>(exit_divergence));
      os << v << ",,,,,,," << exit_divergence << '\n';
      continue;
    }
    out.exit_code = std::max(out.exit_code, code);
    auto res = residual_check(s.scen.problem, s.sol, s.ens);
    std::optional<OracleValue> o;
    if (s.scen.oracle) o = s.scen.oracle(s.ens);
    double worst = 0.0;
    for (Index i = 0; i < s.y0.size(); ++i) {
      double err = o ? std::abs(s.y0[i] - o->value[i]) : NAN;
      if (o) worst = std::max(worst, err);
      os << v << ',' << i << ',' << fmt(s.y0[i]) << ',' << fmt(s.y0_se[i]) << ',' << (o ? fmt(o->value[i]) : "")
         << ',' << fmt(err) << ',' << fmt(res.avg_sq) << ',' << code << '\n';
    }
    out.values.push_back(static_cast<double>(v));
    out.residual_mean_sq.push_back(res.avg_sq);
    out.max_abs_error.push_back(o ? worst : NAN);
    out.max_se.push_back(s.y0_se.maxCoeff());
  }
  out.csv = os.str();
  if (parameter == "N" && out.values.size() >= 2) {
    std::vector<double> dt;
    for (double v : out.values) dt.push_back(1.0 / v);
    auto positive = [](const std::vector<double>& y) {
      return std::all_of(y.begin(), y.end(), [](double e) { return e > 0; });
    };
    out.residual_slope = positive(out.residual_mean_sq) ? log_log_slope(dt, out.residual_mean_sq) : NAN;
    out.error_slope = positive(out.max_abs_error) ? log_log_slope(dt, out.max_abs_error) : NAN;
  }
  return out;
}

json oracle_reference(const RunConfig& c) {
  Solved s = solve(c);
  BackendAgreement b;
  OracleValue nested = nested_y0(c, s, &b);
  json j = summary_json(c, s);
  j["nested"] = compare_oracle(c, s, nested, "nested_y0").j;
  if (s.scen.oracle) j["oracle"] = compare_oracle(c, s, s.scen.oracle(s.ens), "oracle_y0").j;
  return j;
}

}  // namespace mbsde

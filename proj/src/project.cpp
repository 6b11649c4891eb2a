#include "mbsde/project.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace mbsde {

namespace {

const ProjectableStructure& projectable(const BsdeProblem& p) {
  const auto* s = p.as<ProjectableStructure>();
  if (!s) throw ConfigError(p.name + ": projection route needs a projectable structure (a, P, Q, R)");
  if (s->a.size() != p.d) throw ConfigError(p.name + ": a has wrong length");
  return *s;
}

void check_shapes(const PathEnsemble& ens, const FrozenCoefficients& c, const Matrix& terminal) {
  const std::size_t N = ens.steps();
  const Index M = ens.paths();
  if (c.Q.knots() != N || c.Q.paths() != M || c.P.knots() != N || c.P.paths() != M
      || c.R.knots() != N || c.R.paths() != M || c.R.cols() != ens.dim())
    throw ConfigError("linear solve: coefficients do not match the ensemble");
  if (terminal.rows() != M || terminal.cols() != c.P.cols())
    throw ConfigError("linear solve: terminal payload has wrong shape");
}

// column j + d i of the result is Y_j R_i
Matrix outer_rows(const Eigen::Ref<const Matrix>& Y, const Eigen::Ref<const Matrix>& R) {
  const Index d = Y.cols(), n = R.cols();
  Matrix out(Y.rows(), d * n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) out.col(j + d * i) = Y.col(j).cwiseProduct(R.col(i));
  return out;
}

void record_growth(GrowthCheck& g, double lhs, double rhs) {
  ++g.samples;
  double excess = lhs - rhs;
  if (excess > 1e-12 * (1.0 + std::abs(rhs))) {
    ++g.violations;
    g.max_excess = std::max(g.max_excess, excess);
  }
}

}  // namespace

BsdeProblem projected_problem(const BsdeProblem& p) {
  const auto& s = projectable(p);
  BsdeProblem out;
  out.name = p.name + "/projected";
  out.d = 1;
  out.n = p.n;
  out.horizon = p.horizon;
  out.terminal_bound = s.a.norm() * p.terminal_bound;
  const Vector a = s.a;
  const Index d = p.d;
  auto terminal = p.terminal;
  out.terminal = [terminal, a, d](const PathView& path, Vector& o) {
    Vector xi(d);
    terminal(path, xi);
    o[0] = a.dot(xi);
  };
  out.driver = [s](double t, const PathView& path, const Vector& y, const Matrix& z, Vector& o) {
    o[0] = projected_scalar_driver(s, t, path, y[0], z.row(0));
  };
  return out;
}

ScalarSolution solve_scalar_quadratic(const BsdeProblem& p, const PathEnsemble& ens,
                                      const PicardOptions& opt) {
  BsdeProblem q = projected_problem(p);
  PicardOptions o = opt;
  o.adaptive = !opt.window_steps.has_value();
  ScalarSolution out;
  out.route = "picard";
  GlobalSolution g;
  try {
    g = solve_global(q, ens, o, &g);
  } catch (const SolverError& e) {
    out.warnings.push_back(e.what());
  }
  out.field = std::move(g.field);
  out.reports = std::move(g.reports);
  out.converged = g.converged;
  out.warnings.insert(out.warnings.end(), g.warnings.begin(), g.warnings.end());
  return out;
}

ScalarSolution solve_scalar_cole_hopf(const BsdeProblem& p, const PathEnsemble& ens, double gamma,
                                      const BasisSpec& spec) {
  if (!(gamma > 0)) throw ConfigError("cole-hopf: gamma must be positive");
  BsdeProblem q = projected_problem(p);
  const TimeGrid& g = ens.grid();
  const std::size_t N = g.steps();
  const Index M = ens.paths();
  ScalarSolution out;
  out.route = "cole-hopf";
  out.field = SolutionField(g, g.full(), M, 1, p.n);
  out.field.method = "cole-hopf/regression";
  Matrix xi = evaluate_terminal(q, ens);
  Matrix phi_T = (gamma * xi.array()).exp().matrix();
  out.field.y(N) = xi;
  ProjectorCache cache(ens, spec);
  Matrix next = phi_T;
  for (std::size_t k = N; k-- > 0;) {
    const auto& proj = cache.at(k);
    CondExpEstimate e = proj.project(phi_T);
    if (!(e.values.minCoeff() > 0.0)) {
      std::ostringstream msg;
      msg << "cole-hopf: fitted exponential moment not positive at knot " << k;
      throw SolverError(msg.str());
    }
    ZEstimate z = proj.extract_z(next);
    out.field.y(k) = e.values.array().log().matrix() / gamma;
    out.field.z(k) = (z.values.array().colwise() / (gamma * e.values.col(0).array())).matrix();
    out.field.y_se[k] = std::sqrt((e.path_se.col(0).array() / (gamma * e.values.col(0).array()))
                                      .square().mean());
    next = std::move(e.values);
    cache.release(k + 1);
  }
  out.converged = true;
  return out;
}

FrozenCoefficients freeze_coefficients(const BsdeProblem& p, const PathEnsemble& ens,
                                       const ScalarSolution& scalar) {
  const auto& s = projectable(p);
  const std::size_t N = ens.steps();
  const Index M = ens.paths(), d = p.d, n = p.n;
  if (!(scalar.field.window == ens.grid().full()) || scalar.field.paths() != M)
    throw ConfigError("freeze_coefficients: scalar solution must cover the full grid of the ensemble");
  FrozenCoefficients c{KnotArray(N, M, d), KnotArray(N, M, 1), KnotArray(N, M, n), {}, {}};
  GrowthCheck gp{"|P| <= C(1+|u|)"}, gq{"|Q| <= C"}, gr{"|R| <= C + rho(|u|)|v|"};
  Vector pv(d), rv(n);
  RowVector v(n);
  for (std::size_t k = 0; k < N; ++k) {
    const double t = ens.grid().time(k);
    auto U = scalar.U(k);
    auto V = scalar.V(k);
    for (Index m = 0; m < M; ++m) {
      const PathView path = ens.path(m, k);
      const double u = U(m, 0);
      v = V.row(m);
      s.P(t, path, u, v, pv);
      double qv = s.Q(t, path, u, v);
      s.R(t, path, u, v, rv);
      if (!pv.allFinite() || !std::isfinite(qv) || !rv.allFinite()) {
        std::ostringstream msg;
        msg << p.name << ": non-finite frozen coefficient at path " << m << ", knot " << k;
        throw SolverError(msg.str());
      }
      c.P.set_row(k, m, pv);
      c.Q(k, m, 0) = qv;
      c.R.set_row(k, m, rv);
      record_growth(gp, pv.norm(), s.C * (1 + std::abs(u)));
      record_growth(gq, std::abs(qv), s.C);
      record_growth(gr, rv.norm(), s.C + s.rho(std::abs(u)) * v.norm());
    }
  }
  c.growth = {gp, gq, gr};
  for (const auto& g : c.growth)
    if (g.violations) {
      std::ostringstream msg;
      msg << g.name << " violated at " << g.violations << " of " << g.samples
          << " points (max excess " << g.max_excess << ")";
      c.warnings.push_back(msg.str());
    }
  return c;
}

SolutionField solve_linear_via_gamma(const PathEnsemble& ens, const FrozenCoefficients& c,
                                     const Matrix& terminal, const BasisSpec& spec,
                                     LinearSolveInfo* info) {
  check_shapes(ens, c, terminal);
  const TimeGrid& g = ens.grid();
  const std::size_t N = g.steps();
  const double dt = g.dt();
  const Index M = ens.paths(), d = terminal.cols(), n = ens.dim();
  KnotArray lg = euler_log_gamma(ens, c.Q, c.R);
  const double lo = std::log(1e-300);
  double lg_min = 0.0, lg_max = 0.0;
  for (double v : lg.raw()) {
    lg_min = std::min(lg_min, v);
    lg_max = std::max(lg_max, v);
  }
  if (info) {
    info->min_log_gamma = lg_min;
    info->max_log_gamma = lg_max;
  }
  if (lg_min < lo || lg_max > -lo)
    throw SolverError("gamma route: Gamma left [1e-300, 1e300]; the frozen coefficients blow up");

  SolutionField out(g, g.full(), M, d, n);
  out.method = "gamma/regression";
  out.y(N) = terminal;
  ProjectorCache cache(ens, spec);
  Matrix S = terminal;
  for (std::size_t k = N; k-- > 0;) {
    Vector ratio = (lg.at(k + 1).col(0) - lg.at(k).col(0)).array().exp().matrix();
    S = ratio.asDiagonal() * S;
    S += dt * c.P.at(k);
    const auto& proj = cache.at(k);
    CondExpEstimate e = proj.project(S);
    out.y(k) = e.values;
    out.y_se[k] = e.se.maxCoeff();
    // d(Gamma Y) has integrand Gamma (Y R^T + Z)
    Matrix next = ratio.asDiagonal() * out.y(k + 1);
    ZEstimate z = proj.extract_z(next);
    out.z(k) = z.values - outer_rows(e.values, c.R.at(k));
    cache.release(k + 1);
  }
  return out;
}

SolutionField solve_linear_via_measure(const PathEnsemble& ens, const FrozenCoefficients& c,
                                       const Matrix& terminal, const BasisSpec& spec,
                                       LinearSolveInfo* info) {
  check_shapes(ens, c, terminal);
  const TimeGrid& g = ens.grid();
  const std::size_t N = g.steps();
  const double dt = g.dt();
  const Index M = ens.paths(), d = terminal.cols(), n = ens.dim();
  MeasureWeight w = stochastic_exponential(ens, c.R);
  PathEnsemble shifted = girsanov_shift(ens, w);
  LinearSolveInfo local;
  LinearSolveInfo& inf = info ? *info : local;
  inf.weight_mean = sample_mean(w.terminal());
  inf.min_ess = static_cast<double>(M);

  SolutionField out(g, g.full(), M, d, n);
  out.method = "measure/regression";
  out.y(N) = terminal;
  Matrix S = terminal;
  for (std::size_t k = N; k-- > 0;) {
    Vector disc = (dt * c.Q.at(k).col(0).array()).exp().matrix();
    S = disc.asDiagonal() * S;
    S += dt * c.P.at(k);
    Matrix state = brownian_state(ens, k);
    CondExpEstimate e = weighted_condexp(S, k, w, spec, state);
    for (auto& msg : e.warnings)
      if (msg.find("effective sample size") != std::string::npos)
        inf.warnings.push_back("knot " + std::to_string(k) + ": " + msg);
    Vector ratio = (w.log_weight.at(N).col(0) - w.log_weight.at(k).col(0)).array().exp().matrix();
    inf.min_ess = std::min(inf.min_ess, effective_sample_size(ratio));
    out.y(k) = e.values;
    out.y_se[k] = e.se.maxCoeff();

    // one-step density for the Z regression against dW - R dt
    Vector step = (w.log_weight.at(k + 1).col(0) - w.log_weight.at(k).col(0)).array().exp().matrix();
    KnotProjector proj(spec, std::move(state), Matrix(shifted.increments().at(k)), dt, step);
    out.z(k) = proj.extract_z(out.y(k + 1)).values;
  }
  return out;
}

FieldComparison compare_fields(const SolutionField& a, const SolutionField& b, double se_mult) {
  if (!(a.window == b.window) || a.paths() != b.paths() || a.d != b.d)
    throw ConfigError("compare_fields: fields differ in window, paths or dimension");
  FieldComparison c;
  const double denom = static_cast<double>(a.paths() * a.d);
  for (std::size_t k = a.window.first; k <= a.window.last; ++k) {
    Matrix diff = a.y(k) - b.y(k);
    const std::size_t i = k - a.window.first;
    double rms = std::sqrt(diff.squaredNorm() / denom);
    double tol = se_mult * std::hypot(a.y_se[i], b.y_se[i]);
    c.t.push_back(a.grid.time(k));
    c.rms_diff.push_back(rms);
    c.tolerance.push_back(tol);
    c.max_abs = std::max(c.max_abs, diff.cwiseAbs().maxCoeff());
    if (tol > 0) c.max_ratio = std::max(c.max_ratio, rms / tol);
    if (rms > tol + 1e-12) c.pass = false;
  }
  return c;
}

ConsistencyReport projection_consistency(const SolutionField& sol, const ScalarSolution& scalar,
                                         const Vector& a, double se_mult) {
  const SolutionField& U = scalar.field;
  if (a.size() != sol.d) throw ConfigError("projection_consistency: a has wrong length");
  if (!(sol.window == U.window) || sol.paths() != U.paths() || sol.n != U.n)
    throw ConfigError("projection_consistency: fields differ in window, paths or n");
  SolutionField aY(sol.grid, sol.window, sol.paths(), 1, sol.n);
  for (std::size_t k = sol.window.first; k <= sol.window.last; ++k) {
    aY.y(k) = sol.y(k) * a;
    aY.y_se[k - sol.window.first] = a.lpNorm<1>() * sol.y_se[k - sol.window.first];
  }
  ConsistencyReport r;
  r.y = compare_fields(aY, U, se_mult);
  r.max_abs_y = r.y.max_abs;
  const Index d = sol.d, n = sol.n, M = sol.paths();
  const double dt = sol.grid.dt();
  for (std::size_t k = sol.window.first; k < sol.window.last; ++k) {
    auto Z = sol.z(k);
    auto V = U.z(k);
    for (Index i = 0; i < n; ++i) {
      Vector aZ = Z.middleCols(d * i, d) * a;
      r.z_gap += (aZ - V.col(i)).squaredNorm() * dt;
      r.z_scale += V.col(i).squaredNorm() * dt;
    }
  }
  r.z_gap /= static_cast<double>(M);
  r.z_scale /= static_cast<double>(M);
  r.pass = r.y.pass;
  return r;
}

ProjectionPipeline run_projection(const BsdeProblem& p, const PathEnsemble& ens, const PicardOptions& opt) {
  const auto& s = projectable(p);
  ProjectionPipeline r;
  r.scalar = solve_scalar_quadratic(p, ens, opt);
  if (!r.scalar.converged) {
    std::string msg = p.name + ": scalar stage did not converge";
    if (!r.scalar.warnings.empty()) msg += " (" + r.scalar.warnings.front() + ")";
    throw SolverError(msg);
  }
  r.coeffs = freeze_coefficients(p, ens, r.scalar);
  Matrix xi = evaluate_terminal(p, ens);
  r.gamma = solve_linear_via_gamma(ens, r.coeffs, xi, opt.basis, &r.gamma_info);
  r.measure = solve_linear_via_measure(ens, r.coeffs, xi, opt.basis, &r.measure_info);
  r.routes = compare_fields(r.gamma, r.measure);
  r.consistency = projection_consistency(r.gamma, r.scalar, s.a);
  return r;
}

nlohmann::json to_json(const FieldComparison& c) {
  return {{"t", c.t},           {"rms_diff", c.rms_diff}, {"tolerance", c.tolerance},
          {"max_abs", c.max_abs}, {"max_ratio", c.max_ratio}, {"pass", c.pass}};
}

nlohmann::json to_json(const ProjectionPipeline& r) {
  using nlohmann::json;
  auto y0 = [](const SolutionField& f) {
    Vector m = f.y(f.window.first).colwise().mean().transpose();
    return std::vector<double>(m.data(), m.data() + m.size());
  };
  std::size_t iterations = 0;
  for (const auto& rep : r.scalar.reports) iterations += rep.iterations;
  json j;
  j["scalar"] = {{"route", r.scalar.route},
                 {"converged", r.scalar.converged},
                 {"U0", y0(r.scalar.field)},
                 {"windows", r.scalar.reports.size()},
                 {"iterations", iterations},
                 {"warnings", r.scalar.warnings}};
  json growth = json::array();
  for (const auto& g : r.coeffs.growth)
    growth.push_back({{"name", g.name}, {"samples", g.samples}, {"violations", g.violations},
                      {"max_excess", g.max_excess}});
  j["freeze"] = {{"growth", growth}, {"warnings", r.coeffs.warnings}};
  j["gamma"] = {{"Y0", y0(r.gamma)},
                {"min_log_gamma", r.gamma_info.min_log_gamma},
                {"max_log_gamma", r.gamma_info.max_log_gamma}};
  j["measure"] = {{"Y0", y0(r.measure)},
                  {"min_ess", r.measure_info.min_ess},
                  {"weight_mean", r.measure_info.weight_mean.mean},
                  {"weight_se", r.measure_info.weight_mean.se},
                  {"warnings", r.measure_info.warnings}};
  j["routes"] = to_json(r.routes);
  j["consistency"] = {{"y", to_json(r.consistency.y)},
                      {"max_abs_y", r.consistency.max_abs_y},
                      {"z_gap", r.consistency.z_gap},
                      {"z_scale", r.consistency.z_scale},
                      {"pass", r.consistency.pass}};
  j["pass"] = r.pass();
  return j;
}

}  // namespace mbsde

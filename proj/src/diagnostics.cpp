#include "mbsde/diagnostics.hpp"

#include "mbsde/picard.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace mbsde {

BasisSpec bmo_basis() {
  BasisSpec b;
  b.family = BasisFamily::piecewise_constant;
  b.cells = 8;
  return b;
}

double estimate_bmo(const SolutionField& sol, const PathEnsemble& ens, const BasisSpec& spec) {
  ProjectorCache cache(ens, spec);
  return window_bmo(cache, sol.Z, sol.window, ens.grid().dt());
}

double estimate_bmo_nested(const SolutionField& sol, const PathEnsemble& ens, const NestedOptions& opt) {
  if (!sol.has_models()) throw ConfigError("estimate_bmo_nested: field carries no fitted Z functions");
  const double dt = ens.grid().dt();
  const Window w = sol.window;
  double best = 0.0;
  for (std::size_t k = w.first; k < w.last; ++k) {
    auto e = condexp_nested(ens, k, 1, [&](const PathView& path, Vector& out) {
      double s = 0.0;
      for (std::size_t j = k; j < w.last; ++j)
        s += sol.model(j)->z(path.at(j), sol.d, sol.n).squaredNorm() * dt;
      out[0] = s;
    }, opt);
    best = std::max(best, e.values.maxCoeff());
  }
  return std::sqrt(std::max(best, 0.0));
}

double sup_norm_y(const SolutionField& sol) {
  double s = 0.0;
  for (double v : sol.Y.raw()) s = std::max(s, std::abs(v));
  return s;
}

double h2_norm_z(const SolutionField& sol) {
  const double dt = sol.grid.dt();
  double total = 0.0;
  for (std::size_t k = sol.window.first; k < sol.window.last; ++k) total += sol.z(k).squaredNorm() * dt;
  return std::sqrt(total / std::max<Index>(sol.paths(), 1));
}

ResidualReport residual_check(const BsdeProblem& p, const SolutionField& sol, const PathEnsemble& ens,
                              double z_threshold) {
  const Window w = sol.window;
  const Index d = sol.d, n = sol.n;
  const double dt = ens.grid().dt();
  const std::size_t K = w.steps();
  ResidualReport rep;
  rep.mean.resize(K, d);
  rep.se.resize(K, d);
  rep.mean_sq.resize(K);
  rep.max_abs.resize(K);
  for (std::size_t k = w.first; k < w.last; ++k) {
    const std::size_t i = k - w.first;
    rep.t.push_back(ens.grid().time(k));
    auto y = sol.y(k);
    auto z = sol.z(k);
    Matrix f = evaluate_driver(p, ens, k, y, z);
    Matrix r = y - sol.y(k + 1) - f * dt;
    Matrix zdw = Matrix::Zero(r.rows(), d);
    auto dw = ens.increments().at(k);
    for (Index a = 0; a < n; ++a)
      for (Index j = 0; j < d; ++j) zdw.col(j) += z.col(j + d * a).cwiseProduct(dw.col(a));
    r += zdw;
    // the mean residual inherits the sampling error of mean(Z dW), which the
    // pathwise spread of r does not show
    for (Index j = 0; j < d; ++j) {
      auto est = sample_mean(r.col(j));
      double se_mart = sample_mean(zdw.col(j)).se;
      rep.mean(i, j) = est.mean;
      rep.se(i, j) = std::sqrt(est.se * est.se + se_mart * se_mart);
    }
    rep.mean_sq[i] = r.rowwise().squaredNorm().mean();
    rep.max_abs[i] = r.cwiseAbs().maxCoeff();
    bool bad = false;
    for (Index j = 0; j < d; ++j)
      if (std::abs(rep.mean(i, j)) > z_threshold * rep.se(i, j) + 1e-12) bad = true;
    if (bad) rep.flagged.push_back(k);
  }
  rep.total_sq = rep.mean_sq.sum();
  rep.avg_sq = K ? rep.total_sq / K : 0.0;
  rep.centered = rep.flagged.empty();
  return rep;
}

BoundVerdict check_y_bound(const SolutionField& sol, double C, double T, double rel_slack, double se_mult) {
  BoundVerdict v;
  std::ostringstream src;
  src << "(C+1) exp((C+1)^2 (T-t)/2) with C=" << C << ", T=" << T << "; slack " << rel_slack * 100
      << "% + " << se_mult << " SE";
  v.name = "y_apriori_bound";
  v.source = src.str();
  v.slack = std::numeric_limits<double>::infinity();
  for (std::size_t k = sol.window.first; k <= sol.window.last; ++k) {
    const double t = sol.grid.time(k);
    const double b = apriori_y_bound(C, T, t);
    const double obs = sol.y(k).cwiseAbs().maxCoeff();
    const double allowed = b * (1 + rel_slack) + se_mult * sol.y_se[k - sol.window.first];
    v.t.push_back(t);
    v.curve.push_back(b);
    v.observed.push_back(obs);
    if (k == sol.window.first) v.bound = b;
    if (obs > v.max_observed) v.max_observed = obs;
    if (allowed - obs < v.slack) {
      v.slack = allowed - obs;
      v.worst_knot = k;
    }
  }
  v.pass = v.slack >= 0;
  return v;
}

DriftCheck build_b4_drift(const SolutionField& sol, const RhoSpec& rho, const PathEnsemble& ens) {
  const std::size_t N = ens.steps();
  const Index M = ens.paths(), d = sol.d, n = sol.n;
  if (sol.paths() != M || ens.dim() != n || sol.window.last > N)
    throw ConfigError("build_b4_drift: field does not match the ensemble");
  DriftCheck out;
  out.H = KnotArray(N, M, n);
  Vector y(d);
  Matrix z(d, n);
  for (std::size_t k = sol.window.first; k < sol.window.last; ++k) {
    auto yk = sol.y(k);
    auto zk = sol.z(k);
    for (Index m = 0; m < M; ++m) {
      y = yk.row(m).transpose();
      for (Index c = 0; c < d * n; ++c) z.data()[c] = zk(m, c);
      RowVector yz = y.transpose() * z;
      const double nyz = yz.norm();
      const double scale = rho(y.norm()) * z.norm();
      if (nyz < 1e-14 || scale == 0.0) continue;
      RowVector h = scale * yz / nyz;
      for (Index a = 0; a < n; ++a) out.H(k, m, a) = h[a];
      out.max_ratio = std::max(out.max_ratio, h.norm() / scale);
    }
  }
  out.weight = stochastic_exponential(ens, out.H);
  out.terminal_mean = sample_mean(out.weight.terminal());
  return out;
}

bool DiagnosticsReport::all_pass() const {
  bool ok = std::all_of(verdicts.begin(), verdicts.end(), [](const auto& v) { return v.pass; });
  return ok && (!residual || residual->centered);
}

DiagnosticsReport diagnose(const BsdeProblem& p, const SolutionField& sol, const PathEnsemble& ens) {
  DiagnosticsReport r;
  r.paths = sol.paths();
  r.sup_y = sup_norm_y(sol);
  r.h2_z = h2_norm_z(sol);
  r.bmo_z = estimate_bmo(sol, ens);
  r.residual = residual_check(p, sol, ens);
  if (const auto* s = p.as<SubquadraticStructure>()) {
    r.verdicts.push_back(check_y_bound(sol, s->C, p.horizon));
    if (sol.window == ens.grid().full()) {
      auto drift = build_b4_drift(sol, s->rho, ens);
      r.drift_weight = drift.terminal_mean;
      BoundVerdict v;
      v.name = "b4_drift_martingale";
      v.source = "mean terminal weight of the stochastic exponential of the drift; within 3 SE of 1";
      v.bound = 1.0;
      v.max_observed = drift.terminal_mean.mean;
      v.slack = 3 * drift.terminal_mean.se - std::abs(drift.terminal_mean.mean - 1.0);
      v.pass = v.slack >= -1e-12;
      r.verdicts.push_back(v);
    }
  }
  return r;
}

nlohmann::json to_json(const BoundVerdict& v) {
  return {{"name", v.name},   {"source", v.source}, {"bound", v.bound},
          {"max_observed", v.max_observed}, {"slack", v.slack}, {"worst_knot", v.worst_knot},
          {"pass", v.pass}};
}

nlohmann::json to_json(const ResidualReport& r) {
  nlohmann::json knots = nlohmann::json::array();
  for (std::size_t i = 0; i < r.t.size(); ++i) {
    std::vector<double> mean(r.mean.cols()), se(r.se.cols());
    for (Index j = 0; j < r.mean.cols(); ++j) mean[j] = r.mean(i, j), se[j] = r.se(i, j);
    knots.push_back({{"t", r.t[i]}, {"mean", mean}, {"se", se}, {"mean_sq", r.mean_sq[i]},
                     {"max_abs", r.max_abs[i]}});
  }
  return {{"knots", knots}, {"avg_sq", r.avg_sq}, {"total_sq", r.total_sq},
          {"flagged", r.flagged}, {"centered", r.centered}};
}

nlohmann::json to_json(const DiagnosticsReport& r) {
  nlohmann::json j;
  j["paths"] = r.paths;
  j["sup_y"] = r.sup_y;
  j["h2_z"] = r.h2_z;
  j["bmo_z"] = r.bmo_z;
  j["bmo_caveat"] = r.bmo_caveat;
  j["verdicts"] = nlohmann::json::array();
  for (const auto& v : r.verdicts) j["verdicts"].push_back(to_json(v));
  if (r.residual) j["residual"] = to_json(*r.residual);
  if (r.drift_weight) j["drift_weight"] = {{"mean", r.drift_weight->mean}, {"se", r.drift_weight->se}};
  j["notes"] = r.notes;
  j["pass"] = r.all_pass();
  return j;
}

std::string bound_curve_csv(const BoundVerdict& v) {
  std::ostringstream s;
  s << std::setprecision(17) << "t,bound,max_observed\n";
  for (std::size_t i = 0; i < v.t.size(); ++i) s << v.t[i] << ',' << v.curve[i] << ',' << v.observed[i] << '\n';
  return s.str();
}

std::vector<KnotModel> refit_models(const SolutionField& sol, const PathEnsemble& ens, const BasisSpec& spec) {
  std::vector<KnotModel> out;
  for (std::size_t k = sol.window.first; k <= sol.window.last; ++k) {
    KnotProjector proj(spec, brownian_state(ens, k));
    KnotModel m;
    m.basis = proj.basis();
    m.y_coef = proj.project(Matrix(sol.y(k))).coefficients;
    if (k < sol.window.last) m.z_coef = proj.project_z(Matrix(sol.z(k))).coefficients;
    out.push_back(std::move(m));
  }
  return out;
}

BackendAgreement backend_agreement(const BsdeProblem& p, const SolutionField& sol, const PathEnsemble& ens,
                                   std::size_t knot, const NestedOptions& opt, const BasisSpec& spec,
                                   double se_mult) {
  const Window w = sol.window;
  const std::size_t N = ens.grid().steps();
  if (w.last != N || !w.contains(knot)) throw ConfigError("backend_agreement: knot must lie in a window ending at T");
  std::vector<KnotModel> refit;
  if (!sol.has_models()) refit = refit_models(sol, ens, spec);
  auto model = [&](std::size_t j) -> const KnotModel& {
    return refit.empty() ? *sol.model(j) : refit[j - w.first];
  };
  const Index d = sol.d, n = sol.n;
  const double dt = ens.grid().dt();
  Vector f(d), y(d);
  Matrix z(d, n);
  auto nested = condexp_nested(ens, knot, d, [&](const PathView& path, Vector& out) {
    p.terminal(path, out);
    for (std::size_t j = knot; j < N; ++j) {
      Vector x = path.at(j);
      y = model(j).y(x);
      z = model(j).z(x, d, n);
      f.setZero();
      p.driver(path.time(j), path.prefix(j), y, z, f);
      out += f * dt;
    }
  }, opt);

  BackendAgreement b;
  b.knot = knot;
  b.paths = nested.values.rows();
  b.branching = opt.branching;
  const Index K = b.paths;
  b.nested_mean = nested.values.colwise().mean().transpose();
  Matrix diff = sol.y(knot).topRows(K) - nested.values;
  b.rms_diff = (diff.colwise().squaredNorm().transpose() / static_cast<double>(K)).cwiseSqrt();
  b.nested_se = (nested.path_se.colwise().squaredNorm().transpose() / static_cast<double>(K)).cwiseSqrt();
  const Index slot = static_cast<Index>(knot - w.first);
  b.regression_se = sol.y_se.size() > slot ? sol.y_se[slot] : 0.0;
  b.tolerance = se_mult * (b.nested_se.array().square() + b.regression_se * b.regression_se).sqrt().matrix();
  b.pass = (b.rms_diff.array() <= b.tolerance.array()).all();
  return b;
}

nlohmann::json to_json(const BackendAgreement& b) {
  auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  return {{"knot", b.knot},
          {"paths", b.paths},
          {"branching", b.branching},
          {"nested_mean", vec(b.nested_mean)},
          {"rms_diff", vec(b.rms_diff)},
          {"nested_se", vec(b.nested_se)},
          {"regression_se", b.regression_se},
          {"tolerance", vec(b.tolerance)},
          {"pass", b.pass}};
}

}  // namespace mbsde

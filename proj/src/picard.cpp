#include "mbsde/picard.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace mbsde {

namespace {

bool feasible(double C, double R, double eps, double rhoR, double h, bool contraction) {
  auto s = horizon_slack(C, R, eps, rhoR, h);
  if (s.invariance < 0) return false;
  return !contraction || (s.lipschitz_y >= 0 && s.lipschitz_z >= 0);
}

double max_abs_diff(const KnotArray& a, const KnotArray& b) {
  double out = 0.0;
  const auto& x = a.raw();
  const auto& y = b.raw();
  for (std::size_t i = 0; i < x.size(); ++i) out = std::max(out, std::abs(x[i] - y[i]));
  return out;
}

KnotArray difference(const KnotArray& a, const KnotArray& b) {
  KnotArray out = a;
  auto& r = out.raw();
  const auto& y = b.raw();
  for (std::size_t i = 0; i < r.size(); ++i) r[i] -= y[i];
  return out;
}

std::string describe(const PicardReport& r) {
  std::ostringstream s;
  s << "window [" << r.window.first << ", " << r.window.last << "] did not converge after "
    << r.iterations << " iterations";
  if (!r.sup_deltas.empty())
    s << " (last delta " << std::max(r.sup_deltas.back(), r.bmo_deltas.back()) << ")";
  if (!r.message.empty()) s << ": " << r.message;
  return s.str();
}

}  // namespace

HorizonSlack horizon_slack(double C, double R, double eps, double rhoR, double h) {
  HorizonSlack s;
  s.invariance = C - (C * h * (1 + R) + C * rhoR * std::pow(h, eps / 2) * std::pow(R, 2 - eps));
  s.lipschitz_y = 0.125 - rhoR * h;
  s.lipschitz_z =
      0.125 - rhoR * std::sqrt(2 * (h + std::pow(h, eps) * std::pow(2 * R, 2 - 2 * eps)));
  return s;
}

double choose_h(double C, double R, double eps, double rhoR, const HorizonOptions& opt) {
  if (!(C > 0)) throw ConfigError("choose_h: C must be positive");
  if (R < 3 * C * (1 - 1e-12)) throw ConfigError("choose_h: R must be at least 3C");
  if (!(eps > 0 && eps < 1)) throw ConfigError("choose_h: eps must lie in (0, 1)");
  if (rhoR < 0) throw ConfigError("choose_h: rho(R) must be nonnegative");
  if (!(opt.horizon > 0)) throw ConfigError("choose_h: horizon must be positive");
  const double T = opt.horizon;
  if (feasible(C, R, eps, rhoR, T, opt.contraction)) return T;
  double lo = 0.0, hi = T;
  while (lo == 0.0 || hi - lo > opt.rel_precision * lo) {
    if (hi < 1e-12 * T) throw SolverError("horizon rule degenerate");
    double mid = 0.5 * (lo + hi);
    if (feasible(C, R, eps, rhoR, mid, opt.contraction))
      lo = mid;
    else
      hi = mid;
  }
  return lo;
}

BallParams global_ball(const SubquadraticStructure& s, double T, bool contraction) {
  BallParams b;
  b.C = (s.C + 1) * std::exp((s.C + 1) * (s.C + 1) * T / 2);
  b.R = 3 * b.C;
  b.eps = s.eps;
  b.rhoR = s.rho(b.R);
  HorizonOptions opt;
  opt.horizon = T;
  opt.contraction = contraction;
  b.h = choose_h(b.C, b.R, b.eps, b.rhoR, opt);
  return b;
}

double PicardReport::delta(std::size_t i) const {
  return std::max(sup_deltas.at(i), bmo_deltas.at(i));
}

double PicardReport::max_ratio() const {
  return ratios.empty() ? 0.0 : *std::max_element(ratios.begin(), ratios.end());
}

std::size_t window_steps_for(const TimeGrid& g, double h) {
  const std::size_t N = g.steps();
  std::size_t best = 1;
  for (std::size_t w = 1; w <= N; ++w)
    if (N % w == 0 && w * g.dt() <= h * (1 + 1e-12)) best = w;
  return best;
}

double window_bmo(ProjectorCache& cache, const KnotArray& Z, Window w, double dt) {
  const Index M = Z.paths();
  Matrix acc = Matrix::Zero(M, 1);
  double best = 0.0;
  for (std::size_t k = w.last; k-- > w.first;) {
    acc.col(0) += Z.at(k - w.first).rowwise().squaredNorm() * dt;
    auto e = cache.at(k).project(acc);
    best = std::max(best, e.values.maxCoeff());
  }
  return std::sqrt(std::max(best, 0.0));
}

SolutionField phi_step(const BsdeProblem& p, ProjectorCache& cache, Window w,
                       const SolutionField* candidate, const Matrix& terminal) {
  const auto& ens = cache.ensemble();
  const double dt = ens.grid().dt();
  if (terminal.rows() != ens.paths() || terminal.cols() != p.d)
    throw ConfigError("phi_step: terminal payload has the wrong shape");
  SolutionField out(ens.grid(), w, ens.paths(), p.d, p.n);
  out.method = "picard/regression";
  out.models.resize(w.steps() + 1);
  out.y(w.last) = terminal;
  Matrix S = terminal;
  for (std::size_t k = w.last; k-- > w.first;) {
    if (candidate) S += dt * evaluate_driver(p, ens, k, candidate->y(k), candidate->z(k));
    const auto& proj = cache.at(k);
    auto ye = proj.project(S);
    auto ze = proj.extract_z(Matrix(out.y(k + 1)));
    out.y(k) = ye.values;
    out.z(k) = ze.values;
    out.models[k - w.first] = KnotModel{proj.basis(), ye.coefficients, ze.coefficients};
    out.y_se[k - w.first] = ye.se.size() ? ye.se.maxCoeff() : 0.0;
  }
  return out;
}

std::pair<SolutionField, PicardReport> solve_short_horizon(const BsdeProblem& p, ProjectorCache& cache,
                                                           Window w, const Matrix& terminal,
                                                           const PicardOptions& opt,
                                                           const BallParams* ball) {
  const double dt = cache.ensemble().grid().dt();
  PicardReport rep;
  rep.window = w;
  if (ball) {
    rep.h = ball->h;
    rep.R = ball->R;
    if (w.steps() * dt > ball->h * (1 + 1e-9)) rep.message = "window longer than the horizon rule allows";
  }
  SolutionField cur = phi_step(p, cache, w, nullptr, terminal);
  SolutionField best = cur;
  double best_delta = std::numeric_limits<double>::infinity();
  for (std::size_t it = 1; it <= opt.max_iter; ++it) {
    SolutionField next;
    try {
      next = phi_step(p, cache, w, &cur, terminal);
    } catch (const SolverError& e) {
      rep.message = e.what();
      break;
    }
    double dy = max_abs_diff(next.Y, cur.Y);
    double dz = window_bmo(cache, difference(next.Z, cur.Z), w, dt);
    rep.sup_deltas.push_back(dy);
    rep.bmo_deltas.push_back(dz);
    double delta = std::max(dy, dz);
    if (it >= 2) {
      double prev = rep.delta(it - 2);
      rep.ratios.push_back(prev > 0 ? delta / prev : 0.0);
    }
    rep.iterations = it;
    cur = std::move(next);
    if (!std::isfinite(delta)) {
      rep.message = "non-finite iterate";
      break;
    }
    if (delta < best_delta) {
      best_delta = delta;
      best = cur;
    }
    if (delta <= opt.tol) {
      rep.converged = true;
      break;
    }
  }
  SolutionField& sol = rep.converged ? cur : best;
  double sup = 0.0;
  for (double v : sol.Y.raw()) sup = std::max(sup, std::abs(v));
  rep.sup_y = sup;
  rep.bmo_z = window_bmo(cache, sol.Z, w, dt);
  return {std::move(sol), std::move(rep)};
}

namespace {

struct WindowSolver {
  const BsdeProblem& p;
  ProjectorCache& cache;
  const PicardOptions& opt;
  const BallParams* ball;
  std::vector<SolutionField> parts;
  std::vector<PicardReport> reports;
  std::vector<std::string> warnings;

  bool acceptable(const PicardReport& r) const {
    return r.converged && (!opt.adaptive || r.max_ratio() <= opt.max_ratio);
  }

  // returns false when the window (or a piece of it) diverged
  bool solve(Window w, const Matrix& terminal, Matrix& left) {
    auto [field, rep] = solve_short_horizon(p, cache, w, terminal, opt, ball);
    if (opt.adaptive && !acceptable(rep) && w.steps() > 1) {
      std::ostringstream s;
      s << "window [" << w.first << ", " << w.last << "] halved (converged=" << rep.converged
        << ", max ratio " << rep.max_ratio() << ")";
      warnings.push_back(s.str());
      std::size_t mid = w.first + w.steps() / 2;
      Matrix inner;
      if (!solve({mid, w.last}, terminal, inner)) return false;
      return solve({w.first, mid}, inner, left);
    }
    left = field.y(w.first);
    bool ok = rep.converged;
    parts.push_back(std::move(field));
    reports.push_back(std::move(rep));
    return ok;
  }
};

}  // namespace

GlobalSolution solve_global(const BsdeProblem& p, const PathEnsemble& ens, const PicardOptions& opt,
                            GlobalSolution* partial) {
  if (ens.dim() != p.n) throw ConfigError("solve_global: ensemble dimension differs from problem n");
  if (std::abs(ens.grid().horizon() - p.horizon) > 1e-12 * p.horizon)
    throw ConfigError("solve_global: grid horizon differs from the problem horizon");
  const TimeGrid& g = ens.grid();
  const std::size_t N = g.steps();
  GlobalSolution out;
  const BallParams* ball = nullptr;
  std::size_t steps = N;
  const auto* sub = p.as<SubquadraticStructure>();
  if (sub) {
    out.ball = global_ball(*sub, p.horizon, opt.contraction_rule);
    ball = &out.ball;
  }
  if (opt.window_steps) {
    steps = *opt.window_steps;
    if (steps == 0 || N % steps != 0)
      throw ConfigError("solve_global: window length must divide the number of steps");
  } else if (sub) {
    steps = window_steps_for(g, out.ball.h);
    if (out.ball.h < g.dt())
      out.warnings.push_back("horizon rule gives h below the grid step; using one-step windows");
  } else if (!opt.adaptive) {
    throw ConfigError("picard route needs subquadratic constants (C, eps, rho) or an explicit window length");
  }
  if (N / steps > opt.max_windows) throw ConfigError("solve_global: window count exceeds the cap");
  out.window_steps = steps;

  ProjectorCache cache(ens, opt.basis);
  WindowSolver solver{p, cache, opt, ball, {}, {}, {}};
  Matrix terminal = evaluate_terminal(p, ens);
  bool ok = true;
  for (std::size_t last = N; last > 0 && ok; last -= steps) {
    Window w{last - steps, last};
    Matrix left;
    ok = solver.solve(w, terminal, left);
    terminal = std::move(left);
    for (std::size_t k = w.first + 1; k <= w.last; ++k) cache.release(k);
  }
  out.field = paste(solver.parts);
  out.reports = std::move(solver.reports);
  out.warnings.insert(out.warnings.end(), solver.warnings.begin(), solver.warnings.end());
  out.converged = ok;
  if (!ok) {
    std::string msg = p.name + ": " + describe(out.reports.back());
    if (partial) *partial = std::move(out);
    throw SolverError(msg);
  }
  return out;
}

}  // namespace mbsde

#include "mbsde/markovian.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

namespace mbsde {

namespace {

const MarkovianStructure& markovian(const BsdeProblem& p) {
  const auto* s = p.as<MarkovianStructure>();
  if (!s) throw ConfigError(p.name + ": markovian route needs a markovian structure (F, G, h)");
  return *s;
}

Matrix as_matrix(const Eigen::Ref<const Matrix>& row, Index d, Index n) {
  Matrix z(d, n);
  for (Index c = 0; c < d * n; ++c) z.data()[c] = row(0, c);
  return z;
}

Vector flatten(const Matrix& z) { return Eigen::Map<const Vector>(z.data(), z.size()); }

}  // namespace

std::string field_csv(const DecouplingField& f) {
  std::ostringstream os;
  os.precision(17);
  os << "knot,basis,coordinate,coefficient\n";
  for (std::size_t k = 0; k < f.models.size(); ++k) {
    const auto& m = f.models[k];
    for (Index b = 0; b < m.y_coef.rows(); ++b) {
      for (Index c = 0; c < m.y_coef.cols(); ++c)
        os << k << ',' << b << ',' << c << ',' << m.y_coef(b, c) << '\n';
      for (Index c = 0; c < m.z_coef.cols(); ++c)
        os << k << ',' << b << ',' << f.d + c << ',' << m.z_coef(b, c) << '\n';
    }
  }
  return os.str();
}

SolutionField backward_sweep(const BsdeProblem& p, const PathEnsemble& ens, const KnotArray& states,
                             const BasisSpec& spec, DecouplingField* fit) {
  const auto& s = markovian(p);
  const TimeGrid& g = ens.grid();
  const std::size_t N = g.steps();
  const Index M = ens.paths(), d = p.d, n = p.n;
  const double dt = g.dt();
  if (states.knots() != N + 1 || states.paths() != M || states.cols() != n)
    throw ConfigError("backward_sweep: forward states have wrong shape");

  SolutionField out(g, g.full(), M, d, n);
  out.method = "sweep/regression";
  out.models.resize(N + 1);
  Vector x(n), y(d), f(d);
  for (Index m = 0; m < M; ++m) {
    s.h(states.row(N, m), y);
    out.Y.set_row(N, m, y);
  }
  ProjectorCache cache(ens, spec, &states);
  {
    CondExpEstimate e = cache.at(N).project(out.y(N));
    out.models[N] = KnotModel{cache.at(N).basis(), e.coefficients, {}};
    out.y_se[N] = e.se.maxCoeff();
  }
  Matrix S = out.y(N);
  for (std::size_t k = N; k-- > 0;) {
    const auto& proj = cache.at(k);
    ZEstimate z = proj.extract_z(out.y(k + 1));
    out.z(k) = z.values;
    const double t = g.time(k);
    for (Index m = 0; m < M; ++m) {
      x = states.row(k, m);
      y = out.y(k + 1).row(m).transpose();
      s.F(t, x, y, as_matrix(z.values.row(m), d, n), f);
      if (!f.allFinite()) {
        std::ostringstream msg;
        msg << p.name << ": non-finite F at path " << m << ", knot " << k;
        throw SolverError(msg.str());
      }
      S.row(m) += dt * f.transpose();
    }
    CondExpEstimate e = proj.project(S);
    out.y(k) = e.values;
    out.y_se[k] = e.se.maxCoeff();
    out.models[k] = KnotModel{proj.basis(), e.coefficients, z.coefficients};
    cache.release(k + 1);
  }
  if (fit) {
    fit->grid = g;
    fit->d = d;
    fit->n = n;
    fit->models = out.models;
    fit->y_se = out.y_se;
    fit->lo.assign(N + 1, Vector());
    fit->hi.assign(N + 1, Vector());
    for (std::size_t k = 0; k <= N; ++k) {
      fit->lo[k] = states.at(k).colwise().minCoeff().transpose();
      fit->hi[k] = states.at(k).colwise().maxCoeff().transpose();
    }
  }
  return out;
}

FbsdeResult solve_fbsde_decoupling(const BsdeProblem& p, const PathEnsemble& ens, const FbsdeOptions& opt) {
  const auto& s = markovian(p);
  if (ens.dim() != p.n) throw ConfigError("fbsde: ensemble dimension differs from problem n");
  if (std::abs(ens.grid().horizon() - p.horizon) > 1e-12 * p.horizon)
    throw ConfigError("fbsde: grid horizon differs from the problem horizon");
  if (opt.max_outer == 0) throw ConfigError("fbsde: max_outer must be positive");
  const std::size_t N = ens.steps();
  const Index M = ens.paths(), d = p.d, n = p.n;
  const Vector x0 = opt.x0.size() ? opt.x0 : Vector::Zero(n);
  double q_cap = std::numeric_limits<double>::infinity();
  if (s.growth_constant) q_cap = 10.0 * std::sqrt(fbsde_q_bound(*s.growth_constant, p.horizon).bound);

  FbsdeResult r;
  bool have_field = false;
  for (std::size_t it = 1; it <= opt.max_outer; ++it) {
    const DecouplingField& cur = r.decoupling;
    Vector y0 = Vector::Zero(d);
    Matrix z0 = Matrix::Zero(d, n);
    ForwardDrift drift = [&](double t, Index, std::size_t k, const Vector& x, Vector& out) {
      if (have_field)
        s.G(t, x, cur.q(k, x), cur.r(k, x), out);
      else
        s.G(t, x, y0, z0, out);
    };
    KnotArray X = euler_forward(ens, drift, x0);
    DecouplingField next;
    SolutionField sol = backward_sweep(p, ens, X, opt.basis, &next);

    double delta = 0.0;
    for (std::size_t k = 0; k <= N; ++k)
      for (Index m = 0; m < M; ++m) {
        Vector x = X.row(k, m);
        Vector y = sol.Y.row(k, m);
        if (y.norm() > q_cap) {
          std::ostringstream msg;
          msg << p.name << ": |Q| = " << y.norm() << " at path " << m << ", knot " << k
              << " exceeds 10 x the a priori bound sqrt(C^2 e^{aT}(1+T)) = " << q_cap / 10;
          throw SolverError(msg.str());
        }
        // at knot N the field is the fit of h, compared fit against fit
        Vector yn = k == N ? next.q(N, x) : y;
        double dy = have_field ? (cur.q(k, x) - yn).cwiseAbs().maxCoeff() : yn.cwiseAbs().maxCoeff();
        delta = std::max(delta, dy);
        if (k < N) {
          Vector z = sol.Z.row(k, m);
          double dz = have_field ? (flatten(cur.r(k, x)) - z).cwiseAbs().maxCoeff() : z.cwiseAbs().maxCoeff();
          delta = std::max(delta, dz);
        }
      }
    next.deltas = cur.deltas;
    next.deltas.push_back(delta);
    r.decoupling = std::move(next);
    r.forward = std::move(X);
    r.field = std::move(sol);
    r.outer_iterations = it;
    have_field = true;
    if (delta <= opt.tol) {
      r.converged = true;
      break;
    }
  }
  if (!r.converged) {
    std::ostringstream msg;
    msg << "decoupling iteration did not reach tol " << opt.tol << " in " << opt.max_outer
        << " outer iterations (last delta " << r.decoupling.deltas.back() << ")";
    r.warnings.push_back(msg.str());
  }
  for (std::size_t k = 0; k <= N; ++k)
    r.max_q_sq = std::max(r.max_q_sq, r.field.y(k).rowwise().squaredNorm().maxCoeff());
  return r;
}

SolutionField fbsde_to_bsde(const BsdeProblem& p, const DecouplingField& field, const PathEnsemble& ens,
                            TranslationInfo* info) {
  const auto& s = markovian(p);
  const TimeGrid& g = ens.grid();
  const std::size_t N = g.steps();
  const Index M = ens.paths(), d = p.d, n = p.n;
  if (field.models.size() != N + 1 || !(field.grid == g))
    throw ConfigError("fbsde_to_bsde: field was fitted on a different grid");
  SolutionField out(g, g.full(), M, d, n);
  out.method = "fbsde/regression";
  out.models = field.models;
  if (field.y_se.size() == static_cast<Index>(N + 1)) out.y_se = field.y_se;
  std::size_t outside = 0;
  Vector y(d);
  for (Index m = 0; m < M; ++m) {
    for (std::size_t k = 0; k <= N; ++k) {
      Vector x = ens.brownian().row(k, m);
      if (!field.lo.empty() && k > 0
          && ((x - field.lo[k]).minCoeff() < 0 || (field.hi[k] - x).minCoeff() < 0))
        ++outside;
      if (k == N) {
        s.h(x, y);
        out.Y.set_row(N, m, y);
      } else {
        out.Y.set_row(k, m, field.q(k, x));
        out.Z.set_row(k, m, flatten(field.r(k, x)));
      }
    }
  }
  TranslationInfo local;
  TranslationInfo& inf = info ? *info : local;
  inf.outside_fraction = static_cast<double>(outside) / static_cast<double>(M * static_cast<Index>(N));
  if (outside) {
    std::ostringstream msg;
    msg << "extrapolation: " << 100.0 * inf.outside_fraction
        << "% of (path, knot) points lie outside the fitted state range";
    inf.warnings.push_back(msg.str());
  }
  return out;
}

std::pair<Vector, Vector> central_box(const Eigen::Ref<const Matrix>& X, double mass) {
  if (!(mass > 0 && mass <= 1)) throw ConfigError("central_box: mass must lie in (0, 1]");
  const Index M = X.rows(), n = X.cols();
  Vector lo(n), hi(n);
  for (Index i = 0; i < n; ++i) {
    std::vector<double> c(M);
    for (Index m = 0; m < M; ++m) c[m] = X(m, i);
    auto q = [&](double a) {
      auto it = c.begin() + static_cast<std::ptrdiff_t>(a * static_cast<double>(M - 1));
      std::nth_element(c.begin(), it, c.end());
      return *it;
    };
    lo[i] = q(0.5 * (1 - mass));
    hi[i] = q(0.5 * (1 + mass));
  }
  return {lo, hi};
}

double gradient_gap(const DecouplingField& field, const KnotArray& states, double step) {
  const std::size_t N = field.models.size() - 1;
  const Index d = field.d, n = field.n, M = states.paths();
  double worst = 0.0;
  for (std::size_t k = 1; k < N; ++k) {
    auto X = states.at(k);
    auto [lo, hi] = central_box(X);
    double num = 0.0, den = 0.0;
    for (Index m = 0; m < M; ++m) {
      Vector x = X.row(m).transpose();
      if ((x - lo).minCoeff() < 0 || (hi - x).minCoeff() < 0) continue;
      Matrix r = field.r(k, x);
      Matrix grad(d, n);
      for (Index i = 0; i < n; ++i) {
        Vector xp = x, xm = x;
        xp[i] += step;
        xm[i] -= step;
        grad.col(i) = (field.q(k, xp) - field.q(k, xm)) / (2 * step);
      }
      num += (r - grad).squaredNorm();
      den += r.squaredNorm();
    }
    if (den > 0) worst = std::max(worst, std::sqrt(num / den));
  }
  return worst;
}

MeasureWeight forward_measure(const BsdeProblem& p, const PathEnsemble& ens, const FbsdeResult& r) {
  const auto& s = markovian(p);
  const std::size_t N = ens.steps();
  const Index M = ens.paths(), n = p.n;
  KnotArray H(N, M, n);
  Vector g(n);
  for (std::size_t k = 0; k < N; ++k) {
    const double t = ens.grid().time(k);
    for (Index m = 0; m < M; ++m) {
      g.setZero();
      s.G(t, r.forward.row(k, m), r.field.Y.row(k, m), r.field.z_at(k, m), g);
      H.set_row(k, m, -g);
    }
  }
  return stochastic_exponential(ens, H);
}

LipschitzReport lipschitz_certificate(const BsdeProblem& p, const LipschitzOptions& opt) {
  const auto& s = markovian(p);
  if (opt.samples == 0) throw ConfigError("lipschitz_certificate: samples must be >= 1");
  const Index d = p.d, n = p.n;
  std::mt19937_64 rng(derive_seed({opt.seed, 0x6c6970}));
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  auto gauss = [&](Index rows, Index cols, double scale) {
    Matrix a(rows, cols);
    for (Index i = 0; i < a.size(); ++i) a.data()[i] = scale * nd(rng);
    return a;
  };
  auto offset = [&](Index rows, Index cols) {
    Matrix dir = gauss(rows, cols, 1.0);
    double norm = dir.norm();
    if (norm == 0) return dir;
    return Matrix(dir * (std::pow(10.0, -4.0 * ud(rng)) / norm));
  };
  LipschitzReport rep;
  rep.declared = s.lipschitz_constant;
  double lF = 0, lG = 0, lh = 0;
  Vector f1(d), f2(d), g1(n), g2(n), h1(d), h2(d);
  for (std::size_t i = 0; i < opt.samples; ++i) {
    const double t = p.horizon * ud(rng);
    Vector x = gauss(n, 1, opt.spread), y = gauss(d, 1, opt.spread);
    Matrix z = gauss(d, n, opt.spread);
    Vector dx = offset(n, 1), dy = offset(d, 1);
    Matrix dz = offset(d, n);
    Vector x2 = x + dx, y2 = y + dy;
    Matrix z2 = z + dz;
    const double dist = dx.norm() + dy.norm() + dz.norm();
    s.F(t, x, y, z, f1);
    s.F(t, x2, y2, z2, f2);
    g1.setZero();
    g2.setZero();
    s.G(t, x, y, z, g1);
    s.G(t, x2, y2, z2, g2);
    s.h(x, h1);
    s.h(x2, h2);
    if (dist > 0) {
      lF = std::max(lF, (f1 - f2).norm() / dist);
      lG = std::max(lG, (g1 - g2).norm() / dist);
    }
    if (dx.norm() > 0) lh = std::max(lh, (h1 - h2).norm() / dx.norm());
    Vector f0(d), g0 = Vector::Zero(n);
    s.F(t, x, Vector::Zero(d), Matrix::Zero(d, n), f0);
    s.G(t, x, Vector::Zero(d), Matrix::Zero(d, n), g0);
    rep.at_zero = std::max(rep.at_zero, f0.norm() + g0.norm() + h1.norm());
  }
  rep.estimates = {{"F", lF}, {"G", lG}, {"h", lh}};
  rep.max_constant = std::max({lF, lG, lh});
  if (rep.declared) rep.pass = std::max(rep.max_constant, rep.at_zero) <= *rep.declared;
  return rep;
}

nlohmann::json to_json(const LipschitzReport& r) {
  nlohmann::json est = nlohmann::json::object();
  for (const auto& e : r.estimates) est[e.name] = e.constant;
  nlohmann::json j{{"estimates", est}, {"at_zero", r.at_zero}, {"max_constant", r.max_constant},
                   {"pass", r.pass}};
  j["declared"] = r.declared ? nlohmann::json(*r.declared) : nlohmann::json(nullptr);
  return j;
}

}  // namespace mbsde

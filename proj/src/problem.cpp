#include "mbsde/problem.hpp"

#include "mbsde/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace mbsde {

RhoSpec::RhoSpec(std::vector<double> coefficients) : coeffs_(std::move(coefficients)) {
  for (double c : coeffs_)
    if (!(c >= 0.0) || !std::isfinite(c))
      throw ConfigError("rho: coefficients must be finite and nonnegative");
}

double RhoSpec::operator()(double r) const {
  double acc = 0.0;
  for (auto it = coeffs_.rbegin(); it != coeffs_.rend(); ++it) acc = acc * r + *it;
  return acc;
}

bool RhoSpec::is_zero() const {
  return std::all_of(coeffs_.begin(), coeffs_.end(), [](double c) { return c == 0.0; });
}

std::string structure_name(const StructuralInfo& s) {
  struct {
    std::string operator()(const GenericStructure&) const { return "generic"; }
    std::string operator()(const MarkovianStructure&) const { return "markovian"; }
    std::string operator()(const ProjectableStructure&) const { return "projectable"; }
    std::string operator()(const SubquadraticStructure&) const { return "subquadratic"; }
  } v;
  return std::visit(v, s);
}

BsdeProblem make_markovian_problem(std::string name, Index d, Index n, double horizon,
                                   MarkovianStructure s) {
  if (!s.F || !s.G || !s.h) throw ConfigError("markovian structure needs F, G and h");
  BsdeProblem p;
  p.name = std::move(name);
  p.d = d;
  p.n = n;
  p.horizon = horizon;
  p.terminal_bound = s.growth_constant.value_or(0.0);
  auto h = s.h;
  p.terminal = [h](const PathView& path, Vector& out) { h(path.state(), out); };
  auto F = s.F;
  auto G = s.G;
  p.driver = [F, G, n](double t, const PathView& path, const Vector& y, const Matrix& z,
                       Vector& out) {
    Vector x = path.state();
    Vector g(n);
    g.setZero();
    F(t, x, y, z, out);
    G(t, x, y, z, g);
    out += z * g;
  };
  p.structure = std::move(s);
  check_structure(p);
  return p;
}

BsdeProblem make_projectable_problem(std::string name, Index d, Index n, double horizon,
                                     TerminalFn terminal, double terminal_bound,
                                     ProjectableStructure s) {
  if (!s.P || !s.Q || !s.R) throw ConfigError("projectable structure needs P, Q and R");
  BsdeProblem p;
  p.name = std::move(name);
  p.d = d;
  p.n = n;
  p.horizon = horizon;
  p.terminal = std::move(terminal);
  p.terminal_bound = terminal_bound;
  auto a = s.a;
  auto P = s.P;
  auto Q = s.Q;
  auto R = s.R;
  p.driver = [a, P, Q, R, n](double t, const PathView& path, const Vector& y, const Matrix& z,
                             Vector& out) {
    double u = a.dot(y);
    RowVector v = a.transpose() * z;
    Vector r(n);
    r.setZero();
    P(t, path, u, v, out);
    R(t, path, u, v, r);
    out += y * Q(t, path, u, v) + z * r;
  };
  p.structure = std::move(s);
  check_structure(p);
  return p;
}

BsdeProblem make_subquadratic_problem(std::string name, Index d, Index n, double horizon,
                                      TerminalFn terminal, double terminal_bound,
                                      SubquadraticStructure s) {
  if (!s.F || !s.G) throw ConfigError("subquadratic structure needs the split F + G");
  BsdeProblem p;
  p.name = std::move(name);
  p.d = d;
  p.n = n;
  p.horizon = horizon;
  p.terminal = std::move(terminal);
  p.terminal_bound = terminal_bound;
  auto F = s.F;
  auto G = s.G;
  p.driver = [F, G, d](double t, const PathView& path, const Vector& y, const Matrix& z,
                       Vector& out) {
    Vector g(d);
    g.setZero();
    F(t, path, y, z, out);
    G(t, path, y, z, g);
    out += g;
  };
  p.structure = std::move(s);
  check_structure(p);
  return p;
}

void check_structure(const BsdeProblem& p) {
  if (p.d < 1 || p.n < 1) throw ConfigError(p.name + ": dimensions must be >= 1");
  if (!(p.horizon > 0.0) || !std::isfinite(p.horizon))
    throw ConfigError(p.name + ": horizon must be positive");
  if (!p.terminal || !p.driver) throw ConfigError(p.name + ": terminal and driver are required");
  if (auto* s = p.as<ProjectableStructure>()) {
    if (s->a.size() != p.d) throw ConfigError(p.name + ": projection vector has wrong size");
    if (s->a.norm() == 0.0) throw ConfigError(p.name + ": projection vector a must be nonzero");
    if (s->C < 0.0) throw ConfigError(p.name + ": C must be >= 0");
  }
  if (auto* s = p.as<SubquadraticStructure>()) {
    if (!(s->eps > 0.0 && s->eps < 1.0))
      throw ConfigError(p.name + ": subquadratic eps must lie strictly inside (0,1)");
    if (!(s->C >= 0.0)) throw ConfigError(p.name + ": C must be >= 0");
  }
  if (auto* s = p.as<MarkovianStructure>()) {
    if (s->growth_constant && *s->growth_constant < 0.0)
      throw ConfigError(p.name + ": growth constant must be >= 0");
    if (s->lipschitz_constant && *s->lipschitz_constant < 0.0)
      throw ConfigError(p.name + ": Lipschitz constant must be >= 0");
  }
}

bool ValidationReport::all_pass() const {
  return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passes(); });
}

const ConditionCheck* ValidationReport::find(const std::string& name) const {
  for (const auto& c : checks)
    if (c.name == name) return &c;
  return nullptr;
}

namespace {

class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double normal() { return normal_(rng_); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }

  // Random direction with log-uniform magnitude in [1e-2, 1e2]; zero 5% of the time.
  Matrix point(Index rows, Index cols) {
    Matrix a(rows, cols);
    if (uniform(0.0, 1.0) < 0.05) return a.setZero();
    for (Index i = 0; i < a.size(); ++i) a.data()[i] = normal();
    double nrm = a.norm();
    if (nrm == 0.0) return a;
    return a * (std::pow(10.0, uniform(-2.0, 2.0)) / nrm);
  }
  Vector vec(Index n) { return point(n, 1).col(0); }

  // Either an independent point or a small perturbation of `base`.
  Matrix partner(const Matrix& base) {
    if (uniform(0.0, 1.0) < 0.5) return point(base.rows(), base.cols());
    Matrix e = point(base.rows(), base.cols());
    return base + e * (1e-3 * (1.0 + base.norm()) / std::max(e.norm(), 1e-300));
  }

 private:
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

class CheckBuilder {
 public:
  explicit CheckBuilder(std::string name) { c_.name = std::move(name); }

  // Records lhs <= rhs at one point.
  void record(double lhs, double rhs) {
    ++c_.samples;
    if (!std::isfinite(lhs) || std::isnan(rhs)) {
      ++c_.nonfinite;
      return;
    }
    double margin = lhs - rhs;
    c_.max_margin = std::max(c_.max_margin, margin);
    if (margin > 1e-12 * (1.0 + std::abs(lhs) + std::abs(rhs))) ++c_.violations;
  }
  void nonfinite() {
    ++c_.samples;
    ++c_.nonfinite;
  }
  void skip() {
    ++c_.samples;
    ++c_.skipped;
  }
  ConditionCheck done() { return c_; }

 private:
  ConditionCheck c_;
};

bool finite(const Vector& v) { return v.allFinite(); }

}  // namespace

ValidationReport validate_problem(const BsdeProblem& p, std::size_t samples, std::uint64_t seed) {
  if (samples < 1) throw ConfigError("validate_problem: samples must be >= 1");
  check_structure(p);
  Sampler s(derive_seed({seed, 0x76616cULL}));
  const Index d = p.d, n = p.n;

  TimeGrid grid(p.horizon, 16);
  Index npaths = static_cast<Index>(std::min<std::size_t>(samples, 512));
  PathEnsemble ens = sample_brownian(grid, npaths, n, derive_seed({seed, 1}));

  ValidationReport rep;

  // terminal bound, driver finiteness
  {
    CheckBuilder tb("terminal-bound");
    for (Index m = 0; m < npaths; ++m) {
      Vector xi(d);
      xi.setZero();
      p.terminal(ens.path(m, grid.steps()), xi);
      if (!finite(xi)) tb.nonfinite();
      else tb.record(xi.norm(), p.terminal_bound);
    }
    rep.checks.push_back(tb.done());
  }

  struct Point {
    double t;
    PathView path;
    Vector y, y2;
    Matrix z, z2;
  };
  auto draw = [&]() {
    Index m = static_cast<Index>(s.index(static_cast<std::size_t>(npaths)));
    std::size_t k = s.index(grid.steps() + 1);
    Vector y = s.vec(d);
    Matrix z = s.point(d, n);
    Vector y2 = s.partner(y).col(0);
    Matrix z2 = s.partner(z);
    return Point{grid.time(k), ens.path(m, k), y, y2, z, z2};
  };

  {
    CheckBuilder fin("driver-finite");
    for (std::size_t i = 0; i < samples; ++i) {
      auto pt = draw();
      Vector f(d);
      f.setZero();
      p.driver(pt.t, pt.path, pt.y, pt.z, f);
      if (!finite(f)) fin.nonfinite();
      else fin.record(0.0, 0.0);
    }
    rep.checks.push_back(fin.done());
  }

  if (auto* sq = p.as<SubquadraticStructure>()) {
    const double C = sq->C, eps = sq->eps;
    const RhoSpec& rho = sq->rho;
    CheckBuilder b1("B1"), b2("B2"), b3("B3"), b4f("B4-F"), b4g("B4-G"), split("split");
    for (Index m = 0; m < npaths; ++m) {
      Vector xi(d);
      xi.setZero();
      p.terminal(ens.path(m, grid.steps()), xi);
      if (!finite(xi)) b1.nonfinite();
      else b1.record(xi.norm(), C);
    }
    for (std::size_t i = 0; i < samples; ++i) {
      auto pt = draw();
      Vector f(d), f2(d), F(d), G(d);
      f.setZero();
      f2.setZero();
      F.setZero();
      G.setZero();
      p.driver(pt.t, pt.path, pt.y, pt.z, f);
      p.driver(pt.t, pt.path, pt.y2, pt.z2, f2);
      sq->F(pt.t, pt.path, pt.y, pt.z, F);
      sq->G(pt.t, pt.path, pt.y, pt.z, G);
      const double ny = pt.y.norm(), nz = pt.z.norm();
      if (!finite(f)) b2.nonfinite();
      else b2.record(f.norm(), C * (1.0 + ny + rho(ny) * std::pow(nz, 2.0 - eps)));
      if (!finite(f) || !finite(f2)) {
        b3.nonfinite();
      } else {
        double ym = std::max(ny, pt.y2.norm());
        double zm = std::max(nz, pt.z2.norm());
        b3.record((f - f2).norm(),
                  rho(ym) * ((pt.y - pt.y2).norm()
                             + (1.0 + std::pow(zm, 1.0 - eps)) * (pt.z - pt.z2).norm()));
      }
      if (!finite(F)) b4f.nonfinite();
      else b4f.record(pt.y.dot(F), C * ny * (1.0 + ny + nz));
      RowVector yz = pt.y.transpose() * pt.z;
      if (!finite(G)) b4g.nonfinite();
      else if (yz.norm() == 0.0) b4g.skip();
      else b4g.record(pt.y.dot(G), yz.norm() * rho(ny) * nz);
      if (!finite(f) || !finite(F) || !finite(G)) split.nonfinite();
      else split.record((f - F - G).norm(), 1e-12 * (1.0 + f.norm()));
    }
    for (auto* b : {&b1, &b2, &b3, &b4f, &b4g, &split}) rep.checks.push_back(b->done());
  }

  if (auto* pr = p.as<ProjectableStructure>()) {
    const double C = pr->C;
    CheckBuilder pg("P-growth"), qb("Q-bound"), rg("R-growth"), pc("projection");
    for (std::size_t i = 0; i < samples; ++i) {
      auto pt = draw();
      double u = pr->a.dot(pt.y);
      RowVector v = pr->a.transpose() * pt.z;
      Vector P(d), R(n), f(d);
      P.setZero();
      R.setZero();
      f.setZero();
      pr->P(pt.t, pt.path, u, v, P);
      double Q = pr->Q(pt.t, pt.path, u, v);
      pr->R(pt.t, pt.path, u, v, R);
      p.driver(pt.t, pt.path, pt.y, pt.z, f);
      if (!finite(P)) pg.nonfinite();
      else pg.record(P.norm(), C * (1.0 + std::abs(u)));
      if (!std::isfinite(Q)) qb.nonfinite();
      else qb.record(std::abs(Q), C);
      if (!finite(R)) rg.nonfinite();
      else rg.record(R.norm(), C + pr->rho(std::abs(u)) * v.norm());
      if (!finite(f) || !finite(P) || !finite(R) || !std::isfinite(Q)) {
        pc.nonfinite();
      } else {
        Vector g = P + pt.y * Q + pt.z * R;
        pc.record((f - g).norm(), 1e-12 * (1.0 + g.norm()));
      }
    }
    for (auto* b : {&pg, &qb, &rg, &pc}) rep.checks.push_back(b->done());
  }

  if (auto* mk = p.as<MarkovianStructure>()) {
    CheckBuilder a1("A1"), a2("A2"), a3("A3");
    const double scale = 2.0 * std::sqrt(std::max(p.horizon, 1.0));
    for (std::size_t i = 0; i < samples; ++i) {
      auto pt = draw();
      Vector x(n);
      for (Index j = 0; j < n; ++j) x[j] = scale * s.normal();
      Vector h(d), F(d), G(n);
      h.setZero();
      F.setZero();
      G.setZero();
      mk->h(x, h);
      mk->F(pt.t, x, pt.y, pt.z, F);
      mk->G(pt.t, x, pt.y, pt.z, G);
      const double ny = pt.y.norm(), nz = pt.z.norm();
      if (mk->growth_constant) {
        const double C = *mk->growth_constant;
        if (!finite(h)) a1.nonfinite();
        else a1.record(h.norm(), C);
        if (!finite(F)) a2.nonfinite();
        else a2.record(pt.y.dot(F), C * ny * (1.0 + ny + nz));
      }
      if (!finite(G)) a3.nonfinite();
      else a3.record(G.norm(), mk->rho(ny) * (1.0 + nz));
    }
    if (mk->growth_constant) {
      rep.checks.push_back(a1.done());
      rep.checks.push_back(a2.done());
    }
    rep.checks.push_back(a3.done());
  }
  return rep;
}

std::pair<Vector, Matrix> truncate_pi_L(const Vector& y, const Matrix& z, double L) {
  if (!(L > 0.0)) throw ConfigError("truncate_pi_L: L must be positive");
  Vector ty = y;
  Matrix tz = z;
  double ny = y.norm(), nz = z.norm();
  if (ny > L) ty *= L / ny;
  if (nz > L) tz *= L / nz;
  return {ty, tz};
}

double projected_scalar_driver(const ProjectableStructure& s, double t, const PathView& path,
                               double u, const RowVector& v) {
  Vector P(s.a.size()), R(v.size());
  P.setZero();
  R.setZero();
  s.P(t, path, u, v, P);
  s.R(t, path, u, v, R);
  return s.a.dot(P) + u * s.Q(t, path, u, v) + v.dot(R.transpose());
}

double apriori_y_bound(double C, double T, double t) {
  if (!(t >= 0.0 && t <= T)) {
    std::ostringstream msg;
    msg << "apriori_y_bound: t = " << t << " outside [0, " << T << "]";
    throw std::domain_error(msg.str());
  }
  const double c1 = C + 1.0;
  return c1 * std::exp(c1 * c1 * (T - t) / 2.0);
}

QBound fbsde_q_bound(double C, double T) {
  if (C < 0.0 || T < 0.0) throw std::domain_error("fbsde_q_bound: C and T must be >= 0");
  const double a = 2.0 * C * C + 2.0 * C + 1.0;
  return {a, C * C * std::exp(a * T) * (1.0 + T)};
}

}  // namespace mbsde

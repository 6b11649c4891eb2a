#include "mbsde/pde.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mbsde {

Index PdeField::nodes() const { return n == 1 ? per_axis : per_axis * per_axis; }

Vector PdeField::node(Index i) const {
  Vector x(n);
  x[0] = -pde.L + static_cast<double>(i % per_axis) * pde.dx;
  if (n == 2) x[1] = -pde.L + static_cast<double>(i / per_axis) * pde.dx;
  return x;
}

Vector PdeField::value(std::size_t k, const Vector& x) const {
  const Matrix& U = u.at(k);
  auto locate = [&](double c, Index& i, double& w) {
    double s = std::clamp((c + pde.L) / pde.dx, 0.0, static_cast<double>(per_axis - 1));
    i = std::min<Index>(static_cast<Index>(s), per_axis - 2);
    w = s - static_cast<double>(i);
  };
  Index i0, i1 = 0;
  double w0, w1 = 0.0;
  locate(x[0], i0, w0);
  if (n == 1) return ((1 - w0) * U.row(i0) + w0 * U.row(i0 + 1)).transpose();
  locate(x[1], i1, w1);
  auto at = [&](Index a, Index b) { return U.row(a + per_axis * b); };
  return ((1 - w0) * (1 - w1) * at(i0, i1) + w0 * (1 - w1) * at(i0 + 1, i1) + (1 - w0) * w1 * at(i0, i1 + 1)
          + w0 * w1 * at(i0 + 1, i1 + 1))
      .transpose();
}

PdeField solve_pde(const BsdeProblem& p, const TimeGrid& grid, const PdeGrid& pde) {
  const auto* s = p.as<MarkovianStructure>();
  if (!s) throw ConfigError(p.name + ": PDE cross-check needs a markovian structure");
  if (p.n != 1 && p.n != 2) throw ConfigError("PDE cross-check supports n = 1 or 2 only");
  if (!(pde.L > 0) || !(pde.dx > 0) || !(pde.safety > 0)) throw ConfigError("PDE grid: L, dx and safety must be positive");
  PdeField f;
  f.grid = grid;
  f.pde = pde;
  f.n = p.n;
  f.d = p.d;
  const double cells = 2 * pde.L / pde.dx;
  if (std::abs(cells - std::round(cells)) > 1e-9 * cells || std::round(cells) < 4)
    throw ConfigError("PDE grid: dx must divide 2L into at least 4 cells");
  f.per_axis = static_cast<Index>(std::round(cells)) + 1;
  const Index P = f.per_axis, n = p.n, d = p.d, nodes = f.nodes();
  const double bound = pde.dx * pde.dx / (2.0 * static_cast<double>(n) * pde.safety);
  double want = bound;
  if (pde.dt) {
    if (pde.enforce_cfl && *pde.dt > bound) {
      std::ostringstream msg;
      msg << "CFL: explicit step " << *pde.dt << " exceeds dx^2/(2 n safety) = " << bound;
      throw ConfigError(msg.str());
    }
    want = *pde.dt;
  }
  f.substeps = static_cast<std::size_t>(std::ceil(grid.dt() / want - 1e-9));
  f.dt = grid.dt() / static_cast<double>(f.substeps);

  const std::size_t N = grid.steps();
  f.u.assign(N + 1, Matrix());
  Matrix U(nodes, d), next(nodes, d);
  std::vector<Vector> X(nodes);
  Vector y(d), fv(d), g(n);
  for (Index i = 0; i < nodes; ++i) {
    X[i] = f.node(i);
    s->h(X[i], y);
    U.row(i) = y.transpose();
  }
  f.u[N] = U;
  const double dx = pde.dx, tau = f.dt;
  const Index stride[2] = {1, P};
  auto interior = [&](Index i) {
    for (Index a = 0; a < n; ++a) {
      Index c = a == 0 ? i % P : i / P;
      if (c == 0 || c == P - 1) return false;
    }
    return true;
  };
  Matrix z(d, n);
  for (std::size_t k = N; k-- > 0;) {
    for (std::size_t j = f.substeps; j-- > 0;) {
      const double t = grid.time(k) + static_cast<double>(j + 1) * tau;
      const double before = U.cwiseAbs().maxCoeff();
      for (Index i = 0; i < nodes; ++i) {
        if (!interior(i)) continue;
        Vector lap = Vector::Zero(d);
        for (Index a = 0; a < n; ++a) {
          auto up = U.row(i + stride[a]), dn = U.row(i - stride[a]);
          z.col(a) = (up - dn).transpose() / (2 * dx);
          lap += (up + dn - 2 * U.row(i)).transpose() / (dx * dx);
        }
        y = U.row(i).transpose();
        s->F(t, X[i], y, z, fv);
        g.setZero();
        s->G(t, X[i], y, z, g);
        next.row(i) = U.row(i) + tau * (0.5 * lap + fv + z * g).transpose();
      }
      // boundary rows by linear extrapolation, axis by axis
      for (Index i = 0; i < nodes; ++i) {
        Index c0 = i % P;
        if (c0 == 0) next.row(i) = 2 * next.row(i + 1) - next.row(i + 2);
        if (c0 == P - 1) next.row(i) = 2 * next.row(i - 1) - next.row(i - 2);
      }
      if (n == 2)
        for (Index i = 0; i < nodes; ++i) {
          Index c1 = i / P;
          if (c1 == 0) next.row(i) = 2 * next.row(i + P) - next.row(i + 2 * P);
          if (c1 == P - 1) next.row(i) = 2 * next.row(i - P) - next.row(i - 2 * P);
        }
      const double after = next.cwiseAbs().maxCoeff();
      if (!std::isfinite(after) || after > 10 * before + 1e-12) {
        std::ostringstream msg;
        msg << "explicit PDE scheme unstable at t = " << t << " (max |u| " << before << " -> " << after
            << "); reduce dt below the CFL bound dx^2/(2n) = " << pde.dx * pde.dx / (2.0 * static_cast<double>(n));
        throw SolverError(msg.str());
      }
      std::swap(U, next);
    }
    f.u[k] = U;
  }
  return f;
}

PdeComparison pde_crosscheck(const BsdeProblem& p, const DecouplingField& field, const KnotArray& states,
                             const PdeGrid& pde, double factor, PdeField* fine_out) {
  const TimeGrid& g = field.grid;
  const std::size_t N = g.steps();
  if (states.knots() != N + 1 || states.cols() != p.n) throw ConfigError("pde_crosscheck: states have wrong shape");
  PdeField fine = solve_pde(p, g, pde);
  PdeGrid coarse_grid = pde;
  coarse_grid.dx = 2 * pde.dx;
  coarse_grid.dt.reset();
  PdeField coarse = solve_pde(p, g, coarse_grid);
  PdeComparison c;
  c.factor = factor;
  const Index P = fine.per_axis, Pc = coarse.per_axis;
  for (std::size_t k = 1; k < N; ++k) {
    auto [lo, hi] = central_box(states.at(k));
    double diff = 0.0, trunc = 0.0;
    std::size_t covered = 0;
    for (Index i = 0; i < fine.nodes(); ++i) {
      Index c0 = i % P, c1 = i / P;
      if (c0 % 2 || c1 % 2) continue;  // nodes shared with the coarse grid
      Vector x = fine.node(i);
      if ((x - lo).minCoeff() < 0 || (hi - x).minCoeff() < 0) continue;
      ++covered;
      Index ic = c0 / 2 + Pc * (c1 / 2);
      diff = std::max(diff, (fine.u[k].row(i).transpose() - field.q(k, x)).cwiseAbs().maxCoeff());
      trunc = std::max(trunc, (fine.u[k].row(i) - coarse.u[k].row(ic)).cwiseAbs().maxCoeff());
    }
    const double se = field.y_se.size() > static_cast<Index>(k) ? field.y_se[k] : 0.0;
    c.t.push_back(g.time(k));
    c.max_diff.push_back(diff);
    c.truncation.push_back(trunc);
    c.se.push_back(se);
    c.covered.push_back(covered);
    if (covered == 0) continue;
    const double scale = trunc + se;
    c.max_ratio = std::max(c.max_ratio, scale > 0 ? diff / scale : (diff > 0 ? INFINITY : 0.0));
    if (diff > factor * scale) c.pass = false;
  }
  if (fine_out) *fine_out = std::move(fine);
  return c;
}

std::string pde_csv(const PdeField& f, Index stride) {
  if (stride < 1) throw ConfigError("pde_csv: stride must be >= 1");
  std::ostringstream os;
  os.precision(12);
  os << "t";
  for (Index a = 0; a < f.n; ++a) os << ",x" << a;
  for (Index j = 0; j < f.d; ++j) os << ",u" << j;
  os << '\n';
  for (std::size_t k = 0; k < f.u.size(); ++k)
    for (Index i = 0; i < f.nodes(); ++i) {
      if ((i % f.per_axis) % stride || (i / f.per_axis) % stride) continue;
      Vector x = f.node(i);
      os << f.grid.time(k);
      for (Index a = 0; a < f.n; ++a) os << ',' << x[a];
      for (Index j = 0; j < f.d; ++j) os << ',' << f.u[k](i, j);
      os << '\n';
    }
  return os.str();
}

nlohmann::json to_json(const PdeComparison& c) {
  return {{"t", c.t},         {"max_diff", c.max_diff}, {"truncation", c.truncation}, {"se", c.se},
          {"covered", c.covered}, {"max_ratio", c.max_ratio}, {"factor", c.factor}, {"pass", c.pass}};
}

}  // namespace mbsde

#include "mbsde/solution.hpp"

#include <algorithm>
#include <sstream>

namespace mbsde {

SolutionField::SolutionField(const TimeGrid& g, Window w, Index paths, Index d_, Index n_)
    : grid(g), window(w), d(d_), n(n_), Y(w.steps() + 1, paths, d_), Z(w.steps(), paths, d_ * n_),
      y_se(Vector::Zero(static_cast<Index>(w.steps() + 1))) {}

Matrix SolutionField::z_at(std::size_t k, Index m) const {
  Vector row = Z.row(k - window.first, m);
  return Eigen::Map<const Matrix>(row.data(), d, n);
}

const KnotModel* SolutionField::model(std::size_t k) const {
  if (models.empty() || !window.contains(k)) return nullptr;
  return &models[k - window.first];
}

SolutionField paste(const std::vector<SolutionField>& parts) {
  if (parts.empty()) throw ConfigError("paste: nothing to paste");
  std::vector<const SolutionField*> order;
  for (const auto& p : parts) order.push_back(&p);
  std::sort(order.begin(), order.end(),
            [](auto* a, auto* b) { return a->window.first < b->window.first; });
  for (std::size_t i = 1; i < order.size(); ++i)
    if (order[i]->window.first != order[i - 1]->window.last)
      throw ConfigError("paste: windows do not tile a contiguous range");
  const auto& first = *order.front();
  Window w{first.window.first, order.back()->window.last};
  SolutionField out(first.grid, w, first.paths(), first.d, first.n);
  out.method = first.method;
  bool models = std::all_of(order.begin(), order.end(), [](auto* p) { return p->has_models(); });
  if (models) out.models.resize(w.steps() + 1);
  // a shared knot keeps the right-hand window's entry: same Y, but the model
  // and SE come from the regression that produced it
  for (auto* part : order) {
    const auto& p = *part;
    for (std::size_t k = p.window.first; k <= p.window.last; ++k) {
      out.y(k) = p.y(k);
      out.y_se[k - w.first] = p.y_se[k - p.window.first];
      if (models) out.models[k - w.first] = p.models[k - p.window.first];
      if (k < p.window.last) out.z(k) = p.z(k);
    }
  }
  return out;
}

Matrix evaluate_driver(const BsdeProblem& p, const PathEnsemble& ens, std::size_t k,
                       const Eigen::Ref<const Matrix>& y, const Eigen::Ref<const Matrix>& z) {
  const Index M = ens.paths(), d = p.d, n = p.n;
  const double t = ens.grid().time(k);
  Matrix out(M, d);
  Vector yy(d), f(d);
  Matrix zz(d, n);
  for (Index m = 0; m < M; ++m) {
    yy = y.row(m).transpose();
    for (Index c = 0; c < d * n; ++c) zz.data()[c] = z(m, c);
    f.setZero();
    p.driver(t, ens.path(m, k), yy, zz, f);
    if (!f.allFinite()) {
      std::ostringstream msg;
      msg << p.name << ": non-finite driver value at path " << m << ", knot " << k;
      throw SolverError(msg.str());
    }
    out.row(m) = f.transpose();
  }
  return out;
}

Matrix evaluate_terminal(const BsdeProblem& p, const PathEnsemble& ens) {
  const Index M = ens.paths();
  Matrix out(M, p.d);
  Vector xi(p.d);
  for (Index m = 0; m < M; ++m) {
    xi.setZero();
    p.terminal(ens.path(m, ens.steps()), xi);
    if (!xi.allFinite()) {
      std::ostringstream msg;
      msg << p.name << ": non-finite terminal value on path " << m;
      throw SolverError(msg.str());
    }
    out.row(m) = xi.transpose();
  }
  return out;
}

}  // namespace mbsde

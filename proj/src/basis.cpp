#include "mbsde/basis.hpp"

#include <algorithm>
#include <cmath>

namespace mbsde {

BasisFamily parse_basis_family(const std::string& s) {
  if (s == "polynomial") return BasisFamily::polynomial;
  if (s == "piecewise_constant") return BasisFamily::piecewise_constant;
  throw ConfigError("unknown basis family '" + s + "'");
}

std::string to_string(BasisFamily f) {
  return f == BasisFamily::polynomial ? "polynomial" : "piecewise_constant";
}

namespace {

void multi_indices(std::size_t p, int degree, int cross, std::vector<int>& cur,
                   std::vector<std::vector<int>>& out) {
  if (cur.size() == p) {
    int total = 0, nonzero = 0;
    for (int a : cur) {
      total += a;
      nonzero += a > 0;
    }
    if (nonzero <= 1 || total <= cross) out.push_back(cur);
    return;
  }
  for (int a = 0; a <= degree; ++a) {
    cur.push_back(a);
    multi_indices(p, degree, cross, cur, out);
    cur.pop_back();
  }
}

}  // namespace

Basis::Basis(const BasisSpec& spec, const Eigen::Ref<const Matrix>& sample) : spec_(spec) {
  if (spec.family == BasisFamily::polynomial && spec.degree < 0)
    throw ConfigError("basis degree must be >= 0");
  if (spec.family == BasisFamily::piecewise_constant && spec.cells < 1)
    throw ConfigError("basis cells must be >= 1");
  const Index p = sample.cols();
  const double M = static_cast<double>(sample.rows());
  mean_.assign(p, 0.0);
  scale_.assign(p, 1.0);
  for (Index i = 0; i < p; ++i) {
    double mu = sample.col(i).mean();
    double var = M > 1 ? (sample.col(i).array() - mu).square().sum() / (M - 1.0) : 0.0;
    double sd = std::sqrt(var);
    mean_[i] = mu;
    if (sd > 1e-12 * (1.0 + std::abs(mu))) {
      scale_[i] = sd;
      active_.push_back(i);
    }
  }
  if (spec.family == BasisFamily::polynomial) {
    std::vector<int> cur;
    multi_indices(active_.size(), spec.degree, std::max(spec.cross_degree, 1), cur, powers_);
    // constant first, then by total degree
    std::stable_sort(powers_.begin(), powers_.end(), [](const auto& a, const auto& b) {
      int sa = 0, sb = 0;
      for (int v : a) sa += v;
      for (int v : b) sb += v;
      return sa < sb;
    });
    size_ = static_cast<Index>(powers_.size());
    max_degree_ = spec.degree;
  } else {
    size_ = 1;
    for (std::size_t j = 0; j < active_.size(); ++j) size_ *= spec.cells;
  }
}

void Basis::eval(const double* x, std::ptrdiff_t stride, double* out) const {
  const std::size_t q = active_.size();
  if (spec_.family == BasisFamily::piecewise_constant) {
    std::fill(out, out + size_, 0.0);
    Index cell = 0;
    for (std::size_t j = 0; j < q; ++j) {
      Index i = active_[j];
      double z = (x[i * stride] - mean_[i]) / scale_[i];
      int c = static_cast<int>(std::floor((z + 3.0) / 6.0 * spec_.cells));
      c = std::clamp(c, 0, spec_.cells - 1);
      cell = cell * spec_.cells + c;
    }
    out[cell] = 1.0;
    return;
  }
  // normalised Hermite values He_a(z)/sqrt(a!) per active coordinate
  constexpr int kMaxStack = 64;
  double buf[kMaxStack];
  std::vector<double> heap;
  double* h = buf;
  const std::size_t need = q * static_cast<std::size_t>(max_degree_ + 1);
  if (need > static_cast<std::size_t>(kMaxStack)) {
    heap.resize(need);
    h = heap.data();
  }
  for (std::size_t j = 0; j < q; ++j) {
    Index i = active_[j];
    double z = (x[i * stride] - mean_[i]) / scale_[i];
    double* hj = h + j * (max_degree_ + 1);
    hj[0] = 1.0;
    if (max_degree_ >= 1) hj[1] = z;
    // He_{a+1} = z He_a - a He_{a-1}, carried in normalised form
    for (int a = 1; a < max_degree_; ++a)
      hj[a + 1] = (z * hj[a] - std::sqrt(static_cast<double>(a)) * hj[a - 1])
                  / std::sqrt(static_cast<double>(a + 1));
  }
  for (Index b = 0; b < size_; ++b) {
    const auto& pw = powers_[b];
    double v = 1.0;
    for (std::size_t j = 0; j < q; ++j)
      if (pw[j]) v *= h[j * (max_degree_ + 1) + pw[j]];
    out[b] = v;
  }
}

Eigen::RowVectorXd Basis::eval(const Vector& x) const {
  if (x.size() != input_dim()) throw ConfigError("basis: state has wrong dimension");
  Eigen::RowVectorXd row(size_);
  eval(x.data(), 1, row.data());
  return row;
}

Matrix Basis::design(const Eigen::Ref<const Matrix>& states) const {
  if (states.cols() != input_dim()) throw ConfigError("basis: state has wrong dimension");
  const Index M = states.rows();
  Matrix X(M, size_);
  Eigen::RowVectorXd row(size_);
  for (Index m = 0; m < M; ++m) {
    eval(states.data() + m, states.outerStride(), row.data());
    X.row(m) = row;
  }
  return X;
}

}  // namespace mbsde

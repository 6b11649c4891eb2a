#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace mbsde {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Raised when a numerical procedure cannot produce a trustworthy result
/// (non-finite evaluator output, underflow, degenerate horizon rule, ...).
class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised for inconsistent inputs (dimension mismatch, unsupported structure).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense per-knot storage. Knot k holds a paths x cols column-major block,
/// so every knot slice maps directly onto an Eigen matrix.
class KnotArray {
 public:
  KnotArray() = default;
  KnotArray(std::size_t knots, Index paths, Index cols, double fill = 0.0)
      : knots_(knots), paths_(paths), cols_(cols),
        data_(knots * static_cast<std::size_t>(paths * cols), fill) {}

  std::size_t knots() const { return knots_; }
  Index paths() const { return paths_; }
  Index cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  Eigen::Map<Matrix> at(std::size_t k) {
    return {data_.data() + offset(k), paths_, cols_};
  }
  Eigen::Map<const Matrix> at(std::size_t k) const {
    return {data_.data() + offset(k), paths_, cols_};
  }

  double& operator()(std::size_t k, Index m, Index c) {
    return data_[offset(k) + static_cast<std::size_t>(c * paths_ + m)];
  }
  double operator()(std::size_t k, Index m, Index c) const {
    return data_[offset(k) + static_cast<std::size_t>(c * paths_ + m)];
  }

  Vector row(std::size_t k, Index m) const {
    Vector out(cols_);
    for (Index c = 0; c < cols_; ++c) out[c] = (*this)(k, m, c);
    return out;
  }
  void set_row(std::size_t k, Index m, const Vector& v) {
    for (Index c = 0; c < cols_; ++c) (*this)(k, m, c) = v[c];
  }

  const std::vector<double>& raw() const { return data_; }
  std::vector<double>& raw() { return data_; }

  friend bool operator==(const KnotArray&, const KnotArray&) = default;

 private:
  std::size_t offset(std::size_t k) const {
    return k * static_cast<std::size_t>(paths_ * cols_);
  }

  std::size_t knots_ = 0;
  Index paths_ = 0;
  Index cols_ = 0;
  std::vector<double> data_;
};

/// SplitMix64 finaliser; used to derive independent per-path / per-task seeds
/// from a master seed so that streams do not depend on scheduling.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x6a09e667f3bcc909ULL;
  for (auto p : parts) h = splitmix64(h ^ splitmix64(p));
  return h;
}

}  // namespace mbsde

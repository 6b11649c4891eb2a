#pragma once

#include "mbsde/types.hpp"

#include <string>
#include <vector>

namespace mbsde {

enum class BasisFamily { polynomial, piecewise_constant };

BasisFamily parse_basis_family(const std::string& s);
std::string to_string(BasisFamily f);

struct BasisSpec {
  BasisFamily family = BasisFamily::polynomial;
  int degree = 5;        // per-coordinate degree (polynomial)
  int cross_degree = 2;  // total degree cap for mixed monomials (polynomial, p > 1)
  int cells = 8;         // cells per coordinate (piecewise constant)
};

/// Basis functions on a regression state x in R^p. The state is standardised
/// with the mean and spread of the sample the basis was fitted on; coordinates
/// with no spread (e.g. W_0) are dropped. Polynomial: normalised probabilists'
/// Hermite products. Piecewise constant: indicators of cells of width 6/cells
/// on [-3, 3] in standardised units, outer cells unbounded.
class Basis {
 public:
  Basis() = default;
  Basis(const BasisSpec& spec, const Eigen::Ref<const Matrix>& sample);

  const BasisSpec& spec() const { return spec_; }
  Index size() const { return size_; }
  Index input_dim() const { return static_cast<Index>(mean_.size()); }

  /// Writes the basis row for a single state x (length input_dim()).
  void eval(const double* x, std::ptrdiff_t stride, double* out) const;
  Eigen::RowVectorXd eval(const Vector& x) const;
  /// Design matrix: one row per sample row.
  Matrix design(const Eigen::Ref<const Matrix>& states) const;

 private:
  BasisSpec spec_;
  std::vector<double> mean_, scale_;
  std::vector<Index> active_;              // coordinates with positive spread
  std::vector<std::vector<int>> powers_;   // polynomial multi-indices over active coords
  Index size_ = 1;
  int max_degree_ = 0;
};

}  // namespace mbsde

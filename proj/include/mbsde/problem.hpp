#pragma once

#include "mbsde/grid.hpp"
#include "mbsde/types.hpp"

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace mbsde {

/// Nondecreasing rho: R+ -> R+ given as c0 + c1 r + c2 r^2 + ... with c_i >= 0.
class RhoSpec {
 public:
  RhoSpec() = default;
  explicit RhoSpec(std::vector<double> coefficients);
  static RhoSpec constant(double c) { return RhoSpec({c}); }

  double operator()(double r) const;
  const std::vector<double>& coefficients() const { return coeffs_; }
  bool is_zero() const;

 private:
  std::vector<double> coeffs_;
};

using RowVector = Eigen::RowVectorXd;

/// xi(path): writes the d-dimensional terminal value for a full path.
using TerminalFn = std::function<void(const PathView& path, Vector& out)>;
/// f(t, path prefix, y, z): writes the d-dimensional driver value.
using DriverFn = std::function<void(double t, const PathView& path, const Vector& y,
                                    const Matrix& z, Vector& out)>;
/// Markovian coefficients read only the current state x in R^n.
using StateDriverFn = std::function<void(double t, const Vector& x, const Vector& y,
                                         const Matrix& z, Vector& out)>;
using StateFn = std::function<void(const Vector& x, Vector& out)>;
/// Coefficients of a projectable driver, functions of (t, path, a^T y, a^T z).
using ProjectedVectorFn = std::function<void(double t, const PathView& path, double u,
                                             const RowVector& v, Vector& out)>;
using ProjectedScalarFn =
    std::function<double(double t, const PathView& path, double u, const RowVector& v)>;

/// f = F(t, W_t, y, z) + z G(t, W_t, y, z), xi = h(W_T).
struct MarkovianStructure {
  StateDriverFn F;  // R^d valued
  StateDriverFn G;  // R^n valued
  StateFn h;        // R^d valued
  std::optional<double> lipschitz_constant;
  std::optional<double> growth_constant;  // C in |h| <= C, y^T F <= C|y|(1+|y|+|z|)
  RhoSpec rho;                            // |G| <= rho(|y|)(1+|z|)
};

/// f(s,y,z) = P(s,a^T y,a^T z) + y Q(s,a^T y,a^T z) + z R(s,a^T y,a^T z).
struct ProjectableStructure {
  Vector a;
  ProjectedVectorFn P;  // R^d valued
  ProjectedScalarFn Q;
  ProjectedVectorFn R;  // R^n valued
  double C = 0.0;
  RhoSpec rho;
};

/// Strictly subquadratic drivers with constants (C, eps, rho) and split f = F + G.
struct SubquadraticStructure {
  double C = 0.0;
  double eps = 0.5;
  RhoSpec rho;
  DriverFn F;
  DriverFn G;
};

struct GenericStructure {};

using StructuralInfo = std::variant<GenericStructure, MarkovianStructure,
                                    ProjectableStructure, SubquadraticStructure>;

std::string structure_name(const StructuralInfo& s);

struct BsdeProblem {
  std::string name;
  Index d = 1;
  Index n = 1;
  double horizon = 1.0;
  TerminalFn terminal;
  DriverFn driver;
  double terminal_bound = 0.0;  // declared C_xi, spot-checked by validate_problem
  StructuralInfo structure = GenericStructure{};

  template <class S>
  const S* as() const { return std::get_if<S>(&structure); }
};

BsdeProblem make_markovian_problem(std::string name, Index d, Index n, double horizon,
                                   MarkovianStructure s);
BsdeProblem make_projectable_problem(std::string name, Index d, Index n, double horizon,
                                     TerminalFn terminal, double terminal_bound,
                                     ProjectableStructure s);
BsdeProblem make_subquadratic_problem(std::string name, Index d, Index n, double horizon,
                                      TerminalFn terminal, double terminal_bound,
                                      SubquadraticStructure s);

/// Throws ConfigError when structural invariants fail (a = 0, eps outside (0,1), ...).
void check_structure(const BsdeProblem& p);

struct ConditionCheck {
  std::string name;
  double max_margin = -std::numeric_limits<double>::infinity();  // max(lhs - rhs)
  std::size_t samples = 0;
  std::size_t violations = 0;
  std::size_t nonfinite = 0;
  std::size_t skipped = 0;  // points where the inequality is vacuous

  bool passes() const { return violations == 0 && nonfinite == 0; }
};

struct ValidationReport {
  std::vector<ConditionCheck> checks;

  bool all_pass() const;
  const ConditionCheck* find(const std::string& name) const;
};

/// Samples every declared structural inequality at random points.
ValidationReport validate_problem(const BsdeProblem& p, std::size_t samples, std::uint64_t seed);

/// pi_L(y, z) = (min{1, L/|y|} y, min{1, L/|z|} z), Frobenius norm on z.
std::pair<Vector, Matrix> truncate_pi_L(const Vector& y, const Matrix& z, double L);

/// a^T P + u Q + v R: the driver of the projected one-dimensional equation.
double projected_scalar_driver(const ProjectableStructure& s, double t, const PathView& path,
                               double u, const RowVector& v);

/// (C+1) exp((C+1)^2 (T-t)/2), the a priori bound on |Y_t| for subquadratic drivers.
double apriori_y_bound(double C, double T, double t);

struct QBound {
  double a;      // 2C^2 + 2C + 1
  double bound;  // C^2 e^{aT} (1+T), bound on |Q_tau|^2
};
QBound fbsde_q_bound(double C, double T);

}  // namespace mbsde

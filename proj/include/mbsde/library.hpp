#pragma once

#include "mbsde/problem.hpp"
#include "mbsde/simulate.hpp"

#include <json.hpp>

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace mbsde {

/// Reference value for Y_0 with its own sampling error (0 for closed forms).
struct OracleValue {
  Vector value;
  Vector se;
  std::string method;
};

/// Closed-form or same-ensemble oracle. Empty when the scenario relies on the
/// nested re-evaluation of the fitted solution instead.
using OracleFn = std::function<OracleValue(const PathEnsemble& ens)>;

struct ScenarioInstance {
  BsdeProblem problem;
  OracleFn oracle;
  std::string oracle_name;  // "nested" when oracle is empty
  double abs_tol = 0.0;     // discretisation allowance added to se_mult combined SE
  double se_mult = 3.0;
};

struct ScenarioInfo {
  std::string name;
  std::string summary;
  std::string family;          // driver family the parameters belong to
  double default_T = 1.0;
  std::vector<std::string> params;  // accepted parameter names besides T
  /// Builds the problem on horizon T from a parameter object; unknown keys are ConfigErrors.
  std::function<ScenarioInstance(double T, const nlohmann::json& params)> make;
};

const std::vector<ScenarioInfo>& scenario_library();
/// Throws ConfigError listing the known names.
const ScenarioInfo& find_scenario(const std::string& name);

}  // namespace mbsde

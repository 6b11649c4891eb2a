#include "mbsde/config.hpp"
#include "mbsde/library.hpp"
#include "mbsde/runner.hpp"

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

namespace py = pybind11;
using nlohmann::json;

namespace {

std::string artifacts(const mbsde::RunArtifacts& a) {
  json rows = json::array();
  for (const auto& c : a.checks) rows.push_back(mbsde::to_json(c));
  return json{{"exit_code", a.exit_code},
              {"message", a.message},
              {"summary", a.summary},
              {"diagnostics", a.diagnostics},
              {"knots_csv", a.knots_csv},
              {"reports_jsonl", a.reports_jsonl},
              {"checks", rows}}
      .dump();
}

template <class Fn>
std::string with_config(const std::string& text, const std::string& out, Fn fn) {
  auto c = mbsde::parse_config_text(text);
  mbsde::RunArtifacts a;
  {
    py::gil_scoped_release release;
    a = fn(c);
    if (!out.empty()) mbsde::write_artifacts(a, out);
  }
  return artifacts(a);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Monte Carlo solvers for multidimensional BSDEs";

  py::register_exception<mbsde::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<mbsde::SolverError>(m, "SolverError", PyExc_RuntimeError);

  m.def("scenarios", [] {
    json out = json::array();
    for (const auto& s : mbsde::scenario_library())
      out.push_back({{"name", s.name}, {"summary", s.summary}, {"family", s.family}, {"T", s.default_T},
                     {"params", s.params}});
    return out.dump();
  });

  m.def("normalize_config", [](const std::string& text) { return mbsde::to_json(mbsde::parse_config_text(text)).dump(); },
        py::arg("config"));

  m.def("run", [](const std::string& text, const std::string& out) { return with_config(text, out, mbsde::run); },
        py::arg("config"), py::arg("out") = "");

  m.def("verify", [](const std::string& text, const std::string& out) { return with_config(text, out, mbsde::verify); },
        py::arg("config"), py::arg("out") = "");

  m.def(
      "sweep",
      [](const std::string& text, const std::string& parameter, const std::vector<std::size_t>& values) {
        auto c = mbsde::parse_config_text(text);
        mbsde::SweepResult r;
        {
          py::gil_scoped_release release;
          r = mbsde::sweep(c, parameter, values);
        }
        return json{{"parameter", r.parameter},
                    {"csv", r.csv},
                    {"values", r.values},
                    {"residual_mean_sq", r.residual_mean_sq},
                    {"max_abs_error", r.max_abs_error},
                    {"max_se", r.max_se},
                    {"residual_slope", r.residual_slope},
                    {"error_slope", r.error_slope},
                    {"exit_code", r.exit_code}}
            .dump();
      },
      py::arg("config"), py::arg("parameter"), py::arg("values"));

  m.def(
      "oracle",
      [](const std::string& text) {
        auto c = mbsde::parse_config_text(text);
        py::gil_scoped_release release;
        return mbsde::oracle_reference(c).dump();
      },
      py::arg("config"));
}

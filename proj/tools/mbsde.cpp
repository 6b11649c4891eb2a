#include "mbsde/config.hpp"
#include "mbsde/library.hpp"
#include "mbsde/runner.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

using namespace mbsde;

namespace {

struct Flags {
  std::string config;
  std::string scenario;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> route;
  std::optional<std::uint64_t> paths;
  std::optional<std::uint64_t> steps;
};

RunConfig resolve(const Flags& f) {
  RunConfig c;
  if (!f.config.empty()) {
    c = load_config(f.config);
    if (!f.scenario.empty()) throw ConfigError("give either --config or --scenario, not both");
  } else if (!f.scenario.empty()) {
    c = parse_config({{"problem", f.scenario}});
  } else {
    throw ConfigError("no problem given: pass --config PATH or --scenario NAME");
  }
  if (f.seed) c.seed = *f.seed;
  if (f.out) c.output = *f.out;
  if (f.route) c.route = parse_route(*f.route);
  if (f.paths) {
    if (*f.paths < 2) throw ConfigError("--paths must be >= 2");
    c.M = static_cast<Index>(*f.paths);
  }
  if (f.steps) {
    if (*f.steps < 1) throw ConfigError("--steps must be >= 1");
    c.N = *f.steps;
  }
  if (c.window_steps && c.N % *c.window_steps) throw ConfigError("tolerances.window_steps must divide the step count");
  return c;
}

void print_y0(const RunArtifacts& a) {
  if (!a.summary.contains("y0")) return;
  for (const auto& y : a.summary["y0"])
    std::cout << "Y_0[" << y["coordinate"].get<int>() << "] = " << y["value"].get<double>() << "  (SE "
              << y["se"].get<double>() << ")\n";
  if (a.summary.contains("oracle")) {
    const auto& o = a.summary["oracle"];
    std::cout << "oracle (" << o["method"].get<std::string>() << "): " << o["value"].dump() << "  abs error "
              << o["abs_error"].dump() << "  threshold " << o["threshold"].dump() << '\n';
  }
}

void write_text(const std::string& dir, const std::string& name, const std::string& body) {
  std::filesystem::create_directories(dir);
  std::ofstream os(std::filesystem::path(dir) / name, std::ios::binary);
  if (!os) throw ConfigError("cannot write " + name + " in " + dir);
  os << body;
}

std::vector<std::size_t> parse_values(const std::string& s) {
  std::vector<std::size_t> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      long long x = std::stoll(item, &used);
      if (used != item.size() || x <= 0) throw std::invalid_argument(item);
      v.push_back(static_cast<std::size_t>(x));
    } catch (const std::exception&) {
      throw ConfigError("--values must be a comma-separated list of positive integers, got '" + item + "'");
    }
  }
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mbsde: Monte Carlo solvers for multidimensional BSDEs"};
  app.require_subcommand(1);
  Flags f;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--scenario", f.scenario, "built-in scenario name (instead of --config)");
    sub->add_option("--seed", f.seed, "override ensemble.seed");
    sub->add_option("--out", f.out, "override the output directory");
    sub->add_option("--route", f.route, "override the route: picard | project | markovian | auto");
    sub->add_option("--paths", f.paths, "override ensemble.M");
    sub->add_option("--steps", f.steps, "override grid.N");
  };
  auto* run_cmd = app.add_subcommand("run", "solve and write summary.json, diagnostics.json, knots.csv, reports.jsonl");
  auto* verify_cmd = app.add_subcommand("verify", "solve and print a verdict table of every check");
  auto* sweep_cmd = app.add_subcommand("sweep", "convergence table over N or M");
  auto* oracle_cmd = app.add_subcommand("oracle", "nested Monte Carlo reference for Y_0");
  auto* list_cmd = app.add_subcommand("list", "list the built-in scenarios");
  for (auto* s : {run_cmd, verify_cmd, sweep_cmd, oracle_cmd}) common(s);
  std::string over = "N", values = "16,32,64,128";
  sweep_cmd->add_option("--over", over, "N or M")->check(CLI::IsMember({"N", "M"}));
  sweep_cmd->add_option("--values", values, "comma-separated grid of values");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "config error: " << e.what() << '\n';
    return exit_config;
  }

  try {
    if (*list_cmd) {
      for (const auto& s : scenario_library())
        std::cout << std::left << std::setw(22) << s.name << " T=" << std::setw(4) << s.default_T << "  " << s.summary << '\n';
      return exit_ok;
    }
    RunConfig c = resolve(f);
    if (*run_cmd || *verify_cmd) {
      RunArtifacts a = *run_cmd ? run(c) : verify(c);
      if (*verify_cmd && !a.checks.empty()) std::cout << verdict_table(a.checks);
      print_y0(a);
      try {
        write_artifacts(a, c.output);
      } catch (const std::exception& e) {
        throw ConfigError(std::string("cannot write outputs to ") + c.output + ": " + e.what());
      }
      (a.exit_code == exit_ok ? std::cout : std::cerr) << a.message << '\n';
      return a.exit_code;
    }
    if (*sweep_cmd) {
      SweepResult r = sweep(c, over, parse_values(values));
      write_text(c.output, "sweep.csv", r.csv);
      std::cout << r.csv;
      if (over == "N")
        std::cout << "slope of log residual vs log dt: " << r.residual_slope
                  << "\nslope of log Y_0 error vs log dt: " << r.error_slope << '\n';
      return r.exit_code;
    }
    if (*oracle_cmd) {
      auto j = oracle_reference(c);
      write_text(c.output, "oracle.json", j.dump(2) + "\n");
      std::cout << j.dump(2) << '\n';
      return exit_ok;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return exit_config;
  } catch (const SolverError& e) {
    std::cerr << "solver failure: " << e.what() << '\n';
    return exit_divergence;
  } catch (const std::exception& e) {
    std::cerr << "solver failure: " << e.what() << '\n';
    return exit_divergence;
  }
  return exit_config;
}

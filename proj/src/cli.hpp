#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <string>

#include "sbt/options.hpp"
#include "sbt/simulate.hpp"
#include "sbt/strategies.hpp"
#include "sbt/system.hpp"

namespace sbt::cli {

/// Exit codes shared by every subcommand.
enum ExitCode { kOk = 0, kInputError = 2, kNumericalError = 3, kInternalError = 4 };

struct StrategyConfig {
  std::string strategy = "approach2";  // "approach1" | "approach2"
  int r = 1;
  int r_bold = 1;
  double gamma = 1.0;
  double gamma_tilde = 1.0;
  AuxiliarySpec aux;  // approach1 only
};

struct RunConfig {
  std::filesystem::path system_path;
  std::filesystem::path out_dir = "out";
  StrategyConfig strategy;
  SimConfig sim;
  ControlSignal control;
  Eigen::VectorXd v;  // empty = ones(d)
  SolverOptions tol;
  int verbosity = 1;
};

/// Reads the JSON config file; missing blocks keep their defaults.
RunConfig load_run_config(const std::filesystem::path& path);

/// Stability verdict, Gramian diagnostics, HSV tables (sigma and theta).
int cmd_analyze(const RunConfig& cfg);

/// Reduced model files plus the bound report for the configured strategy.
int cmd_reduce(const RunConfig& cfg);

/// Monte Carlo summary of the system output (CSV of per-time mean/variance).
int cmd_simulate(const RunConfig& cfg);

/// Coupled Monte Carlo against the bound, energy-estimate margins and the
/// Ito identity check; writes a machine-readable verdict file.
int cmd_verify(const RunConfig& cfg);

/// Maps exceptions from fn() onto exit codes, reporting to stderr.
int run_guarded(const std::string& what, int (*fn)(const RunConfig&),
                const RunConfig& cfg);

}  // namespace sbt::cli

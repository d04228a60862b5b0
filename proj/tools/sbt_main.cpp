// Command-line front end: analyze, reduce, simulate, verify.

#include <CLI11.hpp>
#include <iostream>
#include <optional>
#include <sstream>

#include "cli.hpp"
#include "sbt/errors.hpp"

#ifndef SBT_VERSION
#define SBT_VERSION "0.0.0"
#endif

namespace {

struct Flags {
  std::optional<std::string> system, config, out, strategy, aux;
  std::optional<uint64_t> seed;
  std::optional<double> dt, T, gamma, gamma_tilde, alpha;
  std::optional<int> traj, r, r_init, threads;
  std::optional<std::string> gammas;  // comma-separated list
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--system", f.system, "system JSON file");
  cmd->add_option("--config", f.config, "run configuration JSON file");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--seed", f.seed, "master seed for Monte Carlo runs");
  cmd->add_option("--dt", f.dt, "time step");
  cmd->add_option("--T", f.T, "terminal time");
  cmd->add_option("--traj", f.traj, "number of trajectories");
  cmd->add_option("--threads", f.threads, "worker threads (0 = hardware)");
  cmd->add_option("--strategy", f.strategy, "approach1 | approach2")
      ->check(CLI::IsMember({"approach1", "approach2"}));
  cmd->add_option("--r", f.r, "reduced order of the control dynamics");
  cmd->add_option("--r-init", f.r_init, "reduced order of the initial-state dynamics");
  cmd->add_option("--gamma", f.gamma, "gamma of the reachability operator U");
  cmd->add_option("--gamma-tilde", f.gamma_tilde, "gamma of the transformed system");
  cmd->add_option("--aux", f.aux, "auxiliary kind for approach1")
      ->check(CLI::IsMember({"zero", "scalar"}));
  cmd->add_option("--alpha", f.alpha, "alpha of the scalar auxiliary family");
  cmd->add_option("--gammas", f.gammas,
                  "comma-separated gamma_i of the scalar auxiliary family");
}

sbt::cli::RunConfig build_config(const Flags& f) {
  sbt::cli::RunConfig cfg;
  if (f.config) cfg = sbt::cli::load_run_config(*f.config);
  if (f.system) cfg.system_path = *f.system;
  if (f.out) cfg.out_dir = *f.out;
  if (f.seed) cfg.sim.master_seed = *f.seed;
  if (f.dt) cfg.sim.horizon.dt = *f.dt;
  if (f.T) cfg.sim.horizon.T = *f.T;
  if (f.traj) cfg.sim.n_traj = *f.traj;
  if (f.threads) cfg.sim.threads = *f.threads;
  if (f.strategy) cfg.strategy.strategy = *f.strategy;
  if (f.r) cfg.strategy.r = *f.r;
  if (f.r_init) cfg.strategy.r_bold = *f.r_init;
  if (f.gamma) cfg.strategy.gamma = *f.gamma;
  if (f.gamma_tilde) cfg.strategy.gamma_tilde = *f.gamma_tilde;
  if (f.aux) {
    if (*f.aux == "zero") {
      cfg.strategy.aux = sbt::AuxiliarySpec::zero_kind();
    } else {
      Eigen::VectorXd g;
      if (f.gammas) {
        std::vector<double> parsed;
        std::stringstream ss(*f.gammas);
        std::string tok;
        while (std::getline(ss, tok, ',')) parsed.push_back(std::stod(tok));
        g = Eigen::Map<Eigen::VectorXd>(parsed.data(), parsed.size());
      }
      cfg.strategy.aux =
          sbt::AuxiliarySpec::scalar_kind(f.alpha.value_or(1.0), g);
    }
  }
  if (cfg.system_path.empty())
    throw sbt::ParseError("no system file given (--system or config)");
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Balanced truncation for stochastic systems with non-zero "
               "initial states"};
  app.set_version_flag("--version", SBT_VERSION);
  app.require_subcommand(1);

  Flags flags;
  auto* analyze = app.add_subcommand("analyze",
                                     "stability, Gramian diagnostics, HSV tables");
  auto* reduce = app.add_subcommand("reduce", "reduced models plus bound report");
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo output summary");
  auto* verify = app.add_subcommand("verify",
                                    "Monte Carlo error vs bound, energy and Ito checks");
  for (auto* cmd : {analyze, reduce, simulate, verify}) add_common(cmd, flags);

  CLI11_PARSE(app, argc, argv);

  sbt::cli::RunConfig cfg;
  try {
    cfg = build_config(flags);
  } catch (const std::exception& e) {
    std::cerr << "sbt: " << e.what() << "\n";
    return sbt::cli::kInputError;
  }

  if (analyze->parsed())
    return sbt::cli::run_guarded("analyze", sbt::cli::cmd_analyze, cfg);
  if (reduce->parsed())
    return sbt::cli::run_guarded("reduce", sbt::cli::cmd_reduce, cfg);
  if (simulate->parsed())
    return sbt::cli::run_guarded("simulate", sbt::cli::cmd_simulate, cfg);
  return sbt::cli::run_guarded("verify", sbt::cli::cmd_verify, cfg);
}

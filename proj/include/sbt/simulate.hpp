#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "sbt/strategies.hpp"
#include "sbt/system.hpp"

namespace sbt {

/// Euler-Maruyama Monte Carlo configuration. Reproducibility contract:
/// identical inputs including master_seed give bit-identical estimates for
/// any thread count (per-trajectory RNG substreams, order-fixed reduction).
struct SimConfig {
  HorizonConfig horizon{};
  int n_traj = 10000;
  uint64_t master_seed = 0;
  double work_budget = 2e9;  ///< cap on steps * n_traj
  int threads = 0;           ///< 0 = hardware concurrency
};

/// Monte Carlo estimate of a squared L^2_T norm.
struct ErrorEstimate {
  double mean_sq = 0.0;    ///< estimate of E int_0^T ||.||^2 dt
  double std_error = 0.0;  ///< standard error of the per-trajectory values
  double rms = 0.0;        ///< sqrt(mean_sq)
  int n_traj = 0;
};

/// True squared error is below bound^2; accept the MC estimate at 3 sigma.
inline bool bound_holds(const ErrorEstimate& e, double bound) {
  return e.mean_sq <= bound * bound + 3.0 * e.std_error;
}

/// Per-trajectory output (and optionally state) grids, (steps+1) x p rows.
/// Meant for small runs; the statistics entry points below stream instead.
struct SimResult {
  std::vector<Eigen::MatrixXd> y;
  std::vector<Eigen::MatrixXd> x;
};

SimResult simulate(const StochasticSystem& sys, const ControlSignal& u,
                   const Eigen::VectorXd& v, const SimConfig& cfg,
                   bool keep_states = false);

/// Streaming per-grid-point moments of the output plus per-trajectory
/// terminal outputs (n_traj x p), enough for moment tests at 10^4 trajectories.
struct SimSummary {
  Eigen::MatrixXd mean_y;      ///< (steps+1) x p
  Eigen::MatrixXd var_y;       ///< (steps+1) x p, sample variance
  Eigen::MatrixXd terminal_y;  ///< n_traj x p
};

SimSummary simulate_summary(const StochasticSystem& sys, const ControlSignal& u,
                            const Eigen::VectorXd& v, const SimConfig& cfg);

/// ||y - y_r||^2_{L^2_T} with common random numbers: full and reduced systems
/// step on identical Wiener increments.
ErrorEstimate coupled_error(const StochasticSystem& sys, const ControlReduction& red,
                            const ControlSignal& u, const Eigen::VectorXd& v,
                            const SimConfig& cfg);

/// Same full trajectories compared against several truncation orders at once.
std::vector<ErrorEstimate> coupled_error_sweep(const StochasticSystem& sys,
                                               const std::vector<ControlReduction>& reds,
                                               const ControlSignal& u,
                                               const Eigen::VectorXd& v,
                                               const SimConfig& cfg);

/// ||y - y~_r||^2 for the auxiliary-transformation route; the extended input
/// u0 is generated exactly from the accumulated shared increments.
ErrorEstimate coupled_error(const StochasticSystem& sys, const Approach1Result& res,
                            const ControlSignal& u, const Eigen::VectorXd& v,
                            const SimConfig& cfg);

/// ||y - y_r - y_r(init)||^2 for the split route.
ErrorEstimate coupled_error(const StochasticSystem& sys, const Approach2Result& res,
                            const ControlSignal& u, const Eigen::VectorXd& v,
                            const SimConfig& cfg);

/// Exact left-endpoint quadrature of a deterministic signal (std_error 0).
ErrorEstimate l2_norm_sq(const ControlSignal& u, const HorizonConfig& horizon, int m);

/// Per-trajectory quadrature of stored output grids.
ErrorEstimate mc_l2_norm(const std::vector<Eigen::MatrixXd>& grids,
                         const HorizonConfig& horizon);

/// One eigen-direction of the reachability energy estimate
/// sup_t E<x(t), p_k>^2 <= lambda_k gamma ||u||^2 (zero initial state).
struct EnergyMargin {
  double lambda = 0.0;        ///< eigenvalue of P
  double bound = 0.0;         ///< lambda * gamma * ||u||^2
  double sup_estimate = 0.0;  ///< sup over the grid of the MC estimate
  double std_error = 0.0;     ///< standard error at the argmax grid point
  double margin = 0.0;        ///< bound - sup_estimate
};

std::vector<EnergyMargin> check_energy_estimate(const StochasticSystem& sys,
                                                const GramianReport& P,
                                                const ControlSignal& u,
                                                const SimConfig& cfg);

/// Statistical check of the Ito product-rule identity
/// d/dt E[x^T x] = 2 E[x^T(Ax+Bu)] + sum_ij E[(N_i x+M_i u)^T (N_j x+M_j u)] k_ij
/// integrated over [0, T] on the same trajectories.
struct ItoCheck {
  double lhs = 0.0;          ///< E||x(T)||^2 - E||x(0)||^2
  double rhs = 0.0;          ///< integrated right-hand side
  double discrepancy = 0.0;  ///< lhs - rhs
  double std_error = 0.0;    ///< standard error of the per-trajectory gap
};

ItoCheck check_ito_lemma(const StochasticSystem& sys, const ControlSignal& u,
                         const Eigen::VectorXd& v, const SimConfig& cfg);

namespace detail {

/// splitmix64-based per-trajectory substream seed.
uint64_t substream_seed(uint64_t master_seed, uint64_t trajectory_index);

/// Factor F with F F^T = K: Cholesky when positive definite, symmetric
/// eigenvalue square root when only semidefinite.
Eigen::MatrixXd noise_factor(const Eigen::MatrixXd& K);

}  // namespace detail

}  // namespace sbt

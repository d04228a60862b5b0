#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "sbt/options.hpp"
#include "sbt/system.hpp"

namespace sbt {

enum class GramianRole {
  reach_lmi,    ///< P > 0 with U(P^-1) > 0 and L(P^-1) + S U^-1 S^T <= 0
  obs,          ///< Q >= 0 with L(Q) + C^T C <= 0
  reach_type1,  ///< P >= 0 solving L*(P) + X0 X0^T = 0
  obs_eq,       ///< Q >= 0 solving L(Q) + C^T C = 0
};

enum class GramianProvenance { epsilon_constructed, equation_solved, imported };

std::string to_string(GramianRole role);
GramianRole role_from_string(const std::string& s);

/// A Gramian plus how it was obtained and how well it satisfies its defining
/// conditions. Diagnostics hold raw min-eigenvalues / residuals keyed by
/// condition name; see verify_gramian.
struct GramianReport {
  Eigen::MatrixXd G;
  GramianRole role = GramianRole::obs_eq;
  GramianProvenance provenance = GramianProvenance::equation_solved;

  double gamma = 0.0;    ///< reach_lmi only
  double epsilon = 0.0;  ///< epsilon_constructed only: final scaled epsilon
  Eigen::MatrixXd base_X;  ///< epsilon_constructed only: solution of L(X) = -Y
  bool eps_unconstrained = false;  ///< doubling hit eps_cap without infeasibility

  std::map<std::string, double> diagnostics;
};

/// Solves L*(P) + X0 X0^T = 0 by a dense Kronecker solve. Requires a
/// mean-square stable system (the operator is singular otherwise).
GramianReport solve_type1_reach(const StochasticSystem& sys,
                                const SolverOptions& opts = {});

/// Solves L(Q) + C^T C = 0; the equation solution also satisfies the
/// observability inequality with equality.
GramianReport solve_obs_eq(const StochasticSystem& sys,
                           const SolverOptions& opts = {});

/// Constructive reachability Gramian for the controlled-diffusion inequality:
/// solve L(X) = -Y (Y = I by default), scale by the largest feasible epsilon
/// found by doubling plus bisection, back off by opts.safety and return
/// P = (safety * eps * X)^-1. Throws NumericalError when no epsilon down to
/// opts.eps_floor is feasible.
GramianReport solve_lmi_reach(const StochasticSystem& sys, double gamma,
                              const SolverOptions& opts = {});

/// Wraps an externally computed Gramian after verifying it satisfies the
/// conditions of the requested role; throws NumericalError with the failing
/// condition otherwise. reach_lmi imports need gamma.
GramianReport import_gramian(const StochasticSystem& sys, const Eigen::MatrixXd& G,
                             GramianRole role, std::optional<double> gamma = {},
                             const SolverOptions& opts = {});

/// Raw per-condition diagnostics:
///   all roles:    "min_eig_G"
///   reach_lmi:    "min_eig_U", "ineq_margin" (= min eig of -(L+S U^-1 S^T)),
///                 "schur_min_eig", "schur_agree" (1 when the block form and
///                 the direct condition give the same verdict at tol)
///   obs:          "lyap_margin" (= min eig of -(L(G)+C^T C))
///   reach_type1 / obs_eq: "residual_rel" (Frobenius, relative to the rhs)
std::map<std::string, double> verify_gramian(const StochasticSystem& sys,
                                             const GramianReport& report,
                                             double tol);

/// Pass/fail decision on verify_gramian output at the given tolerance.
bool gramian_ok(const std::map<std::string, double>& diagnostics, GramianRole role,
                double tol);

/// x0^T G x0 for an observability report; equals the expected output energy
/// E int ||C x(t;0,x0,0)||^2 dt when the report solves the equation exactly.
double output_energy(const StochasticSystem& sys, const GramianReport& q_report,
                     const Eigen::VectorXd& x0);

/// JSON import/export: object {role, gamma?, matrix}.
void save_gramian(const GramianReport& report, const std::filesystem::path& path);
GramianReport load_gramian(const StochasticSystem& sys,
                           const std::filesystem::path& path,
                           const SolverOptions& opts = {});

}  // namespace sbt

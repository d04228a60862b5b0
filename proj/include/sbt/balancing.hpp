#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sbt/gramians.hpp"
#include "sbt/system.hpp"

namespace sbt {

/// Which Gramian pair was balanced: the control pair (P, Q) of the
/// zero-initial-state theory or the initial-state pair of the uncontrolled one.
enum class PairKind { control, initial_state };

/// Simultaneous diagonalization T P T^T = T^-T Q T^-1 = diag(sigma) together
/// with the transformed coefficients. sigma is strictly positive, descending.
struct BalancedRealization {
  Eigen::MatrixXd Tmat;
  Eigen::MatrixXd Tinv;
  Eigen::VectorXd sigma;
  StochasticSystem sys_b;  ///< coefficients in balanced coordinates (K shared)
  PairKind pair_kind = PairKind::control;
};

struct BalanceOptions {
  /// Gramians count as positive definite when min_eig > pd_tol * max_eig.
  double pd_tol = 1e-12;
  /// Explicit opt-in: add delta = 1e-10 * trace(Q)/n to Q when it fails the
  /// definiteness threshold. Never applied silently.
  bool ridge_q = false;
};

/// Balancing transformation T = Sigma^(1/2) U^T L_P^-1 from the Cholesky
/// factor P = L_P L_P^T and the spectral factorization L_P^T Q L_P =
/// U Sigma^2 U^T. Both Gramians must be positive definite.
BalancedRealization balance(const StochasticSystem& sys, const GramianReport& P,
                            const GramianReport& Q, const BalanceOptions& opts = {});

/// Hankel singular values sqrt(lambda_i(P Q)), descending. Works for
/// semidefinite inputs; throws NumericalError if an eigenvalue of the
/// symmetrized product drops below -1e-10 relative.
Eigen::VectorXd hsv(const Eigen::MatrixXd& P, const Eigen::MatrixXd& Q);
Eigen::VectorXd hsv(const GramianReport& P, const GramianReport& Q);

/// Truncated leading blocks of a balanced realization.
struct ReducedModel {
  int r = 0;
  PairKind pair_kind = PairKind::control;

  Eigen::MatrixXd A11;              ///< r x r
  std::vector<Eigen::MatrixXd> N11; ///< q blocks, r x r
  Eigen::MatrixXd C1;               ///< p x r
  Eigen::MatrixXd D;                ///< p x m (control kind; zero otherwise)

  std::optional<Eigen::MatrixXd> B1;   ///< r x m, control kind only
  std::vector<Eigen::MatrixXd> M1;     ///< r x m blocks, control kind only
  std::optional<Eigen::MatrixXd> X01;  ///< r x d, initial-state kind only

  Eigen::VectorXd sigma_kept;
  Eigen::VectorXd sigma_truncated;

  /// Set when the cut falls inside an HSV cluster
  /// (sigma_r - sigma_{r+1} < 1e-8 * sigma_1).
  bool cluster_warning = false;

  /// Simulatable system of order r; absent blocks become zeros, K is taken
  /// from the parent system.
  StochasticSystem to_system(const StochasticSystem& parent) const;
};

/// Leading-block truncation at order r (1 <= r <= n). r = n returns the
/// balanced full model with an empty truncated spectrum.
ReducedModel truncate(const BalancedRealization& bal, int r);

/// Evaluates the inherited reduced-Gramian conditions of a control-kind
/// balanced realization at order r: keys "min_eig_U1", "reach_margin"
/// (min eig of -(L11 + S1 U1^-1 S1^T)) and "obs_margin"
/// (min eig of -(L11(Sigma1) + C1^T C1)).
std::map<std::string, double> verify_reduced_gramian(const BalancedRealization& bal,
                                                     int r, double gamma);

/// HSV table as CSV (header "index,sigma").
void save_hsv_csv(const Eigen::VectorXd& sigma, const std::filesystem::path& path);

}  // namespace sbt

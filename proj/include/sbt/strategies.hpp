#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <vector>

#include "sbt/balancing.hpp"
#include "sbt/gramians.hpp"
#include "sbt/system.hpp"

namespace sbt {

/// Path generator plus L^2 energy for a user-supplied auxiliary input process.
/// The generator receives the grid time t and the accumulated Wiener state
/// w(t) (q-vector) and returns the r0 x d matrix u0(t). The energy is
/// E int_0^T ||u0(t)||_2^2 dt (spectral norm) for the horizon the bound is
/// evaluated on; it cannot be derived from the generator automatically.
struct CustomU0 {
  std::function<Eigen::MatrixXd(double t, const Eigen::VectorXd& w)> path;
  std::optional<double> energy;
};

/// Choice of auxiliary dynamics used to move a non-zero initial state into an
/// extended control input. zero: Atilde = Ntilde = 0 (constant u0 = I). scalar:
/// Atilde = -alpha I, Ntilde_i = gamma_i I (geometric-Brownian u0). custom:
/// explicit matrices with a user V0 and u0 descriptor.
struct AuxiliarySpec {
  enum class Kind { zero, scalar, custom };

  Kind kind = Kind::zero;

  // scalar kind
  double alpha = 0.0;
  Eigen::VectorXd gammas;  ///< length q

  // custom kind
  Eigen::MatrixXd Atilde;
  std::vector<Eigen::MatrixXd> Ntilde;
  Eigen::MatrixXd V0;  ///< n x r0, full column rank
  std::optional<CustomU0> u0;

  static AuxiliarySpec zero_kind();
  static AuxiliarySpec scalar_kind(double alpha, Eigen::VectorXd gammas);

  /// Subspace dimension r0: d for zero/scalar (V0 = X0), V0 columns otherwise.
  int r0(const StochasticSystem& sys) const;

  /// Effective V0 (X0 for zero/scalar kinds).
  Eigen::MatrixXd effective_V0(const StochasticSystem& sys) const;

  /// -2 alpha + sum_ij gamma_i gamma_j k_ij; only meaningful for scalar kind.
  double beta(const Eigen::MatrixXd& K) const;

  /// Throws ValidationError on dimension mismatch / rank deficiency.
  void check_compatible(const StochasticSystem& sys) const;
};

/// Zero-initial-state system with extended inputs:
/// B~ = [B | (A - A~)V0], M~_i = [M_i | (N_i - N~_i)V0], D~ = [D | C V0].
/// Sets *degenerate to true when every appended B~/M~ column vanishes
/// (auxiliary dynamics match the system exactly).
StochasticSystem build_transformed_system(const StochasticSystem& sys,
                                          const AuxiliarySpec& aux,
                                          bool* degenerate = nullptr);

/// E int_0^T ||u0(t)||_2^2 dt. zero kind: T. scalar kind: (e^(beta T) - 1)/beta
/// with the beta -> 0 limit T. custom kind: the user-supplied energy
/// (ValidationError when absent).
double u0_energy(const AuxiliarySpec& aux, const Eigen::MatrixXd& K, double T);

/// One run of the zero-initial-state pipeline: P by the epsilon construction,
/// Q by the observability equation, balance, truncate.
struct ControlReduction {
  GramianReport P;
  GramianReport Q;
  BalancedRealization bal;
  ReducedModel rom;
  double gamma = 1.0;
};

ControlReduction control_reduce(const StochasticSystem& sys, int r, double gamma,
                                const SolverOptions& opts = {});

/// Auxiliary-transformation route: reduce the transformed system.
struct Approach1Result {
  StochasticSystem transformed;
  AuxiliarySpec aux;
  double gamma_tilde = 1.0;
  Eigen::VectorXd sigma_tilde;  ///< HSVs of the transformed system
  ControlReduction reduction;
  bool degenerate_aux = false;  ///< appended input columns all zero
};

Approach1Result approach1_reduce(const StochasticSystem& sys, const AuxiliarySpec& aux,
                                 int r, double gamma_tilde,
                                 const SolverOptions& opts = {});

/// 2 gamma~^(1/2) (sum of truncated sigma~) sqrt(||u||^2 + E0 ||v||^2), where
/// u_l2norm = ||u||_{L^2_T}, v_2norm = ||v||_2 and u0_energy_value = E0.
double approach1_bound(const Approach1Result& res, double u_l2norm, double v_2norm,
                       double u0_energy_value);

/// A-posteriori machinery of the uncontrolled theory: P_r and Phat solve
///   A11 P_r + P_r A11^T + sum_ij N_i11 P_r N_j11^T k_ij = -X01 X01^T
///   A_b Phat + Phat A11^T + sum_ij N_ib Phat N_j11^T k_ij = -X0b X01^T
/// and W = B2 B2^T + 2 Phat_2 A21^T
///       + sum_ij (2 [N_i21 N_i22] Phat - N_i21 P_r) N_j21^T k_ij
/// with B2 read as X0_2 (trailing block of the balanced initial-state map).
struct WResult {
  Eigen::MatrixXd W;     ///< (n - r) x (n - r)
  Eigen::MatrixXd P_r;   ///< r x r
  Eigen::MatrixXd Phat;  ///< n x r
};

WResult compute_W(const BalancedRealization& bal_init, int r_bold,
                  const SolverOptions& opts = {});

/// Split route: control ROM on the zero-initial-state system plus an
/// initial-state ROM on the uncontrolled one; outputs add.
struct Approach2Result {
  ControlReduction control;     ///< on sys with X0 = 0
  GramianReport P_init;         ///< type-1 reachability Gramian
  GramianReport Q_init;         ///< observability equation Gramian
  BalancedRealization bal_init;
  ReducedModel rom_init;        ///< carries the reduced initial map X01
  Eigen::VectorXd sigma;        ///< control HSVs
  Eigen::VectorXd theta;        ///< initial-state HSVs
  WResult w;
  double gamma = 1.0;
};

Approach2Result approach2_reduce(const StochasticSystem& sys, int r, int r_bold,
                                 double gamma, const SolverOptions& opts = {});

/// tr(Theta_2 W) for an Approach2Result (Theta_2 = diag of truncated theta).
double theta2_w_trace(const Approach2Result& res);

struct Approach2Bound {
  double total = 0.0;
  double apriori_term = 0.0;      ///< 2 gamma^(1/2) sum sigma_k ||u||
  double aposteriori_term = 0.0;  ///< (tr(Theta_2 W))^(1/2) ||v||
  bool trace_clamped = false;     ///< negative-within-tolerance trace zeroed
};

/// Throws NumericalError when tr(Theta_2 W) is materially negative.
Approach2Bound approach2_bound(const Approach2Result& res, double u_l2norm,
                               double v_2norm);

}  // namespace sbt

#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <string>
#include <vector>

#include "sbt/options.hpp"

namespace sbt {

/// Linear SDE with controlled drift and diffusion,
///
///   dx = (A x + B u) dt + sum_i (N_i x + M_i u) dw_i,   x(0) = X0 v,
///   y  = C x + D u,
///
/// driven by a q-dimensional Wiener process with covariance E[w(t)w(t)^T] = K t.
/// The deterministic case is encoded as q = 1 with N = M = 0, never as q = 0,
/// so the i,j noise sums stay uniform.
struct StochasticSystem {
  int n = 0;  ///< state dimension
  int m = 0;  ///< input dimension
  int p = 0;  ///< output dimension
  int q = 0;  ///< number of noise channels
  int d = 0;  ///< columns of the initial-state map X0

  Eigen::MatrixXd A;   ///< n x n drift
  Eigen::MatrixXd B;   ///< n x m control-in-drift
  Eigen::MatrixXd C;   ///< p x n output map
  Eigen::MatrixXd D;   ///< p x m feedthrough
  Eigen::MatrixXd X0;  ///< n x d initial-state map
  Eigen::MatrixXd K;   ///< q x q Wiener covariance

  std::vector<Eigen::MatrixXd> N;  ///< q matrices, n x n noise drift
  std::vector<Eigen::MatrixXd> M;  ///< q matrices, n x m noise control

  std::string label;

  /// All-zero system of the given dimensions (valid, marginally stable at best).
  static StochasticSystem zeros(int n, int m, int p, int q, int d);

  /// Copy with the initial-state map zeroed out.
  StochasticSystem with_zero_initial_state() const;
};

/// Convenience builder for 1x1 systems (every block scalar).
StochasticSystem scalar_system(double a, double b, double c, double dd, double nn,
                               double mm, double x0, double k = 1.0);

/// Checks every structural invariant. Violations come back as messages naming
/// the offending field; an empty list means the system is well-formed.
std::vector<std::string> validate(const StochasticSystem& sys);

/// Throws ValidationError with the joined report when validate() is non-empty.
void require_valid(const StochasticSystem& sys);

struct StabilityReport {
  bool stable = false;
  double spectral_abscissa = 0.0;  ///< max real part of eig(vectorized L*)
};

/// Mean-square asymptotic stability test via the spectral abscissa of the
/// n^2 x n^2 vectorized L* operator. Throws CapacityError above opts.n_cap.
StabilityReport stability_check(const StochasticSystem& sys,
                                const SolverOptions& opts = {});

/// JSON round trip at full double precision. Load reads shapes as found in the
/// file; dimensional consistency is the job of validate().
StochasticSystem load_system(const std::filesystem::path& path);
void save_system(const StochasticSystem& sys, const std::filesystem::path& path);

/// Simulation horizon [0, T] with fixed step size.
struct HorizonConfig {
  double T = 5.0;
  double dt = 1e-3;

  /// Number of steps; throws ValidationError unless T/dt is integral within
  /// 1e-9 relative and at least 1.
  int steps() const;
};

/// Deterministic control signal on the simulation grid, sampled at left
/// endpoints (the Ito convention used by the integrator).
struct ControlSignal {
  enum class Kind { zero, grid, step, sine };

  Kind kind = Kind::zero;
  Eigen::MatrixXd values;     ///< grid kind: steps x m
  Eigen::VectorXd amplitude;  ///< step/sine kinds
  double onset = 0.0;         ///< step kind: u(t) = amplitude for t >= onset
  double omega = 1.0;         ///< sine kind:  u(t) = amplitude * sin(omega t)

  static ControlSignal zero();
  static ControlSignal grid(Eigen::MatrixXd values);
  static ControlSignal step(Eigen::VectorXd amplitude, double onset = 0.0);
  static ControlSignal sine(Eigen::VectorXd amplitude, double omega);

  /// Value at grid node k (time t = k*dt). Grid signals clamp to their last
  /// row at k = steps, which only affects output export, never quadrature.
  Eigen::VectorXd at(int k, const HorizonConfig& horizon, int m) const;

  /// Throws ValidationError if the signal cannot drive an m-input system on
  /// the given horizon (wrong grid length or amplitude size).
  void check_compatible(const HorizonConfig& horizon, int m) const;
};

}  // namespace sbt

#pragma once

#include <Eigen/Dense>

namespace sbt {

/// Numerical knobs shared by the dense solvers. Defaults target desk-scale
/// problems (n of a few dozen at most); everything fails loudly beyond the caps.
struct SolverOptions {
  /// Dense Kronecker work (n^2 x n^2 matrices) is refused for n above this.
  int n_cap = 60;

  /// A system counts as mean-square stable when the spectral abscissa of the
  /// vectorized L* operator is below -stability_tol.
  double stability_tol = 1e-10;

  /// Relative tolerance for semidefiniteness checks.
  double psd_tol = 1e-8;

  /// Relative residual accepted for Gramian equation solves.
  double eq_residual_tol = 1e-8;

  /// Bisection depth for the feasibility search of the epsilon construction.
  int bisect_steps = 60;

  /// Upper cap for epsilon (reported as unconstrained when reached).
  double eps_cap = 1e6;

  /// Give up when no feasible epsilon is found above this.
  double eps_floor = 1e-12;

  /// Back-off factor applied to the bisected feasibility boundary.
  double safety = 0.9;

  /// Right-hand side Y > 0 for the base solve L(X) = -Y of the epsilon
  /// construction. Empty means identity.
  Eigen::MatrixXd lyap_rhs;
};

}  // namespace sbt

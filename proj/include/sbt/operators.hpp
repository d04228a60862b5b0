#pragma once

#include <Eigen/Dense>

#include "sbt/options.hpp"
#include "sbt/system.hpp"

namespace sbt {

// Matrix operators underlying every Gramian in this library:
//   L(X)  = A^T X + X A + sum_ij N_i^T X N_j k_ij
//   L*(X) = A X + X A^T + sum_ij N_i X N_j^T k_ij
//   S(X)  = X B + sum_ij N_i^T X M_j k_ij
//   U(X)  = gamma I - sum_ij M_i^T X M_j k_ij
// Symmetric results are explicitly symmetrized; downstream eigensolves rely
// on that.

Eigen::MatrixXd op_L(const StochasticSystem& sys, const Eigen::MatrixXd& X);
Eigen::MatrixXd op_Lstar(const StochasticSystem& sys, const Eigen::MatrixXd& X);
Eigen::MatrixXd op_S(const StochasticSystem& sys, const Eigen::MatrixXd& X);
Eigen::MatrixXd op_U(const StochasticSystem& sys, const Eigen::MatrixXd& X,
                     double gamma);

enum class OperatorKind { L, Lstar };

/// Dense n^2 x n^2 matrix acting on column-stacked vec(X); the L kind is the
/// transpose of the Lstar kind. Convention: vec(A X B) = (B^T kron A) vec(X).
struct OperatorMatrix {
  OperatorKind kind;
  Eigen::MatrixXd mat;
};

/// Throws CapacityError for n above opts.n_cap.
OperatorMatrix kron_matrix(const StochasticSystem& sys, OperatorKind kind,
                           const SolverOptions& opts = {});

/// Plain Kronecker product (column-stacking convention).
Eigen::MatrixXd kron(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B);

/// Column-stacked vectorization and its inverse.
Eigen::VectorXd vec(const Eigen::MatrixXd& X);
Eigen::MatrixXd unvec(const Eigen::VectorXd& v, int rows, int cols);

struct PsdReport {
  bool is_psd = false;
  double min_eig = 0.0;
  double max_eig = 0.0;
};

/// X (symmetric) is PSD within tol when min_eig >= -tol * max(1, max_eig).
PsdReport psd_check(const Eigen::MatrixXd& X, double tol);

/// (X + X^T) / 2
Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& X);

/// sum_ij k_ij lhs_i^T X rhs_j for the stacked lists; the workhorse of the
/// four operators. Uses the stacked form lhs^T (K kron X) rhs for q > 2 and a
/// plain double loop otherwise.
Eigen::MatrixXd noise_quad(const Eigen::MatrixXd& K,
                           const std::vector<Eigen::MatrixXd>& lhs,
                           const Eigen::MatrixXd& X,
                           const std::vector<Eigen::MatrixXd>& rhs);

}  // namespace sbt

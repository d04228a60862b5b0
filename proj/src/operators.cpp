#include "sbt/operators.hpp"

#include <Eigen/Eigenvalues>

#include "sbt/errors.hpp"

namespace sbt {

Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& X) {
  return 0.5 * (X + X.transpose());
}

Eigen::MatrixXd kron(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  Eigen::MatrixXd out(A.rows() * B.rows(), A.cols() * B.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < A.cols(); ++j)
      out.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
  return out;
}

Eigen::VectorXd vec(const Eigen::MatrixXd& X) {
  return Eigen::Map<const Eigen::VectorXd>(X.data(), X.size());
}

Eigen::MatrixXd unvec(const Eigen::VectorXd& v, int rows, int cols) {
  return Eigen::Map<const Eigen::MatrixXd>(v.data(), rows, cols);
}

Eigen::MatrixXd noise_quad(const Eigen::MatrixXd& K,
                           const std::vector<Eigen::MatrixXd>& lhs,
                           const Eigen::MatrixXd& X,
                           const std::vector<Eigen::MatrixXd>& rhs) {
  const int q = static_cast<int>(lhs.size());
  if (q == 0 || static_cast<int>(rhs.size()) != q || K.rows() != q || K.cols() != q)
    throw ValidationError("noise_quad: inconsistent noise term counts");
  if (q <= 2) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(lhs[0].cols(), rhs[0].cols());
    for (int i = 0; i < q; ++i)
      for (int j = 0; j < q; ++j)
        if (K(i, j) != 0.0)
          out.noalias() += K(i, j) * (lhs[i].transpose() * X * rhs[j]);
    return out;
  }
  // Stacked form lhs^T (K kron X) rhs, cache-friendlier for larger q.
  const auto lr = lhs[0].rows(), lc = lhs[0].cols();
  const auto rr = rhs[0].rows(), rc = rhs[0].cols();
  Eigen::MatrixXd L(q * lr, lc), R(q * rr, rc);
  for (int i = 0; i < q; ++i) {
    L.middleRows(i * lr, lr) = lhs[i];
    R.middleRows(i * rr, rr) = rhs[i];
  }
  return L.transpose() * kron(K, X) * R;
}

Eigen::MatrixXd op_L(const StochasticSystem& sys, const Eigen::MatrixXd& X) {
  if (X.rows() != sys.n || X.cols() != sys.n)
    throw ValidationError("op_L: X must be n x n");
  Eigen::MatrixXd r = sys.A.transpose() * X + X * sys.A;
  r.noalias() += noise_quad(sys.K, sys.N, X, sys.N);
  return symmetrize(r);
}

Eigen::MatrixXd op_Lstar(const StochasticSystem& sys, const Eigen::MatrixXd& X) {
  if (X.rows() != sys.n || X.cols() != sys.n)
    throw ValidationError("op_Lstar: X must be n x n");
  Eigen::MatrixXd r = sys.A * X + X * sys.A.transpose();
  std::vector<Eigen::MatrixXd> Nt(sys.N.size());
  for (size_t i = 0; i < sys.N.size(); ++i) Nt[i] = sys.N[i].transpose();
  r.noalias() += noise_quad(sys.K, Nt, X, Nt);
  return symmetrize(r);
}

Eigen::MatrixXd op_S(const StochasticSystem& sys, const Eigen::MatrixXd& X) {
  if (X.rows() != sys.n || X.cols() != sys.n)
    throw ValidationError("op_S: X must be n x n");
  Eigen::MatrixXd r = X * sys.B;
  r.noalias() += noise_quad(sys.K, sys.N, X, sys.M);
  return r;
}

Eigen::MatrixXd op_U(const StochasticSystem& sys, const Eigen::MatrixXd& X,
                     double gamma) {
  if (X.rows() != sys.n || X.cols() != sys.n)
    throw ValidationError("op_U: X must be n x n");
  if (!(gamma > 0.0)) throw ValidationError("op_U: gamma must be positive");
  const int m = sys.m;
  Eigen::MatrixXd r = gamma * Eigen::MatrixXd::Identity(m, m);
  r.noalias() -= noise_quad(sys.K, sys.M, X, sys.M);
  return symmetrize(r);
}

OperatorMatrix kron_matrix(const StochasticSystem& sys, OperatorKind kind,
                           const SolverOptions& opts) {
  const int n = sys.n;
  if (n > opts.n_cap)
    throw CapacityError("kron_matrix: n = " + std::to_string(n) +
                        " exceeds dense cap " + std::to_string(opts.n_cap));
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
  // vec(L*(X)) = (I kron A + A kron I + sum_ij k_ij N_j kron N_i) vec(X)
  Eigen::MatrixXd mat = kron(I, sys.A) + kron(sys.A, I);
  for (int i = 0; i < sys.q; ++i)
    for (int j = 0; j < sys.q; ++j)
      if (sys.K(i, j) != 0.0) mat.noalias() += sys.K(i, j) * kron(sys.N[j], sys.N[i]);
  if (kind == OperatorKind::L) mat.transposeInPlace();
  return OperatorMatrix{kind, std::move(mat)};
}

PsdReport psd_check(const Eigen::MatrixXd& X, double tol) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(X),
                                                    Eigen::EigenvaluesOnly);
  PsdReport rep;
  rep.min_eig = es.eigenvalues().minCoeff();
  rep.max_eig = es.eigenvalues().maxCoeff();
  rep.is_psd = rep.min_eig >= -tol * std::max(1.0, rep.max_eig);
  return rep;
}

}  // namespace sbt

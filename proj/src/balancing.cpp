#include "sbt/balancing.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json_util.hpp"
#include "sbt/errors.hpp"
#include "sbt/operators.hpp"

namespace sbt {

namespace {

/// Eigendecomposition with descending eigenvalues and a deterministic sign
/// convention: first component of each eigenvector above 1e-12 in magnitude
/// is made positive.
void eig_descending(const Eigen::MatrixXd& S, Eigen::VectorXd& vals,
                    Eigen::MatrixXd& vecs) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(S));
  if (es.info() != Eigen::Success)
    throw NumericalError("eigendecomposition failed");
  const auto n = S.rows();
  vals.resize(n);
  vecs.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    vals(i) = es.eigenvalues()(n - 1 - i);
    vecs.col(i) = es.eigenvectors().col(n - 1 - i);
    for (Eigen::Index k = 0; k < n; ++k) {
      if (std::abs(vecs(k, i)) > 1e-12) {
        if (vecs(k, i) < 0.0) vecs.col(i) = -vecs.col(i);
        break;
      }
    }
  }
}

void require_pd(const Eigen::MatrixXd& G, double pd_tol, const char* name,
                const char* hint) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(G),
                                                    Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (!(lo > pd_tol * std::max(0.0, hi))) {
    std::ostringstream os;
    os << name << " is not positive definite (min eig " << lo << ", max eig " << hi
       << ")";
    if (hint && *hint) os << "; " << hint;
    throw NumericalError(os.str());
  }
}

}  // namespace

Eigen::VectorXd hsv(const Eigen::MatrixXd& P, const Eigen::MatrixXd& Q) {
  if (P.rows() != P.cols() || Q.rows() != Q.cols() || P.rows() != Q.rows())
    throw ValidationError("hsv: P and Q must be square of equal size");
  // lambda(PQ) = lambda(P^(1/2) Q P^(1/2)), symmetric and PSD-safe.
  Eigen::VectorXd pvals;
  Eigen::MatrixXd pvecs;
  eig_descending(P, pvals, pvecs);
  Eigen::VectorXd sq = pvals.cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd Phalf = pvecs * sq.asDiagonal() * pvecs.transpose();
  const Eigen::MatrixXd S = symmetrize(Phalf * Q * Phalf);
  Eigen::VectorXd svals;
  Eigen::MatrixXd svecs;
  eig_descending(S, svals, svecs);
  const double scale = std::max(1.0, svals.cwiseAbs().maxCoeff());
  if (svals.minCoeff() < -1e-10 * scale)
    throw NumericalError("hsv: eigenvalue of P Q below -1e-10 relative (" +
                         std::to_string(svals.minCoeff()) + ")");
  return svals.cwiseMax(0.0).cwiseSqrt();
}

Eigen::VectorXd hsv(const GramianReport& P, const GramianReport& Q) {
  return hsv(P.G, Q.G);
}

BalancedRealization balance(const StochasticSystem& sys, const GramianReport& P,
                            const GramianReport& Q, const BalanceOptions& opts) {
  require_valid(sys);
  if (P.G.rows() != sys.n || Q.G.rows() != sys.n)
    throw ValidationError("balance: Gramian sizes must match the system");

  require_pd(P.G, opts.pd_tol, "P", "");
  Eigen::MatrixXd Qmat = symmetrize(Q.G);
  {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Qmat, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    if (!(lo > opts.pd_tol * std::max(0.0, hi))) {
      if (!opts.ridge_q)
        throw NumericalError(
            "Q is not positive definite (min eig " + std::to_string(lo) +
            "); enable ridge_q to regularize explicitly");
      Qmat += (1e-10 * Qmat.trace() / sys.n) *
              Eigen::MatrixXd::Identity(sys.n, sys.n);
    }
  }

  // T = Sigma^(1/2) U^T L_P^(-1),  T^(-1) = L_P U Sigma^(-1/2),
  // from P = L_P L_P^T and L_P^T Q L_P = U Sigma^2 U^T.
  Eigen::LLT<Eigen::MatrixXd> llt(symmetrize(P.G));
  if (llt.info() != Eigen::Success)
    throw NumericalError("balance: Cholesky of P failed");
  const Eigen::MatrixXd Lp = llt.matrixL();
  const Eigen::MatrixXd W = symmetrize(Lp.transpose() * Qmat * Lp);
  Eigen::VectorXd sig2;
  Eigen::MatrixXd U;
  eig_descending(W, sig2, U);
  if (!(sig2.minCoeff() > 0.0))
    throw NumericalError("balance: P Q has a non-positive eigenvalue (" +
                         std::to_string(sig2.minCoeff()) + ")");
  const Eigen::VectorXd sigma = sig2.cwiseSqrt();
  const Eigen::VectorXd sroot = sigma.cwiseSqrt();

  BalancedRealization bal;
  bal.sigma = sigma;
  bal.Tmat = sroot.asDiagonal() * U.transpose() *
             Lp.triangularView<Eigen::Lower>().solve(
                 Eigen::MatrixXd::Identity(sys.n, sys.n));
  bal.Tinv = Lp * U * sroot.cwiseInverse().asDiagonal();
  bal.pair_kind = (P.role == GramianRole::reach_type1) ? PairKind::initial_state
                                                       : PairKind::control;

  StochasticSystem b = sys;
  b.A = bal.Tmat * sys.A * bal.Tinv;
  b.B = bal.Tmat * sys.B;
  b.C = sys.C * bal.Tinv;
  b.X0 = bal.Tmat * sys.X0;
  for (int i = 0; i < sys.q; ++i) {
    b.N[i] = bal.Tmat * sys.N[i] * bal.Tinv;
    b.M[i] = bal.Tmat * sys.M[i];
  }
  b.label = sys.label.empty() ? "balanced" : sys.label + " (balanced)";
  bal.sys_b = std::move(b);

  // Both diagonalization identities must hold before anything downstream
  // trusts sigma.
  const Eigen::MatrixXd Sd = sigma.asDiagonal();
  const double sscale = sigma.norm();
  const double ep = (bal.Tmat * P.G * bal.Tmat.transpose() - Sd).norm();
  const double eq =
      (bal.Tinv.transpose() * Qmat * bal.Tinv - Sd).norm();
  if (ep > 1e-8 * sscale || eq > 1e-8 * sscale)
    throw NumericalError("balance: diagonalization identities violated (" +
                         std::to_string(ep / sscale) + ", " +
                         std::to_string(eq / sscale) + " relative)");
  const double ei =
      (bal.Tmat * bal.Tinv - Eigen::MatrixXd::Identity(sys.n, sys.n)).norm();
  if (ei > 1e-10 * std::sqrt(static_cast<double>(sys.n)) * bal.Tmat.norm() *
               bal.Tinv.norm())
    throw NumericalError("balance: T * T^-1 deviates from identity");
  return bal;
}

ReducedModel truncate(const BalancedRealization& bal, int r) {
  const auto& b = bal.sys_b;
  if (r < 1 || r > b.n)
    throw ValidationError("truncate: order r must be in [1, n]");
  ReducedModel rom;
  rom.r = r;
  rom.pair_kind = bal.pair_kind;
  rom.A11 = b.A.topLeftCorner(r, r);
  rom.C1 = b.C.leftCols(r);
  for (int i = 0; i < b.q; ++i) rom.N11.push_back(b.N[i].topLeftCorner(r, r));
  if (bal.pair_kind == PairKind::control) {
    rom.D = b.D;
    rom.B1 = b.B.topRows(r);
    for (int i = 0; i < b.q; ++i) rom.M1.push_back(b.M[i].topRows(r));
  } else {
    rom.D = Eigen::MatrixXd::Zero(b.p, b.m);
    rom.X01 = b.X0.topRows(r);
  }
  rom.sigma_kept = bal.sigma.head(r);
  rom.sigma_truncated = bal.sigma.tail(b.n - r);
  if (r < b.n)
    rom.cluster_warning =
        bal.sigma(r - 1) - bal.sigma(r) < 1e-8 * bal.sigma(0);
  return rom;
}

StochasticSystem ReducedModel::to_system(const StochasticSystem& parent) const {
  StochasticSystem s = StochasticSystem::zeros(r, parent.m, parent.p, parent.q,
                                               parent.d);
  s.A = A11;
  s.C = C1;
  s.D = D;
  s.K = parent.K;
  s.N = N11;
  if (pair_kind == PairKind::control) {
    s.B = *B1;
    s.M = M1;
  } else {
    s.X0 = *X01;
  }
  s.label = parent.label.empty() ? "reduced" : parent.label + " (reduced)";
  return s;
}

std::map<std::string, double> verify_reduced_gramian(const BalancedRealization& bal,
                                                     int r, double gamma) {
  if (bal.pair_kind != PairKind::control)
    throw ValidationError("verify_reduced_gramian: control-kind realization required");
  if (r < 1 || r > bal.sys_b.n)
    throw ValidationError("verify_reduced_gramian: order out of range");
  const ReducedModel rom = truncate(bal, r);
  const StochasticSystem red = rom.to_system(bal.sys_b);
  const Eigen::VectorXd s1 = bal.sigma.head(r);
  const Eigen::MatrixXd Sigma1 = Eigen::MatrixXd(s1.asDiagonal());
  const Eigen::MatrixXd Sigma1inv = Eigen::MatrixXd(s1.cwiseInverse().asDiagonal());

  std::map<std::string, double> diag;
  const Eigen::MatrixXd U1 = op_U(red, Sigma1inv, gamma);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> esu(U1, Eigen::EigenvaluesOnly);
  diag["min_eig_U1"] = esu.eigenvalues().minCoeff();

  const Eigen::MatrixXd S1m = op_S(red, Sigma1inv);
  Eigen::MatrixXd R = op_L(red, Sigma1inv);
  R.noalias() += S1m * U1.ldlt().solve(S1m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> esr(symmetrize(-R),
                                                     Eigen::EigenvaluesOnly);
  diag["reach_margin"] = esr.eigenvalues().minCoeff();

  const Eigen::MatrixXd O = op_L(red, Sigma1) + red.C.transpose() * red.C;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eso(symmetrize(-O),
                                                     Eigen::EigenvaluesOnly);
  diag["obs_margin"] = eso.eigenvalues().minCoeff();
  return diag;
}

void save_hsv_csv(const Eigen::VectorXd& sigma, const std::filesystem::path& path) {
  std::ostringstream os;
  os.precision(17);
  os << "index,sigma\n";
  for (Eigen::Index i = 0; i < sigma.size(); ++i)
    os << (i + 1) << "," << sigma(i) << "\n";
  detail::write_file_atomic(path, os.str());
}

}  // namespace sbt

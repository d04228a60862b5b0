#include "sbt/strategies.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "sbt/errors.hpp"
#include "sbt/operators.hpp"

namespace sbt {

AuxiliarySpec AuxiliarySpec::zero_kind() { return AuxiliarySpec{}; }

AuxiliarySpec AuxiliarySpec::scalar_kind(double alpha, Eigen::VectorXd gammas) {
  AuxiliarySpec aux;
  aux.kind = Kind::scalar;
  aux.alpha = alpha;
  aux.gammas = std::move(gammas);
  return aux;
}

int AuxiliarySpec::r0(const StochasticSystem& sys) const {
  return kind == Kind::custom ? static_cast<int>(V0.cols()) : sys.d;
}

Eigen::MatrixXd AuxiliarySpec::effective_V0(const StochasticSystem& sys) const {
  return kind == Kind::custom ? V0 : sys.X0;
}

double AuxiliarySpec::beta(const Eigen::MatrixXd& K) const {
  return -2.0 * alpha + gammas.dot(K * gammas);
}

void AuxiliarySpec::check_compatible(const StochasticSystem& sys) const {
  switch (kind) {
    case Kind::zero:
      return;
    case Kind::scalar:
      if (gammas.size() != sys.q)
        throw ValidationError("auxiliary spec: gammas must have length q");
      return;
    case Kind::custom: {
      if (Atilde.rows() != sys.n || Atilde.cols() != sys.n)
        throw ValidationError("auxiliary spec: Atilde must be n x n");
      if (static_cast<int>(Ntilde.size()) != sys.q)
        throw ValidationError("auxiliary spec: Ntilde must hold q matrices");
      for (const auto& Nt : Ntilde)
        if (Nt.rows() != sys.n || Nt.cols() != sys.n)
          throw ValidationError("auxiliary spec: Ntilde blocks must be n x n");
      if (V0.rows() != sys.n || V0.cols() < 1)
        throw ValidationError("auxiliary spec: V0 must be n x r0 with r0 >= 1");
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(V0);
      if (qr.rank() < V0.cols())
        throw ValidationError("auxiliary spec: V0 must have full column rank");
      return;
    }
  }
}

StochasticSystem build_transformed_system(const StochasticSystem& sys,
                                          const AuxiliarySpec& aux,
                                          bool* degenerate) {
  require_valid(sys);
  aux.check_compatible(sys);
  const Eigen::MatrixXd V0 = aux.effective_V0(sys);
  const int r0 = static_cast<int>(V0.cols());

  Eigen::MatrixXd Atl;
  std::vector<Eigen::MatrixXd> Ntl(sys.q);
  switch (aux.kind) {
    case AuxiliarySpec::Kind::zero:
      Atl = Eigen::MatrixXd::Zero(sys.n, sys.n);
      for (auto& Nt : Ntl) Nt = Eigen::MatrixXd::Zero(sys.n, sys.n);
      break;
    case AuxiliarySpec::Kind::scalar:
      Atl = -aux.alpha * Eigen::MatrixXd::Identity(sys.n, sys.n);
      for (int i = 0; i < sys.q; ++i)
        Ntl[i] = aux.gammas(i) * Eigen::MatrixXd::Identity(sys.n, sys.n);
      break;
    case AuxiliarySpec::Kind::custom:
      Atl = aux.Atilde;
      Ntl = aux.Ntilde;
      break;
  }

  StochasticSystem t = sys;
  t.m = sys.m + r0;
  t.B.resize(sys.n, t.m);
  t.B << sys.B, (sys.A - Atl) * V0;
  t.D.resize(sys.p, t.m);
  t.D << sys.D, sys.C * V0;
  for (int i = 0; i < sys.q; ++i) {
    t.M[i].resize(sys.n, t.m);
    t.M[i] << sys.M[i], (sys.N[i] - Ntl[i]) * V0;
  }
  t.X0 = Eigen::MatrixXd::Zero(sys.n, sys.d);
  t.label = sys.label.empty() ? "transformed" : sys.label + " (transformed)";

  double extn = 0.0;
  for (int i = 0; i < sys.q; ++i)
    extn = std::max(extn, t.M[i].rightCols(r0).cwiseAbs().maxCoeff());
  const double extb = t.B.rightCols(r0).cwiseAbs().maxCoeff();
  const double scale = std::max(
      {1.0, sys.A.cwiseAbs().maxCoeff(), V0.size() ? V0.cwiseAbs().maxCoeff() : 0.0});
  if (degenerate) *degenerate = std::max(extb, extn) < 1e-14 * scale;
  return t;
}

double u0_energy(const AuxiliarySpec& aux, const Eigen::MatrixXd& K, double T) {
  if (!(T > 0.0)) throw ValidationError("u0_energy: T must be positive");
  switch (aux.kind) {
    case AuxiliarySpec::Kind::zero:
      return T;
    case AuxiliarySpec::Kind::scalar: {
      const double b = aux.beta(K);
      if (std::abs(b) < 1e-12) return T;
      return std::expm1(b * T) / b;
    }
    case AuxiliarySpec::Kind::custom:
      if (!aux.u0 || !aux.u0->energy)
        throw ValidationError(
            "u0_energy: custom auxiliary kind requires a supplied energy value");
      return *aux.u0->energy;
  }
  return T;
}

ControlReduction control_reduce(const StochasticSystem& sys, int r, double gamma,
                                const SolverOptions& opts) {
  ControlReduction out;
  out.gamma = gamma;
  out.P = solve_lmi_reach(sys, gamma, opts);
  out.Q = solve_obs_eq(sys, opts);
  out.bal = balance(sys, out.P, out.Q);
  out.rom = truncate(out.bal, r);
  return out;
}

Approach1Result approach1_reduce(const StochasticSystem& sys, const AuxiliarySpec& aux,
                                 int r, double gamma_tilde,
                                 const SolverOptions& opts) {
  if (!(gamma_tilde > 0.0))
    throw ValidationError("approach1_reduce: gamma_tilde must be positive");
  Approach1Result res;
  res.aux = aux;
  res.gamma_tilde = gamma_tilde;
  res.transformed = build_transformed_system(sys, aux, &res.degenerate_aux);
  res.reduction = control_reduce(res.transformed, r, gamma_tilde, opts);
  res.sigma_tilde = res.reduction.bal.sigma;
  return res;
}

double approach1_bound(const Approach1Result& res, double u_l2norm, double v_2norm,
                       double u0_energy_value) {
  if (u_l2norm < 0.0 || v_2norm < 0.0 || u0_energy_value < 0.0)
    throw ValidationError("approach1_bound: norms and energy must be nonnegative");
  const double tail = res.reduction.rom.sigma_truncated.sum();
  return 2.0 * std::sqrt(res.gamma_tilde) * tail *
         std::sqrt(u_l2norm * u_l2norm + u0_energy_value * v_2norm * v_2norm);
}

WResult compute_W(const BalancedRealization& bal_init, int r_bold,
                  const SolverOptions& opts) {
  if (bal_init.pair_kind != PairKind::initial_state)
    throw ValidationError("compute_W: initial-state balanced realization required");
  const auto& b = bal_init.sys_b;
  const int n = b.n;
  if (r_bold < 1 || r_bold > n)
    throw ValidationError("compute_W: order out of range");
  const int r = r_bold;
  const int nr = n - r;

  const ReducedModel rom = truncate(bal_init, r);
  const StochasticSystem red = rom.to_system(b);

  WResult out;
  // P_r solves the reduced-system version of the type-1 equation; the solver
  // also enforces stability of the truncated system.
  out.P_r = solve_type1_reach(red, opts).G;

  // Sylvester-type solve for Phat (n x r), vectorized column-stacked:
  // (I_r kron A_b + A11 kron I_n + sum_ij k_ij N_j11 kron N_ib) vec(Phat)
  //   = -vec(X0_b X01^T).
  const Eigen::MatrixXd In = Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd Ir = Eigen::MatrixXd::Identity(r, r);
  Eigen::MatrixXd op = kron(Ir, b.A) + kron(rom.A11, In);
  for (int i = 0; i < b.q; ++i)
    for (int j = 0; j < b.q; ++j)
      if (b.K(i, j) != 0.0)
        op.noalias() += b.K(i, j) * kron(rom.N11[j], b.N[i]);
  const Eigen::MatrixXd rhs = b.X0 * rom.X01->transpose();
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(op);
  const Eigen::VectorXd ph = lu.solve(-vec(rhs));
  out.Phat = unvec(ph, n, r);
  const double res_rel =
      (op * ph + vec(rhs)).norm() / std::max(1.0, rhs.norm());
  if (res_rel > 1e-8)
    throw NumericalError("compute_W: coupling equation solve failed (residual " +
                         std::to_string(res_rel) + ")");

  if (nr == 0) {
    out.W.resize(0, 0);
    return out;
  }

  // W = B2 B2^T + 2 Phat_2 A21^T + sum_ij (2 [N_i21 N_i22] Phat - N_i21 P_r) N_j21^T k_ij
  // with B2 read as the trailing block of the balanced initial-state map.
  const Eigen::MatrixXd B2 = b.X0.bottomRows(nr);
  const Eigen::MatrixXd A21 = b.A.bottomLeftCorner(nr, r);
  const Eigen::MatrixXd Phat2 = out.Phat.bottomRows(nr);
  Eigen::MatrixXd W = B2 * B2.transpose() + 2.0 * Phat2 * A21.transpose();
  for (int i = 0; i < b.q; ++i) {
    const Eigen::MatrixXd Ni2row = b.N[i].bottomRows(nr);       // [N_i21 N_i22]
    const Eigen::MatrixXd Ni21 = b.N[i].bottomLeftCorner(nr, r);
    const Eigen::MatrixXd lhs = 2.0 * Ni2row * out.Phat - Ni21 * out.P_r;
    for (int j = 0; j < b.q; ++j) {
      if (b.K(i, j) == 0.0) continue;
      const Eigen::MatrixXd Nj21 = b.N[j].bottomLeftCorner(nr, r);
      W.noalias() += b.K(i, j) * (lhs * Nj21.transpose());
    }
  }
  out.W = std::move(W);
  return out;
}

Approach2Result approach2_reduce(const StochasticSystem& sys, int r, int r_bold,
                                 double gamma, const SolverOptions& opts) {
  require_valid(sys);
  Approach2Result res;
  res.gamma = gamma;
  res.control = control_reduce(sys.with_zero_initial_state(), r, gamma, opts);
  res.sigma = res.control.bal.sigma;

  res.P_init = solve_type1_reach(sys, opts);
  res.Q_init = solve_obs_eq(sys, opts);
  res.bal_init = balance(sys, res.P_init, res.Q_init);
  res.theta = res.bal_init.sigma;
  res.rom_init = truncate(res.bal_init, r_bold);
  res.w = compute_W(res.bal_init, r_bold);
  return res;
}

double theta2_w_trace(const Approach2Result& res) {
  const auto& theta2 = res.rom_init.sigma_truncated;
  double tr = 0.0;
  for (Eigen::Index k = 0; k < theta2.size(); ++k) tr += theta2(k) * res.w.W(k, k);
  return tr;
}

Approach2Bound approach2_bound(const Approach2Result& res, double u_l2norm,
                               double v_2norm) {
  if (u_l2norm < 0.0 || v_2norm < 0.0)
    throw ValidationError("approach2_bound: norms must be nonnegative");
  Approach2Bound out;
  out.apriori_term = 2.0 * std::sqrt(res.gamma) *
                     res.control.rom.sigma_truncated.sum() * u_l2norm;
  double tr = theta2_w_trace(res);
  if (tr < 0.0) {
    const double wscale = res.w.W.size()
                              ? res.w.W.cwiseAbs().maxCoeff() *
                                    res.rom_init.sigma_truncated.maxCoeff()
                              : 0.0;
    if (tr < -1e-10 * std::max(1.0, wscale))
      throw NumericalError("approach2_bound: tr(Theta_2 W) = " + std::to_string(tr) +
                           " is materially negative");
    tr = 0.0;
    out.trace_clamped = true;
  }
  out.aposteriori_term = std::sqrt(tr) * v_2norm;
  out.total = out.apriori_term + out.aposteriori_term;
  return out;
}

}  // namespace sbt

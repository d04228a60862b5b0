#include "sbt/gramians.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

#include "sbt/errors.hpp"
#include "sbt/operators.hpp"

namespace sbt {

std::string to_string(GramianRole role) {
  switch (role) {
    case GramianRole::reach_lmi: return "reach_lmi";
    case GramianRole::obs: return "obs";
    case GramianRole::reach_type1: return "reach_type1";
    case GramianRole::obs_eq: return "obs_eq";
  }
  return "unknown";
}

GramianRole role_from_string(const std::string& s) {
  if (s == "reach_lmi") return GramianRole::reach_lmi;
  if (s == "obs") return GramianRole::obs;
  if (s == "reach_type1") return GramianRole::reach_type1;
  if (s == "obs_eq") return GramianRole::obs_eq;
  throw ParseError("unknown gramian role \"" + s + "\"");
}

namespace {

void require_stable(const StochasticSystem& sys, const SolverOptions& opts,
                    const char* what) {
  const auto rep = stability_check(sys, opts);
  if (!rep.stable)
    throw NumericalError(std::string(what) +
                         ": system is not mean-square asymptotically stable "
                         "(spectral abscissa " +
                         std::to_string(rep.spectral_abscissa) + ")");
}

/// Dense Kronecker solve of op(G) = -rhs for symmetric rhs.
Eigen::MatrixXd kron_solve(const StochasticSystem& sys, OperatorKind kind,
                           const Eigen::MatrixXd& rhs, const SolverOptions& opts) {
  const auto op = kron_matrix(sys, kind, opts);
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(op.mat);
  const Eigen::VectorXd g = lu.solve(-vec(rhs));
  return symmetrize(unvec(g, sys.n, sys.n));
}

double rel_residual(const Eigen::MatrixXd& residual, const Eigen::MatrixXd& rhs) {
  return residual.norm() / std::max(1.0, rhs.norm());
}

double min_eig(const Eigen::MatrixXd& X) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(X),
                                                    Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

struct Feasibility {
  bool feasible = false;
  double min_eig_U = 0.0;
  double ineq_margin = 0.0;  // min eig of -(L + S U^-1 S^T); valid when U > 0
};

/// Feasibility of epsilon in the constructive proof: with Xe = eps * X,
/// U(Xe) must be positive definite and L(Xe) + S(Xe) U(Xe)^-1 S(Xe)^T
/// negative semidefinite within tol. The NSD comparison is strict so that
/// tol = 0 classifies exact boundary points as infeasible.
Feasibility check_feasible(const StochasticSystem& sys, const Eigen::MatrixXd& Xe,
                           double gamma, double tol) {
  Feasibility f;
  const Eigen::MatrixXd U = op_U(sys, Xe, gamma);
  f.min_eig_U = min_eig(U);
  if (!(f.min_eig_U > tol * std::max(1.0, gamma))) return f;
  const Eigen::MatrixXd S = op_S(sys, Xe);
  Eigen::MatrixXd R = op_L(sys, Xe);
  R.noalias() += S * U.ldlt().solve(S.transpose());
  R = symmetrize(R);
  const auto nsd = psd_check(-R, 0.0);  // margins only
  f.ineq_margin = nsd.min_eig;          // = -max eig of R
  f.feasible = -f.ineq_margin < tol * std::max(1.0, nsd.max_eig);
  return f;
}

}  // namespace

GramianReport solve_type1_reach(const StochasticSystem& sys,
                                const SolverOptions& opts) {
  require_stable(sys, opts, "solve_type1_reach");
  const Eigen::MatrixXd rhs = sys.X0 * sys.X0.transpose();
  GramianReport rep;
  rep.G = kron_solve(sys, OperatorKind::Lstar, rhs, opts);
  rep.role = GramianRole::reach_type1;
  rep.provenance = GramianProvenance::equation_solved;
  rep.diagnostics = verify_gramian(sys, rep, opts.psd_tol);
  if (rep.diagnostics.at("residual_rel") > opts.eq_residual_tol)
    throw NumericalError("solve_type1_reach: residual " +
                         std::to_string(rep.diagnostics.at("residual_rel")) +
                         " above tolerance");
  return rep;
}

GramianReport solve_obs_eq(const StochasticSystem& sys, const SolverOptions& opts) {
  require_stable(sys, opts, "solve_obs_eq");
  const Eigen::MatrixXd rhs = sys.C.transpose() * sys.C;
  GramianReport rep;
  rep.G = kron_solve(sys, OperatorKind::L, rhs, opts);
  rep.role = GramianRole::obs_eq;
  rep.provenance = GramianProvenance::equation_solved;
  rep.diagnostics = verify_gramian(sys, rep, opts.psd_tol);
  if (rep.diagnostics.at("residual_rel") > opts.eq_residual_tol)
    throw NumericalError("solve_obs_eq: residual " +
                         std::to_string(rep.diagnostics.at("residual_rel")) +
                         " above tolerance");
  return rep;
}

GramianReport solve_lmi_reach(const StochasticSystem& sys, double gamma,
                              const SolverOptions& opts) {
  if (!(gamma > 0.0)) throw ValidationError("solve_lmi_reach: gamma must be positive");
  require_stable(sys, opts, "solve_lmi_reach");

  // Step (i): L(X) = -Y with Y > 0 (identity unless injected).
  Eigen::MatrixXd Y = opts.lyap_rhs;
  if (Y.size() == 0) Y = Eigen::MatrixXd::Identity(sys.n, sys.n);
  if (Y.rows() != sys.n || Y.cols() != sys.n)
    throw ValidationError("solve_lmi_reach: lyap_rhs must be n x n");
  const Eigen::MatrixXd X = kron_solve(sys, OperatorKind::L, Y, opts);
  {
    const auto pd = psd_check(X, 0.0);
    if (!(pd.min_eig > 0.0))
      throw NumericalError("solve_lmi_reach: base solution X is not positive "
                           "definite (min eig " + std::to_string(pd.min_eig) + ")");
  }

  const double tol = opts.psd_tol;
  auto feasible = [&](double eps) {
    return check_feasible(sys, eps * X, gamma, tol).feasible;
  };

  // Step (ii): largest feasible epsilon by doubling away from 1, then bisection.
  double lo = 0.0, hi = 0.0;
  bool unconstrained = false;
  if (feasible(1.0)) {
    lo = 1.0;
    double e = 2.0;
    while (e <= opts.eps_cap && feasible(e)) {
      lo = e;
      e *= 2.0;
    }
    if (e > opts.eps_cap) {
      unconstrained = true;  // never hit the boundary below the cap
      lo = opts.eps_cap;
    } else {
      hi = e;
    }
  } else {
    hi = 1.0;
    double e = 0.5;
    while (e >= opts.eps_floor && !feasible(e)) {
      hi = e;
      e *= 0.5;
    }
    if (e < opts.eps_floor)
      throw NumericalError(
          "solve_lmi_reach: no feasible epsilon found down to " +
          std::to_string(opts.eps_floor) +
          " (min eig U at floor: " +
          std::to_string(check_feasible(sys, opts.eps_floor * X, gamma, tol).min_eig_U) +
          ")");
    lo = e;
  }

  if (!unconstrained) {
    for (int it = 0; it < opts.bisect_steps; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (feasible(mid))
        lo = mid;
      else
        hi = mid;
      // Spot-check the monotone-feasibility assumption the search relies on.
      if (it % 10 == 9 && !feasible(0.5 * lo))
        throw NumericalError("solve_lmi_reach: feasibility is not monotone at eps = " +
                             std::to_string(lo));
    }
  }

  const double eps_final = opts.safety * lo;
  const Eigen::MatrixXd scaled = eps_final * X;
  GramianReport rep;
  rep.G = symmetrize(scaled.ldlt().solve(Eigen::MatrixXd::Identity(sys.n, sys.n)));
  rep.role = GramianRole::reach_lmi;
  rep.provenance = GramianProvenance::epsilon_constructed;
  rep.gamma = gamma;
  rep.epsilon = eps_final;
  rep.base_X = X;
  rep.eps_unconstrained = unconstrained;
  rep.diagnostics = verify_gramian(sys, rep, opts.psd_tol);
  rep.diagnostics["epsilon"] = eps_final;
  rep.diagnostics["unconstrained"] = unconstrained ? 1.0 : 0.0;
  return rep;
}

std::map<std::string, double> verify_gramian(const StochasticSystem& sys,
                                             const GramianReport& report,
                                             double tol) {
  require_valid(sys);
  if (report.G.rows() != sys.n || report.G.cols() != sys.n)
    throw ValidationError("verify_gramian: G must be n x n");
  std::map<std::string, double> diag;
  diag["min_eig_G"] = min_eig(report.G);

  switch (report.role) {
    case GramianRole::reach_lmi: {
      if (!(report.gamma > 0.0))
        throw ValidationError("verify_gramian: reach_lmi requires gamma > 0");
      const Eigen::MatrixXd Ginv =
          report.G.ldlt().solve(Eigen::MatrixXd::Identity(sys.n, sys.n));
      const auto f = check_feasible(sys, symmetrize(Ginv), report.gamma, tol);
      diag["min_eig_U"] = f.min_eig_U;
      diag["ineq_margin"] = f.ineq_margin;
      // Schur-complement cross-check: [[-L, S], [S^T, U]] >= 0 iff the direct
      // condition holds (given U > 0).
      const Eigen::MatrixXd Gs = symmetrize(Ginv);
      const Eigen::MatrixXd Lm = op_L(sys, Gs);
      const Eigen::MatrixXd Sm = op_S(sys, Gs);
      const Eigen::MatrixXd Um = op_U(sys, Gs, report.gamma);
      Eigen::MatrixXd block(sys.n + sys.m, sys.n + sys.m);
      block.topLeftCorner(sys.n, sys.n) = -Lm;
      block.topRightCorner(sys.n, sys.m) = Sm;
      block.bottomLeftCorner(sys.m, sys.n) = Sm.transpose();
      block.bottomRightCorner(sys.m, sys.m) = Um;
      const auto schur = psd_check(block, tol);
      diag["schur_min_eig"] = schur.min_eig;
      const bool direct_ok =
          f.min_eig_U > tol * std::max(1.0, report.gamma) && f.feasible;
      diag["schur_agree"] = (schur.is_psd == direct_ok) ? 1.0 : 0.0;
      break;
    }
    case GramianRole::obs: {
      const Eigen::MatrixXd R = op_L(sys, report.G) + sys.C.transpose() * sys.C;
      diag["lyap_margin"] = min_eig(-R);
      break;
    }
    case GramianRole::reach_type1: {
      const Eigen::MatrixXd rhs = sys.X0 * sys.X0.transpose();
      diag["residual_rel"] = rel_residual(op_Lstar(sys, report.G) + rhs, rhs);
      break;
    }
    case GramianRole::obs_eq: {
      const Eigen::MatrixXd rhs = sys.C.transpose() * sys.C;
      diag["residual_rel"] = rel_residual(op_L(sys, report.G) + rhs, rhs);
      break;
    }
  }
  return diag;
}

bool gramian_ok(const std::map<std::string, double>& diag, GramianRole role,
                double tol) {
  const auto get = [&](const char* key) {
    auto it = diag.find(key);
    return it == diag.end() ? 0.0 : it->second;
  };
  switch (role) {
    case GramianRole::reach_lmi:
      return get("min_eig_G") > tol && get("min_eig_U") > 0.0 &&
             get("ineq_margin") > -tol && get("schur_agree") == 1.0;
    case GramianRole::obs:
      return get("min_eig_G") >= -tol && get("lyap_margin") >= -tol;
    case GramianRole::reach_type1:
    case GramianRole::obs_eq:
      return get("min_eig_G") >= -tol &&
             get("residual_rel") <= std::max(tol, 1e-8);
  }
  return false;
}

GramianReport import_gramian(const StochasticSystem& sys, const Eigen::MatrixXd& G,
                             GramianRole role, std::optional<double> gamma,
                             const SolverOptions& opts) {
  if (G.rows() != sys.n || G.cols() != sys.n)
    throw ValidationError("import_gramian: G must be n x n");
  const double sym_err = (G - G.transpose()).cwiseAbs().maxCoeff();
  if (sym_err > 1e-10 * std::max(1.0, G.cwiseAbs().maxCoeff()))
    throw ValidationError("import_gramian: G is not symmetric");
  GramianReport rep;
  rep.G = symmetrize(G);
  rep.role = role;
  rep.provenance = GramianProvenance::imported;
  if (role == GramianRole::reach_lmi) {
    if (!gamma || !(*gamma > 0.0))
      throw ValidationError("import_gramian: reach_lmi import requires gamma > 0");
    rep.gamma = *gamma;
  }
  rep.diagnostics = verify_gramian(sys, rep, opts.psd_tol);
  if (!gramian_ok(rep.diagnostics, role, opts.psd_tol)) {
    std::string msg = "import_gramian: verification failed for role " +
                      to_string(role);
    if (rep.diagnostics.at("min_eig_G") < -opts.psd_tol) msg += "; G not PSD";
    for (const auto& [k, v] : rep.diagnostics)
      msg += "; " + k + " = " + std::to_string(v);
    throw NumericalError(msg);
  }
  return rep;
}

double output_energy(const StochasticSystem& sys, const GramianReport& q_report,
                     const Eigen::VectorXd& x0) {
  if (q_report.role != GramianRole::obs && q_report.role != GramianRole::obs_eq)
    throw ValidationError("output_energy: report must have an observability role");
  if (x0.size() != sys.n)
    throw ValidationError("output_energy: x0 must have length n");
  return x0.dot(q_report.G * x0);
}

}  // namespace sbt

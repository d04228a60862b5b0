#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "sbt/errors.hpp"
#include "sbt/gramians.hpp"
#include "sbt/operators.hpp"
#include "support.hpp"

using namespace sbt;

namespace {

/// Independent oracle for the epsilon construction: brute-force feasibility
/// scan on a fine grid, mirroring the definition directly (no bisection).
double grid_search_eps_max(const StochasticSystem& sys, double gamma,
                           const Eigen::MatrixXd& X, double hi, double step) {
  double best = 0.0;
  for (double eps = step; eps <= hi; eps += step) {
    const Eigen::MatrixXd Xe = eps * X;
    const Eigen::MatrixXd U = op_U(sys, Xe, gamma);
    const auto updr = psd_check(U, 0.0);
    if (!(updr.min_eig > 0.0)) break;
    const Eigen::MatrixXd S = op_S(sys, Xe);
    const Eigen::MatrixXd R =
        symmetrize(op_L(sys, Xe) + S * U.inverse() * S.transpose());
    if (psd_check(-R, 0.0).min_eig < 0.0) break;
    best = eps;
  }
  return best;
}

}  // namespace

TEST_CASE("type-1 reachability Gramian closed forms") {
  // deterministic scalar: 2 a P + 1 = 0
  auto sys = scalar_system(-1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0);
  auto rep = solve_type1_reach(sys);
  CHECK(rep.G(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(rep.role == GramianRole::reach_type1);
  CHECK(rep.provenance == GramianProvenance::equation_solved);

  // noisy scalar: -1.75 P = -1
  rep = solve_type1_reach(sbt::testing::noisy_scalar_system());
  CHECK(rep.G(0, 0) == doctest::Approx(4.0 / 7.0).epsilon(1e-12));

  // zero right-hand side
  sys.X0.setZero();
  rep = solve_type1_reach(sys);
  CHECK(rep.G.isZero(1e-14));
}

TEST_CASE("observability equation Gramian closed forms") {
  auto sys = scalar_system(-1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0);
  CHECK(solve_obs_eq(sys).G(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(solve_obs_eq(sbt::testing::noisy_scalar_system()).G(0, 0) ==
        doctest::Approx(4.0 / 7.0).epsilon(1e-12));
  sys.C.setZero();
  CHECK(solve_obs_eq(sys).G.isZero(1e-14));
}

TEST_CASE("solvers refuse unstable systems") {
  const auto sys = scalar_system(-1.0, 1.0, 1.0, 0.0, 2.0, 0.0, 1.0);  // -2+4 > 0
  CHECK_THROWS_AS(solve_type1_reach(sys), NumericalError);
  CHECK_THROWS_AS(solve_obs_eq(sys), NumericalError);
  CHECK_THROWS_AS(solve_lmi_reach(sys, 1.0), NumericalError);
}

TEST_CASE("equation residuals on a random stable batch") {
  for (uint64_t s = 0; s < 8; ++s) {
    const auto sys = sbt::testing::random_stable_system(100 + s, 4 + int(s % 3), 2,
                                                        2, 2, 2);
    const auto P = solve_type1_reach(sys);
    const auto Q = solve_obs_eq(sys);
    const Eigen::MatrixXd rp = sys.X0 * sys.X0.transpose();
    const Eigen::MatrixXd rq = sys.C.transpose() * sys.C;
    CHECK((op_Lstar(sys, P.G) + rp).norm() <= 1e-8 * std::max(1.0, rp.norm()));
    CHECK((op_L(sys, Q.G) + rq).norm() <= 1e-8 * std::max(1.0, rq.norm()));
    CHECK(psd_check(P.G, 1e-8).is_psd);
    CHECK(psd_check(Q.G, 1e-8).is_psd);
  }
}

TEST_CASE("right-hand sides add: stacked initial maps sum the Gramians") {
  auto sys = sbt::testing::random_stable_system(200, 4, 2, 2, 2, 1);
  const auto P1 = solve_type1_reach(sys);
  StochasticSystem sys2 = sys;
  std::mt19937_64 rng(201);
  sys2.X0 = sbt::testing::random_matrix(rng, 4, 1);
  const auto P2 = solve_type1_reach(sys2);
  StochasticSystem stacked = sys;
  stacked.d = 2;
  stacked.X0.resize(4, 2);
  stacked.X0 << sys.X0, sys2.X0;
  const auto P12 = solve_type1_reach(stacked);
  CHECK((P12.G - P1.G - P2.G).norm() <= 1e-10 * std::max(1.0, P12.G.norm()));
}

TEST_CASE("output scaling: c*C gives c^2 Q") {
  auto sys = sbt::testing::random_stable_system(210, 4, 2, 2, 2, 1);
  const auto Q = solve_obs_eq(sys);
  sys.C *= 3.0;
  const auto Q9 = solve_obs_eq(sys);
  CHECK((Q9.G - 9.0 * Q.G).norm() <= 1e-12 * std::max(1.0, Q9.G.norm()));
}

TEST_CASE("inequality solutions dominate the equation solution") {
  const auto sys = sbt::testing::random_stable_system(220, 4, 2, 2, 2, 2);
  const auto P = solve_type1_reach(sys);
  // Construct a strict super-solution by adding slack to the right-hand side:
  // L*(Z) = -I gives Z >= 0, so Pbar = P + Z solves the inequality.
  StochasticSystem ridge = sys;
  ridge.d = sys.n;
  ridge.X0 = Eigen::MatrixXd::Identity(sys.n, sys.n);
  const auto Z = solve_type1_reach(ridge);
  const Eigen::MatrixXd Pbar = P.G + Z.G;
  CHECK(psd_check(op_Lstar(sys, Pbar) + sys.X0 * sys.X0.transpose(), 0.0).max_eig <=
        1e-10);
  CHECK(psd_check(Pbar - P.G, 1e-10).is_psd);
}

TEST_CASE("epsilon construction reproduces the scalar closed forms") {
  // A=-1, B=1, N=M=0: X = 0.5, feasibility -eps + (0.5 eps)^2 <= 0, eps_max 4,
  // P = (0.9 * 4 * 0.5)^-1 = 5/9.
  auto sys = scalar_system(-1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0);
  auto rep = solve_lmi_reach(sys, 1.0);
  CHECK(rep.G(0, 0) == doctest::Approx(5.0 / 9.0).epsilon(1e-6));
  CHECK(rep.provenance == GramianProvenance::epsilon_constructed);
  CHECK(rep.base_X(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(rep.epsilon == doctest::Approx(0.9 * 4.0).epsilon(1e-6));
  CHECK_FALSE(rep.eps_unconstrained);

  // oracle: fine grid search agrees with the bisection boundary
  const double eps_grid = grid_search_eps_max(sys, 1.0, rep.base_X, 8.0, 1e-4);
  CHECK(rep.epsilon / 0.9 == doctest::Approx(eps_grid).epsilon(1e-3));

  // A=-1, B=0, M=1: U constraint 1 - 0.5 eps > 0 binds, eps_max 2, P = 10/9.
  sys = scalar_system(-1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0);
  rep = solve_lmi_reach(sys, 1.0);
  CHECK(rep.G(0, 0) == doctest::Approx(10.0 / 9.0).epsilon(1e-6));
  const double eps_grid2 = grid_search_eps_max(sys, 1.0, rep.base_X, 8.0, 1e-4);
  CHECK(rep.epsilon / 0.9 == doctest::Approx(eps_grid2).epsilon(1e-3));

  // B = M = 0: unconstrained, epsilon capped.
  sys = scalar_system(-1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
  rep = solve_lmi_reach(sys, 1.0);
  CHECK(rep.eps_unconstrained);
  CHECK(rep.epsilon == doctest::Approx(0.9 * 1e6));
  CHECK(rep.diagnostics.at("unconstrained") == 1.0);
}

TEST_CASE("every epsilon-constructed Gramian verifies at 1e-9") {
  for (uint64_t s = 0; s < 8; ++s) {
    const auto sys =
        sbt::testing::random_stable_system(300 + s, 3 + int(s % 4), 2, 2, 2, 1);
    const auto rep = solve_lmi_reach(sys, 1.0);
    const auto diag = verify_gramian(sys, rep, 1e-9);
    CHECK(gramian_ok(diag, GramianRole::reach_lmi, 1e-9));
    CHECK(diag.at("min_eig_G") > 0.0);
    CHECK(diag.at("min_eig_U") > 0.0);
    CHECK(diag.at("ineq_margin") > -1e-9);
    CHECK(diag.at("schur_agree") == 1.0);
  }
}

TEST_CASE("schur block form agrees with the direct condition on a batch") {
  for (uint64_t s = 0; s < 50; ++s) {
    const auto sys =
        sbt::testing::random_stable_system(400 + s, 2 + int(s % 7), 2, 2, 2, 1);
    const auto rep = solve_lmi_reach(sys, 1.0 + 0.1 * double(s % 5));
    CHECK(rep.diagnostics.at("schur_agree") == 1.0);
  }
}

TEST_CASE("verify_gramian at tol 0 separates the feasibility boundary") {
  // Exact-boundary P (eps_max = 4) must fail at tol 0; the backed-off 0.9
  // version must pass.
  const auto sys = scalar_system(-1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0);
  GramianReport boundary;
  boundary.role = GramianRole::reach_lmi;
  boundary.gamma = 1.0;
  boundary.G = Eigen::MatrixXd::Constant(1, 1, 1.0 / (4.0 * 0.5));
  auto diag = verify_gramian(sys, boundary, 0.0);
  CHECK_FALSE(gramian_ok(diag, GramianRole::reach_lmi, 0.0));

  GramianReport backed;
  backed.role = GramianRole::reach_lmi;
  backed.gamma = 1.0;
  backed.G = Eigen::MatrixXd::Constant(1, 1, 1.0 / (0.9 * 4.0 * 0.5));
  diag = verify_gramian(sys, backed, 0.0);
  CHECK(gramian_ok(diag, GramianRole::reach_lmi, 0.0));
}

TEST_CASE("import accepts consistent Gramians and rejects bad ones") {
  const auto sys = sbt::testing::noisy_scalar_system();

  // the epsilon-constructed P re-imports cleanly
  const auto scalar = scalar_system(-1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0);
  const auto built = solve_lmi_reach(scalar, 1.0);
  const auto imported = import_gramian(scalar, built.G, GramianRole::reach_lmi, 1.0);
  CHECK(imported.provenance == GramianProvenance::imported);

  // equation solution satisfies the observability inequality
  const auto Q = import_gramian(sys, Eigen::MatrixXd::Constant(1, 1, 4.0 / 7.0),
                                GramianRole::obs);
  CHECK(Q.diagnostics.at("lyap_margin") == doctest::Approx(0.0).epsilon(1e-12));

  // negative definite import is rejected with a PSD message
  CHECK_THROWS_WITH_AS(
      import_gramian(sys, -Eigen::MatrixXd::Identity(1, 1), GramianRole::obs),
      doctest::Contains("not PSD"), NumericalError);
}

TEST_CASE("gramian JSON round trip re-verifies on load") {
  const auto path = std::filesystem::temp_directory_path() / "sbt_gram.json";
  const auto sys = sbt::testing::noisy_scalar_system();
  const auto Q = solve_obs_eq(sys);
  save_gramian(Q, path);
  const auto back = load_gramian(sys, path);
  CHECK(back.role == GramianRole::obs_eq);
  CHECK((back.G - Q.G).norm() == 0.0);
  std::filesystem::remove(path);
}

TEST_CASE("output energy is the quadratic form in the observability Gramian") {
  const auto sys = sbt::testing::noisy_scalar_system();
  const auto Q = solve_obs_eq(sys);
  Eigen::VectorXd x0(1);
  x0 << 1.0;
  CHECK(output_energy(sys, Q, x0) == doctest::Approx(4.0 / 7.0).epsilon(1e-12));
  x0 << 0.0;
  CHECK(output_energy(sys, Q, x0) == 0.0);
  const auto P = solve_type1_reach(sys);
  x0 << 1.0;
  CHECK_THROWS_AS(output_energy(sys, P, x0), ValidationError);
}

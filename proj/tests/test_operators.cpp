#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "sbt/errors.hpp"
#include "sbt/operators.hpp"
#include "support.hpp"

using namespace sbt;

namespace {
Eigen::MatrixXd random_sym(std::mt19937_64& rng, int n) {
  return symmetrize(testing::random_matrix(rng, n, n));
}
}  // namespace

TEST_CASE("operator values on the diagonal scalar family") {
  // A = -I2, N = 0.5 I2, K = [[1]]: L(I) = L*(I) = -1.75 I
  auto sys = StochasticSystem::zeros(2, 1, 1, 1, 1);
  sys.A = -Eigen::MatrixXd::Identity(2, 2);
  sys.N[0] = 0.5 * Eigen::MatrixXd::Identity(2, 2);
  sys.C = Eigen::MatrixXd::Ones(1, 2);
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(2, 2);
  CHECK((op_L(sys, I) + 1.75 * I).norm() == doctest::Approx(0.0).epsilon(1e-14));
  CHECK((op_Lstar(sys, I) + 1.75 * I).norm() == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(op_L(sys, Eigen::MatrixXd::Zero(2, 2)).isZero());
  CHECK(op_Lstar(sys, Eigen::MatrixXd::Zero(2, 2)).isZero());
}

TEST_CASE("op_S covers both terms") {
  // X * B alone
  auto sys = scalar_system(-1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0);
  Eigen::MatrixXd X(1, 1);
  X << 0.5;
  CHECK(op_S(sys, X)(0, 0) == doctest::Approx(0.5));
  // N^T X M k alone
  sys = scalar_system(-1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0);
  CHECK(op_S(sys, X)(0, 0) == doctest::Approx(0.5));
  // vanishing noise-control term: S(X) = X B exactly
  auto s3 = testing::random_stable_system(5, 3, 2, 2, 1, 1);
  for (auto& Mi : s3.M) Mi.setZero();
  std::mt19937_64 rng(7);
  const Eigen::MatrixXd Xs = random_sym(rng, 3);
  CHECK((op_S(s3, Xs) - Xs * s3.B).norm() == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("op_U covers the scalar cases") {
  auto sys = scalar_system(-1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0);
  Eigen::MatrixXd X(1, 1);
  X << 0.5;
  CHECK(op_U(sys, X, 1.0)(0, 0) == doctest::Approx(0.5));
  X << 2.0;
  CHECK(op_U(sys, X, 1.0)(0, 0) == doctest::Approx(-1.0));  // indefinite is legal
  for (auto& Mi : sys.M) Mi.setZero();
  CHECK(op_U(sys, X, 3.0)(0, 0) == doctest::Approx(3.0));
  CHECK_THROWS_AS(op_U(sys, X, 0.0), ValidationError);
}

TEST_CASE("kron matrices reproduce the operators and transpose relation") {
  const auto sys = testing::random_stable_system(13, 3, 2, 3, 2, 1);
  const auto opl = kron_matrix(sys, OperatorKind::L);
  const auto opstar = kron_matrix(sys, OperatorKind::Lstar);
  CHECK((opl.mat - opstar.mat.transpose()).cwiseAbs().maxCoeff() <
        1e-13 * std::max(1.0, opstar.mat.cwiseAbs().maxCoeff()));

  std::mt19937_64 rng(17);
  for (int it = 0; it < 20; ++it) {
    const Eigen::MatrixXd X = random_sym(rng, 3);
    const Eigen::MatrixXd viaOp = op_L(sys, X);
    const Eigen::MatrixXd viaKron = unvec(opl.mat * vec(X), 3, 3);
    CHECK((viaOp - symmetrize(viaKron)).norm() <=
          1e-12 * std::max(1.0, viaOp.norm()));
    const Eigen::MatrixXd viaOp2 = op_Lstar(sys, X);
    const Eigen::MatrixXd viaKron2 = unvec(opstar.mat * vec(X), 3, 3);
    CHECK((viaOp2 - symmetrize(viaKron2)).norm() <=
          1e-12 * std::max(1.0, viaOp2.norm()));
  }
}

TEST_CASE("scalar kron matrix equals the operator value") {
  const auto sys = scalar_system(-1.0, 0.0, 1.0, 0.0, 0.5, 0.0, 1.0);
  CHECK(kron_matrix(sys, OperatorKind::Lstar).mat(0, 0) == doctest::Approx(-1.75));
  auto det = scalar_system(-1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
  const Eigen::MatrixXd expected =
      kron(Eigen::MatrixXd::Identity(1, 1), det.A) +
      kron(det.A, Eigen::MatrixXd::Identity(1, 1));
  CHECK((kron_matrix(det, OperatorKind::Lstar).mat - expected).isZero());
}

TEST_CASE("kron matrix respects the capacity cap") {
  const auto sys = testing::random_stable_system(1, 4, 1, 1, 1, 1);
  SolverOptions opts;
  opts.n_cap = 3;
  CHECK_THROWS_AS(kron_matrix(sys, OperatorKind::L, opts), CapacityError);
}

TEST_CASE("linearity of op_L") {
  const auto sys = testing::random_stable_system(23, 4, 2, 2, 2, 1);
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> coef(-2.0, 2.0);
  for (int it = 0; it < 20; ++it) {
    const Eigen::MatrixXd X = random_sym(rng, 4), Y = random_sym(rng, 4);
    const double a = coef(rng), b = coef(rng);
    const Eigen::MatrixXd lhs = op_L(sys, a * X + b * Y);
    const Eigen::MatrixXd rhs = a * op_L(sys, X) + b * op_L(sys, Y);
    CHECK((lhs - rhs).norm() <= 1e-12 * std::max(1.0, rhs.norm()));
  }
}

TEST_CASE("adjointness of L and Lstar in the Frobenius inner product") {
  const auto sys = testing::random_stable_system(37, 5, 2, 3, 2, 1);
  std::mt19937_64 rng(41);
  for (int it = 0; it < 100; ++it) {
    const Eigen::MatrixXd X = random_sym(rng, 5), Y = random_sym(rng, 5);
    const double lhs = (op_L(sys, X).array() * Y.array()).sum();
    const double rhs = (X.array() * op_Lstar(sys, Y).array()).sum();
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12).scale(std::max(1.0, std::abs(rhs))));
  }
}

TEST_CASE("operator outputs are exactly symmetric") {
  const auto sys = testing::random_stable_system(43, 4, 3, 2, 2, 1);
  std::mt19937_64 rng(47);
  const Eigen::MatrixXd X = random_sym(rng, 4);
  const auto check_sym = [](const Eigen::MatrixXd& R) {
    CHECK((R - R.transpose()).cwiseAbs().maxCoeff() == 0.0);
  };
  check_sym(op_L(sys, X));
  check_sym(op_Lstar(sys, X));
  check_sym(op_U(sys, X, 1.0));
}

TEST_CASE("psd_check classifies the hand cases") {
  const Eigen::MatrixXd I2 = Eigen::MatrixXd::Identity(2, 2);
  auto rep = psd_check(I2, 1e-10);
  CHECK(rep.is_psd);
  CHECK(rep.min_eig == doctest::Approx(1.0));

  Eigen::MatrixXd D(2, 2);
  D << 1.0, 0.0, 0.0, -1.0;
  rep = psd_check(D, 1e-10);
  CHECK_FALSE(rep.is_psd);
  CHECK(rep.min_eig == doctest::Approx(-1.0));

  Eigen::MatrixXd S(2, 2);
  S << 1.0, 2.0, 2.0, 1.0;  // eigenvalues 3, -1
  rep = psd_check(S, 1e-10);
  CHECK_FALSE(rep.is_psd);
  CHECK(rep.min_eig == doctest::Approx(-1.0));
  CHECK(rep.max_eig == doctest::Approx(3.0));
}

TEST_CASE("noise_quad stacked path matches the double loop") {
  // q = 3 triggers the stacked K-kron form
  const auto sys = testing::random_stable_system(53, 3, 2, 2, 3, 1);
  std::mt19937_64 rng(59);
  const Eigen::MatrixXd X = random_sym(rng, 3);
  const Eigen::MatrixXd fast = noise_quad(sys.K, sys.N, X, sys.M);
  Eigen::MatrixXd slow = Eigen::MatrixXd::Zero(3, 2);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      slow += sys.K(i, j) * sys.N[i].transpose() * X * sys.M[j];
  CHECK((fast - slow).norm() <= 1e-12 * std::max(1.0, slow.norm()));
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <filesystem>
#include <fstream>
#include <random>

#include "sbt/errors.hpp"
#include "sbt/system.hpp"
#include "support.hpp"

using namespace sbt;
namespace fs = std::filesystem;

namespace {
fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / ("sbt_test_" + name);
}

bool report_mentions(const std::vector<std::string>& report, const std::string& key) {
  for (const auto& r : report)
    if (r.find(key) != std::string::npos) return true;
  return false;
}
}  // namespace

TEST_CASE("validate accepts a consistent scalar system") {
  const auto sys = scalar_system(-1.0, 1.0, 1.0, 0.0, 0.5, 0.0, 1.0);
  CHECK(validate(sys).empty());
}

TEST_CASE("validate flags an indefinite covariance") {
  auto sys = StochasticSystem::zeros(1, 1, 1, 2, 1);
  sys.A(0, 0) = -1.0;
  sys.N.assign(2, Eigen::MatrixXd::Zero(1, 1));
  sys.M.assign(2, Eigen::MatrixXd::Zero(1, 1));
  sys.K << 1.0, 2.0, 2.0, 1.0;  // eigenvalues 3 and -1
  const auto report = validate(sys);
  CHECK(report_mentions(report, "K"));
  CHECK(report_mentions(report, "not PSD"));
}

TEST_CASE("validate flags a drift-input shape mismatch") {
  auto sys = scalar_system(-1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0);
  sys.B = Eigen::MatrixXd::Zero(2, 1);  // n+1 rows
  const auto report = validate(sys);
  CHECK(report_mentions(report, "B"));
}

TEST_CASE("stability_check matches the scalar closed forms") {
  auto sys = scalar_system(-1.0, 0.0, 1.0, 0.0, 0.5, 0.0, 1.0);
  auto rep = stability_check(sys);
  CHECK(rep.stable);
  CHECK(rep.spectral_abscissa == doctest::Approx(-1.75).epsilon(1e-12));

  sys.N[0](0, 0) = 2.0;  // -2 + 4
  rep = stability_check(sys);
  CHECK_FALSE(rep.stable);
  CHECK(rep.spectral_abscissa == doctest::Approx(2.0).epsilon(1e-12));

  sys.A(0, 0) = 0.0;
  sys.N[0](0, 0) = 0.0;
  rep = stability_check(sys);
  CHECK_FALSE(rep.stable);
  CHECK(rep.spectral_abscissa == doctest::Approx(0.0));
}

TEST_CASE("stability_check is invariant under similarity transformations") {
  const auto sys = testing::random_stable_system(11, 4, 2, 2, 2, 1);
  std::mt19937_64 rng(99);
  Eigen::MatrixXd T = testing::random_matrix(rng, 4, 4) +
                      3.0 * Eigen::MatrixXd::Identity(4, 4);
  const Eigen::MatrixXd Ti = T.inverse();
  StochasticSystem mapped = sys;
  mapped.A = T * sys.A * Ti;
  mapped.B = T * sys.B;
  mapped.C = sys.C * Ti;
  mapped.X0 = T * sys.X0;
  for (int i = 0; i < sys.q; ++i) {
    mapped.N[i] = T * sys.N[i] * Ti;
    mapped.M[i] = T * sys.M[i];
  }
  const auto a = stability_check(sys);
  const auto b = stability_check(mapped);
  CHECK(a.stable == b.stable);
  CHECK(a.spectral_abscissa ==
        doctest::Approx(b.spectral_abscissa).epsilon(0).scale(1).epsilon(1e-8));
}

TEST_CASE("deterministic systems reduce to the drift eigenvalues") {
  auto sys = testing::random_stable_system(21, 5, 1, 1, 1, 1, /*noise=*/0.0);
  sys.N[0].setZero();
  sys.M[0].setZero();
  const auto rep = stability_check(sys);
  Eigen::EigenSolver<Eigen::MatrixXd> es(sys.A, false);
  const double abscissa_A = es.eigenvalues().real().maxCoeff();
  CHECK(rep.stable == (abscissa_A < 0.0));
  // eig(Lstar) for N = 0 is all pairwise sums of eig(A)
  CHECK(rep.spectral_abscissa == doctest::Approx(2.0 * abscissa_A).epsilon(1e-8));
}

TEST_CASE("save/load round trip is bit exact") {
  const auto path = temp_file("roundtrip.json");
  auto sys = testing::random_stable_system(31, 3, 2, 2, 2, 2);
  sys.label = "roundtrip";
  save_system(sys, path);
  const auto back = load_system(path);
  CHECK(validate(back).empty());
  CHECK(back.label == sys.label);
  CHECK((back.A.array() == sys.A.array()).all());
  CHECK((back.B.array() == sys.B.array()).all());
  CHECK((back.C.array() == sys.C.array()).all());
  CHECK((back.D.array() == sys.D.array()).all());
  CHECK((back.X0.array() == sys.X0.array()).all());
  CHECK((back.K.array() == sys.K.array()).all());
  for (int i = 0; i < sys.q; ++i) {
    CHECK((back.N[i].array() == sys.N[i].array()).all());
    CHECK((back.M[i].array() == sys.M[i].array()).all());
  }
  fs::remove(path);
}

TEST_CASE("load reports the missing field by name") {
  const auto path = temp_file("missing_k.json");
  {
    std::ofstream out(path);
    out << R"({"n":1,"m":1,"p":1,"q":1,"d":1,
               "A":[[-1.0]],"B":[[1.0]],"C":[[1.0]],"D":[[0.0]],
               "N":[[[0.0]]],"M":[[[0.0]]],"X0":[[1.0]]})";
  }
  CHECK_THROWS_WITH_AS(load_system(path), doctest::Contains("\"K\""), ParseError);
  fs::remove(path);
}

TEST_CASE("load of a missing file fails as a parse error") {
  CHECK_THROWS_AS(load_system("/nonexistent/sbt_nope.json"), ParseError);
}

TEST_CASE("horizon step count validation") {
  CHECK(HorizonConfig{5.0, 1e-3}.steps() == 5000);
  CHECK(HorizonConfig{1.0, 1.0}.steps() == 1);
  CHECK_THROWS_AS((HorizonConfig{1.0, 0.3}.steps()), ValidationError);
  CHECK_THROWS_AS((HorizonConfig{-1.0, 0.1}.steps()), ValidationError);
}

TEST_CASE("control signals evaluate and validate against the grid") {
  const HorizonConfig h{1.0, 0.25};
  const int m = 2;
  const auto zero = ControlSignal::zero();
  CHECK(zero.at(2, h, m).isZero());

  Eigen::VectorXd amp(m);
  amp << 1.0, -2.0;
  const auto step = ControlSignal::step(amp, 0.5);
  CHECK(step.at(1, h, m).isZero());
  CHECK(step.at(2, h, m) == amp);

  const auto sine = ControlSignal::sine(amp, 2.0);
  CHECK(sine.at(1, h, m) == amp * std::sin(0.5));

  auto grid = ControlSignal::grid(Eigen::MatrixXd::Ones(3, m));
  CHECK_THROWS_AS(grid.check_compatible(h, m), ValidationError);  // needs 4 rows
  grid = ControlSignal::grid(Eigen::MatrixXd::Ones(4, m));
  CHECK_NOTHROW(grid.check_compatible(h, m));
}

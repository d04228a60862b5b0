#include "sbt/system.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <sstream>

#include "sbt/errors.hpp"
#include "sbt/operators.hpp"

namespace sbt {

StochasticSystem StochasticSystem::zeros(int n, int m, int p, int q, int d) {
  StochasticSystem s;
  s.n = n;
  s.m = m;
  s.p = p;
  s.q = q;
  s.d = d;
  s.A = Eigen::MatrixXd::Zero(n, n);
  s.B = Eigen::MatrixXd::Zero(n, m);
  s.C = Eigen::MatrixXd::Zero(p, n);
  s.D = Eigen::MatrixXd::Zero(p, m);
  s.X0 = Eigen::MatrixXd::Zero(n, d);
  s.K = Eigen::MatrixXd::Identity(q, q);
  s.N.assign(q, Eigen::MatrixXd::Zero(n, n));
  s.M.assign(q, Eigen::MatrixXd::Zero(n, m));
  return s;
}

StochasticSystem StochasticSystem::with_zero_initial_state() const {
  StochasticSystem s = *this;
  s.X0.setZero();
  return s;
}

StochasticSystem scalar_system(double a, double b, double c, double dd, double nn,
                               double mm, double x0, double k) {
  StochasticSystem s = StochasticSystem::zeros(1, 1, 1, 1, 1);
  s.A(0, 0) = a;
  s.B(0, 0) = b;
  s.C(0, 0) = c;
  s.D(0, 0) = dd;
  s.N[0](0, 0) = nn;
  s.M[0](0, 0) = mm;
  s.X0(0, 0) = x0;
  s.K(0, 0) = k;
  return s;
}

namespace {

void check_shape(std::vector<std::string>& out, const Eigen::MatrixXd& mat,
                 const char* name, int rows, int cols) {
  if (mat.rows() != rows || mat.cols() != cols) {
    std::ostringstream os;
    os << name << ": expected " << rows << "x" << cols << ", got " << mat.rows()
       << "x" << mat.cols();
    out.push_back(os.str());
  }
}

}  // namespace

std::vector<std::string> validate(const StochasticSystem& sys) {
  std::vector<std::string> out;
  if (sys.n < 1) out.push_back("n: must be positive");
  if (sys.m < 1) out.push_back("m: must be positive");
  if (sys.p < 1) out.push_back("p: must be positive");
  if (sys.q < 1) out.push_back("q: must be at least 1 (deterministic case is N=M=0)");
  if (sys.d < 1) out.push_back("d: must be at least 1");
  if (!out.empty()) return out;  // shape checks would be meaningless

  check_shape(out, sys.A, "A", sys.n, sys.n);
  check_shape(out, sys.B, "B", sys.n, sys.m);
  check_shape(out, sys.C, "C", sys.p, sys.n);
  check_shape(out, sys.D, "D", sys.p, sys.m);
  check_shape(out, sys.X0, "X0", sys.n, sys.d);
  check_shape(out, sys.K, "K", sys.q, sys.q);
  if (static_cast<int>(sys.N.size()) != sys.q) {
    out.push_back("N: expected " + std::to_string(sys.q) + " matrices, got " +
                  std::to_string(sys.N.size()));
  } else {
    for (int i = 0; i < sys.q; ++i)
      check_shape(out, sys.N[i], ("N[" + std::to_string(i) + "]").c_str(), sys.n,
                  sys.n);
  }
  if (static_cast<int>(sys.M.size()) != sys.q) {
    out.push_back("M: expected " + std::to_string(sys.q) + " matrices, got " +
                  std::to_string(sys.M.size()));
  } else {
    for (int i = 0; i < sys.q; ++i)
      check_shape(out, sys.M[i], ("M[" + std::to_string(i) + "]").c_str(), sys.n,
                  sys.m);
  }

  if (sys.K.rows() == sys.q && sys.K.cols() == sys.q) {
    const double kscale = std::max(1.0, sys.K.cwiseAbs().maxCoeff());
    if ((sys.K - sys.K.transpose()).cwiseAbs().maxCoeff() > 1e-12 * kscale) {
      out.push_back("K: not symmetric within 1e-12 relative");
    } else {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(sys.K),
                                                        Eigen::EigenvaluesOnly);
      const double lo = es.eigenvalues().minCoeff();
      const double hi = es.eigenvalues().maxCoeff();
      if (lo < -1e-10 * std::max(1.0, hi)) out.push_back("K: not PSD");
    }
  }
  return out;
}

void require_valid(const StochasticSystem& sys) {
  auto report = validate(sys);
  if (report.empty()) return;
  std::string msg = "invalid system";
  if (!sys.label.empty()) msg += " '" + sys.label + "'";
  for (const auto& r : report) msg += "; " + r;
  throw ValidationError(msg);
}

StabilityReport stability_check(const StochasticSystem& sys,
                                const SolverOptions& opts) {
  require_valid(sys);
  const auto op = kron_matrix(sys, OperatorKind::Lstar, opts);
  Eigen::EigenSolver<Eigen::MatrixXd> es(op.mat, /*computeEigenvectors=*/false);
  StabilityReport rep;
  rep.spectral_abscissa = es.eigenvalues().real().maxCoeff();
  rep.stable = rep.spectral_abscissa < -opts.stability_tol;
  return rep;
}

int HorizonConfig::steps() const {
  if (!(T > 0.0) || !(dt > 0.0) || dt > T * (1.0 + 1e-12))
    throw ValidationError("horizon: need 0 < dt <= T");
  const double ratio = T / dt;
  const auto k = static_cast<long long>(std::llround(ratio));
  if (k < 1 || std::abs(ratio - static_cast<double>(k)) >
                   1e-9 * std::max(1.0, static_cast<double>(k)))
    throw ValidationError("horizon: T/dt must be an integer step count >= 1");
  return static_cast<int>(k);
}

ControlSignal ControlSignal::zero() { return ControlSignal{}; }

ControlSignal ControlSignal::grid(Eigen::MatrixXd values) {
  ControlSignal u;
  u.kind = Kind::grid;
  u.values = std::move(values);
  return u;
}

ControlSignal ControlSignal::step(Eigen::VectorXd amplitude, double onset) {
  ControlSignal u;
  u.kind = Kind::step;
  u.amplitude = std::move(amplitude);
  u.onset = onset;
  return u;
}

ControlSignal ControlSignal::sine(Eigen::VectorXd amplitude, double omega) {
  ControlSignal u;
  u.kind = Kind::sine;
  u.amplitude = std::move(amplitude);
  u.omega = omega;
  return u;
}

void ControlSignal::check_compatible(const HorizonConfig& horizon, int m) const {
  switch (kind) {
    case Kind::zero:
      return;
    case Kind::grid:
      if (values.rows() != horizon.steps() || values.cols() != m)
        throw ValidationError("control grid: expected " +
                              std::to_string(horizon.steps()) + "x" +
                              std::to_string(m) + " values");
      return;
    case Kind::step:
    case Kind::sine:
      if (amplitude.size() != m)
        throw ValidationError("control amplitude: expected length " +
                              std::to_string(m));
      return;
  }
}

Eigen::VectorXd ControlSignal::at(int k, const HorizonConfig& horizon, int m) const {
  switch (kind) {
    case Kind::zero:
      return Eigen::VectorXd::Zero(m);
    case Kind::grid: {
      const int row = std::min<int>(k, static_cast<int>(values.rows()) - 1);
      return values.row(row).transpose();
    }
    case Kind::step:
      return (k * horizon.dt >= onset - 1e-15) ? amplitude
                                               : Eigen::VectorXd::Zero(m);
    case Kind::sine:
      return amplitude * std::sin(omega * k * horizon.dt);
  }
  return Eigen::VectorXd::Zero(m);
}

}  // namespace sbt

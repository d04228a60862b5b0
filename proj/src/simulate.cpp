#include "sbt/simulate.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <atomic>
#include <cmath>
#include <cstring>
#include <random>
#include <thread>

#include "sbt/errors.hpp"
#include "sbt/operators.hpp"

namespace sbt {

namespace detail {

namespace {
inline uint64_t splitmix64(uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}
}  // namespace

uint64_t substream_seed(uint64_t master_seed, uint64_t trajectory_index) {
  return splitmix64(splitmix64(master_seed) ^
                    splitmix64(trajectory_index + 0x632BE59BD9B4E019ULL));
}

Eigen::MatrixXd noise_factor(const Eigen::MatrixXd& K) {
  Eigen::LLT<Eigen::MatrixXd> llt(symmetrize(K));
  if (llt.info() == Eigen::Success) return llt.matrixL();
  // PSD-singular covariance: symmetric eigenvalue square root.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(K));
  if (es.info() != Eigen::Success)
    throw NumericalError("noise_factor: eigendecomposition of K failed");
  const Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

namespace {

constexpr int kBlock = 256;  // fixed trajectory block; part of the determinism contract

/// Row-major flat matrix for the hot loops.
struct FlatMat {
  int rows = 0, cols = 0;
  std::vector<double> a;

  void from(const Eigen::MatrixXd& M) {
    rows = static_cast<int>(M.rows());
    cols = static_cast<int>(M.cols());
    a.resize(static_cast<size_t>(rows) * cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) a[static_cast<size_t>(i) * cols + j] = M(i, j);
  }

  // y = M x
  void mul(const double* x, double* y) const {
    for (int i = 0; i < rows; ++i) {
      const double* row = a.data() + static_cast<size_t>(i) * cols;
      double s = 0.0;
      for (int j = 0; j < cols; ++j) s += row[j] * x[j];
      y[i] = s;
    }
  }

  // y += c * (M x)
  void mul_add(const double* x, double* y, double c) const {
    for (int i = 0; i < rows; ++i) {
      const double* row = a.data() + static_cast<size_t>(i) * cols;
      double s = 0.0;
      for (int j = 0; j < cols; ++j) s += row[j] * x[j];
      y[i] += c * s;
    }
  }
};

/// One linear SDE channel prepared for Euler-Maruyama stepping:
///   x <- (I + dt A) x + dt B u_k + sum_i dw_i (N_i x + M_i u_k).
/// Deterministic per-step input products are precomputed; extra state-free
/// injections (the auxiliary input of the transformation route) are added by
/// the caller per step.
struct Channel {
  int n = 0, q = 0;
  FlatMat Adt;
  std::vector<FlatMat> N;
  // steps x n (dt * B u_k) and steps x (q*n) (M_i u_k); empty when u == 0.
  std::vector<double> drift_inj;
  std::vector<double> noise_inj;
  std::vector<double> x0;  // initial state

  void prepare(const StochasticSystem& sys, const ControlSignal& u,
               const Eigen::VectorXd& init, const HorizonConfig& h) {
    n = sys.n;
    q = sys.q;
    const int steps = h.steps();
    Adt.from(Eigen::MatrixXd::Identity(n, n) + h.dt * sys.A);
    N.resize(q);
    for (int i = 0; i < q; ++i) N[i].from(sys.N[i]);
    x0.assign(init.data(), init.data() + n);
    if (u.kind == ControlSignal::Kind::zero) return;
    drift_inj.resize(static_cast<size_t>(steps) * n);
    noise_inj.resize(static_cast<size_t>(steps) * q * n);
    for (int k = 0; k < steps; ++k) {
      const Eigen::VectorXd uk = u.at(k, h, sys.m);
      Eigen::Map<Eigen::VectorXd>(drift_inj.data() + static_cast<size_t>(k) * n, n) =
          h.dt * (sys.B * uk);
      for (int i = 0; i < q; ++i)
        Eigen::Map<Eigen::VectorXd>(
            noise_inj.data() + (static_cast<size_t>(k) * q + i) * n, n) =
            sys.M[i] * uk;
    }
  }

  // xnew = step(x) with increments dw[q]; scratch has n doubles.
  void step(int k, const double* x, const double* dw, double* scratch,
            double* xnew) const {
    Adt.mul(x, xnew);
    if (!drift_inj.empty()) {
      const double* dj = drift_inj.data() + static_cast<size_t>(k) * n;
      for (int j = 0; j < n; ++j) xnew[j] += dj[j];
    }
    for (int i = 0; i < q; ++i) {
      N[i].mul(x, scratch);
      const double w = dw[i];
      if (!noise_inj.empty()) {
        const double* nj = noise_inj.data() + (static_cast<size_t>(k) * q + i) * n;
        for (int j = 0; j < n; ++j) xnew[j] += w * (scratch[j] + nj[j]);
      } else {
        for (int j = 0; j < n; ++j) xnew[j] += w * scratch[j];
      }
    }
  }
};

struct NoiseGen {
  FlatMat F;  // factor of K
  double sqrt_dt = 0.0;
  int q = 0;

  void prepare(const Eigen::MatrixXd& K, double dt) {
    F.from(detail::noise_factor(K));
    q = F.rows;
    sqrt_dt = std::sqrt(dt);
  }

  template <typename Rng>
  void draw(Rng& rng, std::normal_distribution<double>& nrm, double* xi,
            double* dw) const {
    for (int i = 0; i < q; ++i) xi[i] = nrm(rng);
    F.mul(xi, dw);
    for (int i = 0; i < q; ++i) dw[i] *= sqrt_dt;
  }
};

void check_budget(const SimConfig& cfg, int steps) {
  if (cfg.n_traj < 1) throw ValidationError("sim config: n_traj must be >= 1");
  const double work = static_cast<double>(steps) * cfg.n_traj;
  if (work > cfg.work_budget)
    throw CapacityError("sim config: steps * n_traj = " + std::to_string(work) +
                        " exceeds the work budget " +
                        std::to_string(cfg.work_budget));
}

int resolve_threads(const SimConfig& cfg) {
  if (cfg.threads > 0) return cfg.threads;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Runs fn(block_index, traj_begin, traj_end) over fixed-size trajectory
/// blocks. Block partition is independent of the thread count; callers merge
/// per-block results in block order to stay bit-deterministic.
template <typename Fn>
void run_blocks(int n_traj, int threads, Fn&& fn) {
  const int nblocks = (n_traj + kBlock - 1) / kBlock;
  threads = std::min(threads, nblocks);
  if (threads <= 1) {
    for (int b = 0; b < nblocks; ++b)
      fn(b, b * kBlock, std::min(n_traj, (b + 1) * kBlock));
    return;
  }
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int b = next.fetch_add(1); b < nblocks; b = next.fetch_add(1))
      fn(b, b * kBlock, std::min(n_traj, (b + 1) * kBlock));
  };
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

/// Mean / standard error over per-trajectory values; NaN entries mark flagged
/// (blown-up) trajectories. Aborts when more than 1% are flagged.
ErrorEstimate reduce_values(const std::vector<double>& vals) {
  const int total = static_cast<int>(vals.size());
  int valid = 0;
  double sum = 0.0;
  for (double v : vals)
    if (std::isfinite(v)) {
      ++valid;
      sum += v;
    }
  if (total - valid > 0.01 * total)
    throw NumericalError("simulation: " + std::to_string(total - valid) + " of " +
                         std::to_string(total) +
                         " trajectories blew up (non-finite state)");
  ErrorEstimate est;
  est.n_traj = valid;
  if (valid == 0) return est;
  est.mean_sq = sum / valid;
  double ss = 0.0;
  for (double v : vals)
    if (std::isfinite(v)) ss += (v - est.mean_sq) * (v - est.mean_sq);
  est.std_error = valid > 1 ? std::sqrt(ss / (valid - 1) / valid) : 0.0;
  est.rms = std::sqrt(std::max(0.0, est.mean_sq));
  return est;
}

bool all_finite(const double* x, int n) {
  for (int i = 0; i < n; ++i)
    if (!std::isfinite(x[i])) return false;
  return true;
}

Eigen::VectorXd initial_state(const StochasticSystem& sys, const Eigen::VectorXd& v) {
  if (v.size() != sys.d)
    throw ValidationError("simulate: v must have length d");
  return sys.X0 * v;
}

}  // namespace

SimResult simulate(const StochasticSystem& sys, const ControlSignal& u,
                   const Eigen::VectorXd& v, const SimConfig& cfg,
                   bool keep_states) {
  require_valid(sys);
  const int steps = cfg.horizon.steps();
  u.check_compatible(cfg.horizon, sys.m);
  check_budget(cfg, steps);
  const double bytes = static_cast<double>(cfg.n_traj) * (steps + 1) *
                       (sys.p + (keep_states ? sys.n : 0)) * 8.0;
  if (bytes > 2e9)
    throw CapacityError("simulate: trajectory storage would need " +
                        std::to_string(bytes / 1e9) +
                        " GB; use the streaming entry points");

  Channel ch;
  ch.prepare(sys, u, initial_state(sys, v), cfg.horizon);
  NoiseGen ng;
  ng.prepare(sys.K, cfg.horizon.dt);

  // y_k needs u at every grid node including T.
  Eigen::MatrixXd du(steps + 1, sys.p);
  for (int k = 0; k <= steps; ++k)
    du.row(k) = (sys.D * u.at(k, cfg.horizon, sys.m)).transpose();

  SimResult out;
  out.y.assign(cfg.n_traj, Eigen::MatrixXd());
  if (keep_states) out.x.assign(cfg.n_traj, Eigen::MatrixXd());
  std::vector<double> flags(cfg.n_traj, 0.0);

  run_blocks(cfg.n_traj, resolve_threads(cfg), [&](int, int begin, int end) {
    std::vector<double> x(sys.n), xn(sys.n), scratch(sys.n), xi(sys.q), dw(sys.q);
    for (int j = begin; j < end; ++j) {
      std::mt19937_64 rng(detail::substream_seed(cfg.master_seed, j));
      std::normal_distribution<double> nrm(0.0, 1.0);
      std::memcpy(x.data(), ch.x0.data(), sizeof(double) * sys.n);
      Eigen::MatrixXd ygrid(steps + 1, sys.p);
      Eigen::MatrixXd xgrid;
      if (keep_states) xgrid.resize(steps + 1, sys.n);
      bool ok = true;
      for (int k = 0; k <= steps; ++k) {
        for (int c = 0; c < sys.p; ++c) {
          double s = du(k, c);
          for (int jj = 0; jj < sys.n; ++jj) s += sys.C(c, jj) * x[jj];
          ygrid(k, c) = s;
        }
        if (keep_states)
          for (int jj = 0; jj < sys.n; ++jj) xgrid(k, jj) = x[jj];
        if (k == steps) break;
        ng.draw(rng, nrm, xi.data(), dw.data());
        ch.step(k, x.data(), dw.data(), scratch.data(), xn.data());
        x.swap(xn);
        if (!all_finite(x.data(), sys.n)) {
          ok = false;
          break;
        }
      }
      if (!ok) {
        flags[j] = std::numeric_limits<double>::quiet_NaN();
        continue;
      }
      out.y[j] = std::move(ygrid);
      if (keep_states) out.x[j] = std::move(xgrid);
    }
  });
  reduce_values(flags);  // enforces the 1% blow-up rule
  return out;
}

SimSummary simulate_summary(const StochasticSystem& sys, const ControlSignal& u,
                            const Eigen::VectorXd& v, const SimConfig& cfg) {
  require_valid(sys);
  const int steps = cfg.horizon.steps();
  u.check_compatible(cfg.horizon, sys.m);
  check_budget(cfg, steps);

  Channel ch;
  ch.prepare(sys, u, initial_state(sys, v), cfg.horizon);
  NoiseGen ng;
  ng.prepare(sys.K, cfg.horizon.dt);
  Eigen::MatrixXd du(steps + 1, sys.p);
  for (int k = 0; k <= steps; ++k)
    du.row(k) = (sys.D * u.at(k, cfg.horizon, sys.m)).transpose();

  const int nblocks = (cfg.n_traj + kBlock - 1) / kBlock;
  std::vector<Eigen::MatrixXd> bsum(nblocks), bsq(nblocks);
  std::vector<int> bvalid(nblocks, 0);
  SimSummary out;
  out.terminal_y.setConstant(cfg.n_traj, sys.p,
                             std::numeric_limits<double>::quiet_NaN());

  run_blocks(cfg.n_traj, resolve_threads(cfg), [&](int b, int begin, int end) {
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(steps + 1, sys.p);
    Eigen::MatrixXd sq = Eigen::MatrixXd::Zero(steps + 1, sys.p);
    Eigen::MatrixXd ybuf(steps + 1, sys.p);
    std::vector<double> x(sys.n), xn(sys.n), scratch(sys.n), xi(sys.q), dw(sys.q);
    for (int j = begin; j < end; ++j) {
      std::mt19937_64 rng(detail::substream_seed(cfg.master_seed, j));
      std::normal_distribution<double> nrm(0.0, 1.0);
      std::memcpy(x.data(), ch.x0.data(), sizeof(double) * sys.n);
      bool ok = true;
      for (int k = 0; k <= steps; ++k) {
        for (int c = 0; c < sys.p; ++c) {
          double s = du(k, c);
          for (int jj = 0; jj < sys.n; ++jj) s += sys.C(c, jj) * x[jj];
          ybuf(k, c) = s;
        }
        if (k == steps) break;
        ng.draw(rng, nrm, xi.data(), dw.data());
        ch.step(k, x.data(), dw.data(), scratch.data(), xn.data());
        x.swap(xn);
        if (!all_finite(x.data(), sys.n)) {
          ok = false;
          break;
        }
      }
      if (!ok) continue;  // stays NaN in terminal_y, dropped from moments
      sum += ybuf;
      sq += ybuf.cwiseAbs2();
      out.terminal_y.row(j) = ybuf.row(steps);
      ++bvalid[b];
    }
    bsum[b] = std::move(sum);
    bsq[b] = std::move(sq);
  });

  int valid = 0;
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(steps + 1, sys.p);
  Eigen::MatrixXd sq = Eigen::MatrixXd::Zero(steps + 1, sys.p);
  for (int b = 0; b < nblocks; ++b) {
    sum += bsum[b];
    sq += bsq[b];
    valid += bvalid[b];
  }
  if (cfg.n_traj - valid > 0.01 * cfg.n_traj)
    throw NumericalError("simulate_summary: too many trajectories blew up");
  if (valid == 0) throw NumericalError("simulate_summary: no valid trajectories");
  out.mean_y = sum / valid;
  if (valid > 1)
    out.var_y = ((sq - valid * out.mean_y.cwiseAbs2()) / (valid - 1)).cwiseMax(0.0);
  else
    out.var_y = Eigen::MatrixXd::Zero(steps + 1, sys.p);
  return out;
}

std::vector<ErrorEstimate> coupled_error_sweep(const StochasticSystem& sys,
                                               const std::vector<ControlReduction>& reds,
                                               const ControlSignal& u,
                                               const Eigen::VectorXd& v,
                                               const SimConfig& cfg) {
  require_valid(sys);
  const int steps = cfg.horizon.steps();
  u.check_compatible(cfg.horizon, sys.m);
  check_budget(cfg, steps);
  if (reds.empty()) return {};

  const int R = static_cast<int>(reds.size());
  Channel full;
  full.prepare(sys, u, initial_state(sys, v), cfg.horizon);
  std::vector<Channel> red(R);
  std::vector<StochasticSystem> rsys;
  rsys.reserve(R);
  for (int i = 0; i < R; ++i) {
    const auto& rom = reds[i].rom;
    if (rom.pair_kind != PairKind::control)
      throw ValidationError("coupled_error: control-kind reduction required");
    rsys.push_back(rom.to_system(sys));
    if (rsys.back().m != sys.m || rsys.back().p != sys.p || rsys.back().q != sys.q)
      throw ValidationError("coupled_error: reduction incompatible with the system");
    red[i].prepare(rsys.back(), u, Eigen::VectorXd::Zero(rom.r), cfg.horizon);
  }
  NoiseGen ng;
  ng.prepare(sys.K, cfg.horizon.dt);

  // y - y_r = C x - C1 z; the feedthrough cancels.
  std::vector<std::vector<double>> vals(R, std::vector<double>(cfg.n_traj, 0.0));

  run_blocks(cfg.n_traj, resolve_threads(cfg), [&](int, int begin, int end) {
    const int n = sys.n, p = sys.p, qn = sys.q;
    std::vector<double> x(n), xn(n), scratch(n), xi(qn), dw(qn);
    std::vector<std::vector<double>> z(R), zn(R);
    for (int i = 0; i < R; ++i) {
      z[i].resize(reds[i].rom.r);
      zn[i].resize(reds[i].rom.r);
    }
    std::vector<double> yf(p), yr(p);
    for (int j = begin; j < end; ++j) {
      std::mt19937_64 rng(detail::substream_seed(cfg.master_seed, j));
      std::normal_distribution<double> nrm(0.0, 1.0);
      std::memcpy(x.data(), full.x0.data(), sizeof(double) * n);
      for (int i = 0; i < R; ++i) std::fill(z[i].begin(), z[i].end(), 0.0);
      std::vector<double> acc(R, 0.0);
      bool ok = true;
      for (int k = 0; k < steps && ok; ++k) {
        for (int c = 0; c < p; ++c) {
          double s = 0.0;
          for (int jj = 0; jj < n; ++jj) s += sys.C(c, jj) * x[jj];
          yf[c] = s;
        }
        for (int i = 0; i < R; ++i) {
          const auto& C1 = reds[i].rom.C1;
          const int r = reds[i].rom.r;
          double e = 0.0;
          for (int c = 0; c < p; ++c) {
            double s = 0.0;
            for (int jj = 0; jj < r; ++jj) s += C1(c, jj) * z[i][jj];
            const double dphi = yf[c] - s;
            e += dphi * dphi;
          }
          acc[i] += e;
        }
        ng.draw(rng, nrm, xi.data(), dw.data());
        full.step(k, x.data(), dw.data(), scratch.data(), xn.data());
        x.swap(xn);
        for (int i = 0; i < R; ++i) {
          red[i].step(k, z[i].data(), dw.data(), scratch.data(), zn[i].data());
          z[i].swap(zn[i]);
        }
        if (!all_finite(x.data(), n)) ok = false;
      }
      for (int i = 0; i < R; ++i)
        vals[i][j] = ok ? acc[i] * cfg.horizon.dt
                        : std::numeric_limits<double>::quiet_NaN();
    }
  });

  std::vector<ErrorEstimate> out;
  out.reserve(R);
  for (int i = 0; i < R; ++i) out.push_back(reduce_values(vals[i]));
  return out;
}

ErrorEstimate coupled_error(const StochasticSystem& sys, const ControlReduction& red,
                            const ControlSignal& u, const Eigen::VectorXd& v,
                            const SimConfig& cfg) {
  return coupled_error_sweep(sys, {red}, u, v, cfg).front();
}

ErrorEstimate coupled_error(const StochasticSystem& sys, const Approach1Result& res,
                            const ControlSignal& u, const Eigen::VectorXd& v,
                            const SimConfig& cfg) {
  require_valid(sys);
  const int steps = cfg.horizon.steps();
  u.check_compatible(cfg.horizon, sys.m);
  check_budget(cfg, steps);
  const auto& rom = res.reduction.rom;
  const int r = rom.r, n = sys.n, p = sys.p, qn = sys.q, m = sys.m;
  const int r0 = res.aux.r0(sys);
  const bool scalar_u0 = res.aux.kind != AuxiliarySpec::Kind::custom;
  if (!scalar_u0 && (!res.aux.u0 || !res.aux.u0->path))
    throw ValidationError("coupled_error: custom auxiliary kind needs a u0 path");

  // Full system runs as given; the ROM of the transformed system is driven by
  // the extended input [u; u0 v]. Split the ROM input blocks accordingly.
  const Eigen::MatrixXd B1u = rom.B1->leftCols(m);
  const Eigen::MatrixXd B1v = rom.B1->rightCols(r0);
  std::vector<Eigen::MatrixXd> M1u(qn), M1v(qn);
  for (int i = 0; i < qn; ++i) {
    M1u[i] = rom.M1[i].leftCols(m);
    M1v[i] = rom.M1[i].rightCols(r0);
  }
  const Eigen::MatrixXd V0 = res.aux.effective_V0(sys);
  const Eigen::MatrixXd CV0 = sys.C * V0;

  // Deterministic parts of the ROM injections (from u alone).
  StochasticSystem rom_u = StochasticSystem::zeros(r, m, p, qn, sys.d);
  rom_u.A = rom.A11;
  rom_u.B = B1u;
  rom_u.N = rom.N11;
  rom_u.M = M1u;
  rom_u.K = sys.K;
  rom_u.C = rom.C1;
  Channel redch;
  redch.prepare(rom_u, u, Eigen::VectorXd::Zero(r), cfg.horizon);
  Channel full;
  full.prepare(sys, u, initial_state(sys, v), cfg.horizon);
  NoiseGen ng;
  ng.prepare(sys.K, cfg.horizon.dt);

  // Random-part injection directions (scaled by phi_k for zero/scalar kinds).
  const Eigen::VectorXd bveq = cfg.horizon.dt * (B1v * v);
  std::vector<Eigen::VectorXd> mveq(qn);
  for (int i = 0; i < qn; ++i) mveq[i] = M1v[i] * v;
  const Eigen::VectorXd cv0v = CV0 * v;
  // scalar kind: u0(t) = exp(a t + sum_i gamma_i w_i(t)) I, a = -alpha - 0.5 g^T K g
  const double drift_a =
      res.aux.kind == AuxiliarySpec::Kind::scalar
          ? -res.aux.alpha - 0.5 * res.aux.gammas.dot(sys.K * res.aux.gammas)
          : 0.0;

  std::vector<double> vals(cfg.n_traj, 0.0);
  run_blocks(cfg.n_traj, resolve_threads(cfg), [&](int, int begin, int end) {
    std::vector<double> x(n), xn(n), z(r), zn(r), scratch(std::max(n, r)), xi(qn),
        dw(qn), wacc(qn);
    for (int j = begin; j < end; ++j) {
      std::mt19937_64 rng(detail::substream_seed(cfg.master_seed, j));
      std::normal_distribution<double> nrm(0.0, 1.0);
      std::memcpy(x.data(), full.x0.data(), sizeof(double) * n);
      std::fill(z.begin(), z.end(), 0.0);
      std::fill(wacc.begin(), wacc.end(), 0.0);
      double acc = 0.0;
      bool ok = true;
      for (int k = 0; k < steps && ok; ++k) {
        const double t = k * cfg.horizon.dt;
        double phi = 1.0;
        Eigen::VectorXd u0v;
        if (res.aux.kind == AuxiliarySpec::Kind::scalar) {
          double e = drift_a * t;
          for (int i = 0; i < qn; ++i) e += res.aux.gammas(i) * wacc[i];
          phi = std::exp(e);
        } else if (res.aux.kind == AuxiliarySpec::Kind::custom) {
          const Eigen::VectorXd w =
              Eigen::Map<const Eigen::VectorXd>(wacc.data(), qn);
          u0v = res.aux.u0->path(t, w) * v;
        }
        // y - y~_r = C x - C1 z - (C V0)(u0 v)
        double e2 = 0.0;
        for (int c = 0; c < p; ++c) {
          double s = 0.0;
          for (int jj = 0; jj < n; ++jj) s += sys.C(c, jj) * x[jj];
          double sr = 0.0;
          for (int jj = 0; jj < r; ++jj) sr += rom.C1(c, jj) * z[jj];
          double aux_term = scalar_u0 ? phi * cv0v(c) : (CV0 * u0v)(c);
          const double dphi = s - sr - aux_term;
          e2 += dphi * dphi;
        }
        acc += e2;

        ng.draw(rng, nrm, xi.data(), dw.data());
        full.step(k, x.data(), dw.data(), scratch.data(), xn.data());
        redch.step(k, z.data(), dw.data(), scratch.data(), zn.data());
        // add the u0-driven injections (left-endpoint sampling)
        if (scalar_u0) {
          for (int jj = 0; jj < r; ++jj) zn[jj] += phi * bveq(jj);
          for (int i = 0; i < qn; ++i)
            for (int jj = 0; jj < r; ++jj) zn[jj] += dw[i] * phi * mveq[i](jj);
        } else {
          const Eigen::VectorXd bi = cfg.horizon.dt * (B1v * u0v);
          for (int jj = 0; jj < r; ++jj) zn[jj] += bi(jj);
          for (int i = 0; i < qn; ++i) {
            const Eigen::VectorXd mi = M1v[i] * u0v;
            for (int jj = 0; jj < r; ++jj) zn[jj] += dw[i] * mi(jj);
          }
        }
        x.swap(xn);
        z.swap(zn);
        for (int i = 0; i < qn; ++i) wacc[i] += dw[i];
        if (!all_finite(x.data(), n) || !all_finite(z.data(), r)) ok = false;
      }
      vals[j] = ok ? acc * cfg.horizon.dt : std::numeric_limits<double>::quiet_NaN();
    }
  });
  return reduce_values(vals);
}

ErrorEstimate coupled_error(const StochasticSystem& sys, const Approach2Result& res,
                            const ControlSignal& u, const Eigen::VectorXd& v,
                            const SimConfig& cfg) {
  require_valid(sys);
  const int steps = cfg.horizon.steps();
  u.check_compatible(cfg.horizon, sys.m);
  check_budget(cfg, steps);
  const auto& romc = res.control.rom;
  const auto& romi = res.rom_init;
  const int n = sys.n, p = sys.p, qn = sys.q;
  const int rc = romc.r, ri = romi.r;

  Channel full, chc, chi;
  full.prepare(sys, u, initial_state(sys, v), cfg.horizon);
  chc.prepare(romc.to_system(sys), u, Eigen::VectorXd::Zero(rc), cfg.horizon);
  chi.prepare(romi.to_system(sys), ControlSignal::zero(), (*romi.X01) * v,
              cfg.horizon);
  NoiseGen ng;
  ng.prepare(sys.K, cfg.horizon.dt);

  // y - y_r - y_r(init) = C x - C1c z - C1i w (feedthroughs cancel).
  std::vector<double> vals(cfg.n_traj, 0.0);
  run_blocks(cfg.n_traj, resolve_threads(cfg), [&](int, int begin, int end) {
    std::vector<double> x(n), xn(n), z(rc), zn(rc), w(ri), wn(ri),
        scratch(std::max({n, rc, ri})), xi(qn), dw(qn);
    for (int j = begin; j < end; ++j) {
      std::mt19937_64 rng(detail::substream_seed(cfg.master_seed, j));
      std::normal_distribution<double> nrm(0.0, 1.0);
      std::memcpy(x.data(), full.x0.data(), sizeof(double) * n);
      std::memcpy(w.data(), chi.x0.data(), sizeof(double) * ri);
      std::fill(z.begin(), z.end(), 0.0);
      double acc = 0.0;
      bool ok = true;
      for (int k = 0; k < steps && ok; ++k) {
        double e2 = 0.0;
        for (int c = 0; c < p; ++c) {
          double s = 0.0;
          for (int jj = 0; jj < n; ++jj) s += sys.C(c, jj) * x[jj];
          for (int jj = 0; jj < rc; ++jj) s -= romc.C1(c, jj) * z[jj];
          for (int jj = 0; jj < ri; ++jj) s -= romi.C1(c, jj) * w[jj];
          e2 += s * s;
        }
        acc += e2;
        ng.draw(rng, nrm, xi.data(), dw.data());
        full.step(k, x.data(), dw.data(), scratch.data(), xn.data());
        chc.step(k, z.data(), dw.data(), scratch.data(), zn.data());
        chi.step(k, w.data(), dw.data(), scratch.data(), wn.data());
        x.swap(xn);
        z.swap(zn);
        w.swap(wn);
        if (!all_finite(x.data(), n)) ok = false;
      }
      vals[j] = ok ? acc * cfg.horizon.dt : std::numeric_limits<double>::quiet_NaN();
    }
  });
  return reduce_values(vals);
}

ErrorEstimate l2_norm_sq(const ControlSignal& u, const HorizonConfig& horizon,
                         int m) {
  const int steps = horizon.steps();
  u.check_compatible(horizon, m);
  double acc = 0.0;
  for (int k = 0; k < steps; ++k) acc += u.at(k, horizon, m).squaredNorm();
  ErrorEstimate est;
  est.mean_sq = acc * horizon.dt;
  est.rms = std::sqrt(est.mean_sq);
  est.n_traj = 1;
  return est;
}

ErrorEstimate mc_l2_norm(const std::vector<Eigen::MatrixXd>& grids,
                         const HorizonConfig& horizon) {
  const int steps = horizon.steps();
  std::vector<double> vals;
  vals.reserve(grids.size());
  for (const auto& g : grids) {
    if (g.rows() != steps + 1 && g.rows() != steps)
      throw ValidationError("mc_l2_norm: grid rows must match the horizon");
    double acc = 0.0;
    for (int k = 0; k < steps; ++k) acc += g.row(k).squaredNorm();
    vals.push_back(acc * horizon.dt);
  }
  return reduce_values(vals);
}

std::vector<EnergyMargin> check_energy_estimate(const StochasticSystem& sys,
                                                const GramianReport& P,
                                                const ControlSignal& u,
                                                const SimConfig& cfg) {
  require_valid(sys);
  if (P.role != GramianRole::reach_lmi)
    throw ValidationError("check_energy_estimate: reach_lmi Gramian required");
  const int steps = cfg.horizon.steps();
  u.check_compatible(cfg.horizon, sys.m);
  check_budget(cfg, steps);
  const int n = sys.n, qn = sys.q;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(P.G));
  if (es.info() != Eigen::Success)
    throw NumericalError("check_energy_estimate: eigendecomposition failed");
  const Eigen::VectorXd lambda = es.eigenvalues();  // ascending
  const Eigen::MatrixXd V = es.eigenvectors();
  FlatMat Vt;
  Vt.from(V.transpose());

  // The estimate is stated for zero initial state.
  Channel ch;
  ch.prepare(sys, u, Eigen::VectorXd::Zero(n), cfg.horizon);
  NoiseGen ng;
  ng.prepare(sys.K, cfg.horizon.dt);

  const int nblocks = (cfg.n_traj + kBlock - 1) / kBlock;
  std::vector<Eigen::MatrixXd> bsum(nblocks), bsq(nblocks);
  std::vector<int> bvalid(nblocks, 0);

  run_blocks(cfg.n_traj, resolve_threads(cfg), [&](int b, int begin, int end) {
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(steps + 1, n);
    Eigen::MatrixXd sq = Eigen::MatrixXd::Zero(steps + 1, n);
    Eigen::MatrixXd gbuf(steps + 1, n);
    std::vector<double> x(n), xn(n), scratch(n), xi(qn), dw(qn), g(n);
    for (int j = begin; j < end; ++j) {
      std::mt19937_64 rng(detail::substream_seed(cfg.master_seed, j));
      std::normal_distribution<double> nrm(0.0, 1.0);
      std::fill(x.begin(), x.end(), 0.0);
      bool ok = true;
      for (int k = 0; k <= steps; ++k) {
        Vt.mul(x.data(), g.data());
        for (int i = 0; i < n; ++i) gbuf(k, i) = g[i] * g[i];
        if (k == steps) break;
        ng.draw(rng, nrm, xi.data(), dw.data());
        ch.step(k, x.data(), dw.data(), scratch.data(), xn.data());
        x.swap(xn);
        if (!all_finite(x.data(), n)) {
          ok = false;
          break;
        }
      }
      if (!ok) continue;
      sum += gbuf;
      sq += gbuf.cwiseAbs2();
      ++bvalid[b];
    }
    bsum[b] = std::move(sum);
    bsq[b] = std::move(sq);
  });

  int valid = 0;
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(steps + 1, n);
  Eigen::MatrixXd sq = Eigen::MatrixXd::Zero(steps + 1, n);
  for (int b = 0; b < nblocks; ++b) {
    sum += bsum[b];
    sq += bsq[b];
    valid += bvalid[b];
  }
  if (cfg.n_traj - valid > 0.01 * cfg.n_traj || valid == 0)
    throw NumericalError("check_energy_estimate: too many trajectories blew up");

  const double u_sq = l2_norm_sq(u, cfg.horizon, sys.m).mean_sq;
  std::vector<EnergyMargin> out(n);
  for (int i = 0; i < n; ++i) {
    // report in descending-eigenvalue order to match the HSV convention
    const int src = n - 1 - i;
    EnergyMargin em;
    em.lambda = lambda(src);
    em.bound = em.lambda * P.gamma * u_sq;
    int argmax = 0;
    double best = -1.0;
    for (int k = 0; k <= steps; ++k) {
      const double mean = sum(k, src) / valid;
      if (mean > best) {
        best = mean;
        argmax = k;
      }
    }
    em.sup_estimate = best;
    const double mean = sum(argmax, src) / valid;
    const double var =
        valid > 1 ? std::max(0.0, (sq(argmax, src) - valid * mean * mean) /
                                      (valid - 1))
                  : 0.0;
    em.std_error = std::sqrt(var / valid);
    em.margin = em.bound - em.sup_estimate;
    out[i] = em;
  }
  return out;
}

ItoCheck check_ito_lemma(const StochasticSystem& sys, const ControlSignal& u,
                         const Eigen::VectorXd& v, const SimConfig& cfg) {
  require_valid(sys);
  const int steps = cfg.horizon.steps();
  u.check_compatible(cfg.horizon, sys.m);
  check_budget(cfg, steps);
  const int n = sys.n, qn = sys.q;

  Channel ch;
  ch.prepare(sys, u, initial_state(sys, v), cfg.horizon);
  NoiseGen ng;
  ng.prepare(sys.K, cfg.horizon.dt);

  // Per-step control products for the drift/diffusion grids of the identity.
  std::vector<Eigen::VectorXd> Bu(steps), Mu(static_cast<size_t>(steps) * qn);
  for (int k = 0; k < steps; ++k) {
    const Eigen::VectorXd uk = u.at(k, cfg.horizon, sys.m);
    Bu[k] = sys.B * uk;
    for (int i = 0; i < qn; ++i) Mu[static_cast<size_t>(k) * qn + i] = sys.M[i] * uk;
  }
  FlatMat Af;
  Af.from(sys.A);
  std::vector<FlatMat> Nf(qn);
  for (int i = 0; i < qn; ++i) Nf[i].from(sys.N[i]);

  std::vector<double> lhs_vals(cfg.n_traj), rhs_vals(cfg.n_traj),
      gap_vals(cfg.n_traj);
  run_blocks(cfg.n_traj, resolve_threads(cfg), [&](int, int begin, int end) {
    std::vector<double> x(n), xn(n), scratch(n), xi(qn), dw(qn), drift(n);
    std::vector<std::vector<double>> diff(qn, std::vector<double>(n));
    for (int j = begin; j < end; ++j) {
      std::mt19937_64 rng(detail::substream_seed(cfg.master_seed, j));
      std::normal_distribution<double> nrm(0.0, 1.0);
      std::memcpy(x.data(), ch.x0.data(), sizeof(double) * n);
      double x0sq = 0.0;
      for (int jj = 0; jj < n; ++jj) x0sq += x[jj] * x[jj];
      double quad = 0.0;
      bool ok = true;
      for (int k = 0; k < steps && ok; ++k) {
        Af.mul(x.data(), drift.data());
        for (int jj = 0; jj < n; ++jj) drift[jj] += Bu[k](jj);
        double h = 0.0;
        for (int jj = 0; jj < n; ++jj) h += 2.0 * x[jj] * drift[jj];
        for (int i = 0; i < qn; ++i) {
          Nf[i].mul(x.data(), diff[i].data());
          const auto& mu = Mu[static_cast<size_t>(k) * qn + i];
          for (int jj = 0; jj < n; ++jj) diff[i][jj] += mu(jj);
        }
        for (int i = 0; i < qn; ++i)
          for (int jj = 0; jj < qn; ++jj) {
            if (sys.K(i, jj) == 0.0) continue;
            double dot = 0.0;
            for (int c = 0; c < n; ++c) dot += diff[i][c] * diff[jj][c];
            h += sys.K(i, jj) * dot;
          }
        quad += h;
        ng.draw(rng, nrm, xi.data(), dw.data());
        ch.step(k, x.data(), dw.data(), scratch.data(), xn.data());
        x.swap(xn);
        if (!all_finite(x.data(), n)) ok = false;
      }
      if (!ok) {
        lhs_vals[j] = rhs_vals[j] = gap_vals[j] =
            std::numeric_limits<double>::quiet_NaN();
        continue;
      }
      double xTsq = 0.0;
      for (int jj = 0; jj < n; ++jj) xTsq += x[jj] * x[jj];
      const double lhs = xTsq - x0sq;
      const double rhs = quad * cfg.horizon.dt;
      lhs_vals[j] = lhs;
      rhs_vals[j] = rhs;
      gap_vals[j] = lhs - rhs;
    }
  });

  const auto lhs = reduce_values(lhs_vals);
  const auto rhs = reduce_values(rhs_vals);
  const auto gap = reduce_values(gap_vals);
  ItoCheck out;
  out.lhs = lhs.mean_sq;
  out.rhs = rhs.mean_sq;
  out.discrepancy = gap.mean_sq;
  out.std_error = gap.std_error;
  return out;
}

}  // namespace sbt

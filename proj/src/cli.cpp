#include "cli.hpp"

#include <iostream>
#include <sstream>

#include "json_util.hpp"
#include "sbt/balancing.hpp"
#include "sbt/errors.hpp"
#include "sbt/gramians.hpp"

#ifndef SBT_VERSION
#define SBT_VERSION "0.0.0"
#endif

namespace sbt::cli {

namespace {

using nlohmann::json;

json tolerances_json(const SolverOptions& tol) {
  return json{{"psd_tol", tol.psd_tol},
              {"eq_residual_tol", tol.eq_residual_tol},
              {"stability_tol", tol.stability_tol}};
}

ControlSignal control_from_json(const json& j) {
  const std::string kind = j.value("kind", "zero");
  if (kind == "zero") return ControlSignal::zero();
  if (kind == "grid")
    return ControlSignal::grid(detail::matrix_from_json(
        detail::require_field(j, "values"), "control.values"));
  Eigen::VectorXd amp;
  {
    const auto& a = detail::require_field(j, "amplitude");
    if (!a.is_array()) throw ParseError("control.amplitude: expected an array");
    amp.resize(a.size());
    for (size_t i = 0; i < a.size(); ++i) amp(i) = a[i].get<double>();
  }
  if (kind == "step") return ControlSignal::step(amp, j.value("onset", 0.0));
  if (kind == "sine")
    return ControlSignal::sine(amp, detail::require_field(j, "omega").get<double>());
  throw ParseError("control.kind: unknown kind \"" + kind + "\"");
}

AuxiliarySpec aux_from_json(const json& j) {
  const std::string kind = j.value("kind", "zero");
  if (kind == "zero") return AuxiliarySpec::zero_kind();
  if (kind == "scalar") {
    const auto& g = detail::require_field(j, "gammas");
    if (!g.is_array()) throw ParseError("aux.gammas: expected an array");
    Eigen::VectorXd gam(g.size());
    for (size_t i = 0; i < g.size(); ++i) gam(i) = g[i].get<double>();
    return AuxiliarySpec::scalar_kind(detail::require_field(j, "alpha").get<double>(),
                                      gam);
  }
  throw ParseError("aux.kind: \"" + kind +
                   "\" is not configurable from file (zero|scalar)");
}

json diagnostics_json(const std::map<std::string, double>& diag) {
  json out = json::object();
  for (const auto& [k, v] : diag) out[k] = v;
  return out;
}

void write_json(const std::filesystem::path& path, const json& j) {
  sbt::detail::write_file_atomic(path, j.dump(2) + "\n");
}

Eigen::VectorXd resolve_v(const RunConfig& cfg, const StochasticSystem& sys) {
  if (cfg.v.size() == 0) return Eigen::VectorXd::Ones(sys.d);
  if (cfg.v.size() != sys.d)
    throw ValidationError("config: v must have length d = " + std::to_string(sys.d));
  return cfg.v;
}

StochasticSystem load_checked(const RunConfig& cfg) {
  StochasticSystem sys = load_system(cfg.system_path);
  const auto report = validate(sys);
  if (!report.empty()) {
    std::string msg = "system validation failed";
    for (const auto& r : report) msg += "; " + r;
    throw ValidationError(msg);
  }
  return sys;
}

json base_report(const RunConfig& cfg) {
  return json{{"version", SBT_VERSION},
              {"seed", cfg.sim.master_seed},
              {"tolerances", tolerances_json(cfg.tol)}};
}

}  // namespace

RunConfig load_run_config(const std::filesystem::path& path) {
  const json j = detail::read_json_file(path);
  RunConfig cfg;
  if (j.contains("system")) cfg.system_path = j["system"].get<std::string>();
  if (j.contains("out")) cfg.out_dir = j["out"].get<std::string>();
  if (j.contains("strategy")) {
    const auto& s = j["strategy"];
    cfg.strategy.strategy = s.value("strategy", cfg.strategy.strategy);
    cfg.strategy.r = s.value("r", cfg.strategy.r);
    cfg.strategy.r_bold = s.value("r_bold", cfg.strategy.r_bold);
    cfg.strategy.gamma = s.value("gamma", cfg.strategy.gamma);
    cfg.strategy.gamma_tilde = s.value("gamma_tilde", cfg.strategy.gamma_tilde);
    if (s.contains("aux")) cfg.strategy.aux = aux_from_json(s["aux"]);
  }
  if (j.contains("sim")) {
    const auto& s = j["sim"];
    cfg.sim.horizon.T = s.value("T", cfg.sim.horizon.T);
    cfg.sim.horizon.dt = s.value("dt", cfg.sim.horizon.dt);
    cfg.sim.n_traj = s.value("n_traj", cfg.sim.n_traj);
    cfg.sim.master_seed = s.value("seed", cfg.sim.master_seed);
    cfg.sim.threads = s.value("threads", cfg.sim.threads);
  }
  if (j.contains("control")) cfg.control = control_from_json(j["control"]);
  if (j.contains("v")) {
    const auto& a = j["v"];
    if (!a.is_array()) throw ParseError("config: v must be an array");
    cfg.v.resize(a.size());
    for (size_t i = 0; i < a.size(); ++i) cfg.v(i) = a[i].get<double>();
  }
  if (j.contains("tolerances")) {
    const auto& t = j["tolerances"];
    cfg.tol.psd_tol = t.value("psd_tol", cfg.tol.psd_tol);
    cfg.tol.eq_residual_tol = t.value("eq_residual_tol", cfg.tol.eq_residual_tol);
    cfg.tol.stability_tol = t.value("stability_tol", cfg.tol.stability_tol);
  }
  cfg.verbosity = j.value("verbosity", cfg.verbosity);
  return cfg;
}

int cmd_analyze(const RunConfig& cfg) {
  const StochasticSystem sys = load_checked(cfg);
  const auto stab = stability_check(sys, cfg.tol);
  if (!stab.stable)
    throw NumericalError("system is not mean-square asymptotically stable: "
                         "spectral abscissa = " +
                         std::to_string(stab.spectral_abscissa));

  const auto P = solve_lmi_reach(sys.with_zero_initial_state(), cfg.strategy.gamma,
                                 cfg.tol);
  const auto Q = solve_obs_eq(sys, cfg.tol);
  const auto Pb = solve_type1_reach(sys, cfg.tol);
  const Eigen::VectorXd sigma = hsv(P, Q);
  const Eigen::VectorXd theta = hsv(Pb, Q);

  std::filesystem::create_directories(cfg.out_dir);
  save_hsv_csv(sigma, cfg.out_dir / "hsv_sigma.csv");
  save_hsv_csv(theta, cfg.out_dir / "hsv_theta.csv");

  json report = base_report(cfg);
  report["stability"] = {{"stable", stab.stable},
                         {"spectral_abscissa", stab.spectral_abscissa}};
  report["gramians"] = {
      {"reach_lmi", diagnostics_json(P.diagnostics)},
      {"obs_eq", diagnostics_json(Q.diagnostics)},
      {"reach_type1", diagnostics_json(Pb.diagnostics)},
  };
  report["gamma"] = cfg.strategy.gamma;
  write_json(cfg.out_dir / "gramian_diagnostics.json", report);

  std::ostringstream os;
  os.precision(12);
  os << "system: " << cfg.system_path.string() << " (n=" << sys.n << ", m=" << sys.m
     << ", p=" << sys.p << ", q=" << sys.q << ", d=" << sys.d << ")\n"
     << "mean-square stable: yes (spectral abscissa " << stab.spectral_abscissa
     << ")\n"
     << "control HSVs (gamma=" << cfg.strategy.gamma << "):";
  for (Eigen::Index i = 0; i < sigma.size(); ++i) os << " " << sigma(i);
  os << "\ninitial-state HSVs:";
  for (Eigen::Index i = 0; i < theta.size(); ++i) os << " " << theta(i);
  os << "\n";
  detail::write_file_atomic(cfg.out_dir / "analyze_summary.txt", os.str());
  if (cfg.verbosity > 0) std::cout << os.str();
  return kOk;
}

namespace {

json reduce_report_approach1(const RunConfig& cfg, const StochasticSystem& sys,
                             const Approach1Result& res) {
  const Eigen::VectorXd v = resolve_v(cfg, sys);
  const double u_l2 =
      std::sqrt(l2_norm_sq(cfg.control, cfg.sim.horizon, sys.m).mean_sq);
  const double e0 = u0_energy(res.aux, sys.K, cfg.sim.horizon.T);
  const double total = approach1_bound(res, u_l2, v.norm(), e0);
  json rep = base_report(cfg);
  rep["strategy"] = "approach1";
  rep["parameters"] = {{"r", cfg.strategy.r},
                       {"gamma_tilde", res.gamma_tilde},
                       {"T", cfg.sim.horizon.T}};
  rep["terms"] = {{"hsv_tail", res.reduction.rom.sigma_truncated.sum()},
                  {"u_l2norm", u_l2},
                  {"v_2norm", v.norm()},
                  {"u0_energy", e0}};
  rep["sigma_tilde"] = std::vector<double>(
      res.sigma_tilde.data(), res.sigma_tilde.data() + res.sigma_tilde.size());
  rep["total"] = total;
  return rep;
}

json reduce_report_approach2(const RunConfig& cfg, const StochasticSystem& sys,
                             const Approach2Result& res) {
  const Eigen::VectorXd v = resolve_v(cfg, sys);
  const double u_l2 =
      std::sqrt(l2_norm_sq(cfg.control, cfg.sim.horizon, sys.m).mean_sq);
  const auto bound = approach2_bound(res, u_l2, v.norm());
  json rep = base_report(cfg);
  rep["strategy"] = "approach2";
  rep["parameters"] = {{"r", cfg.strategy.r},
                       {"r_bold", cfg.strategy.r_bold},
                       {"gamma", res.gamma},
                       {"T", cfg.sim.horizon.T}};
  rep["terms"] = {{"apriori_term", bound.apriori_term},
                  {"aposteriori_term", bound.aposteriori_term},
                  {"theta2_w_trace", theta2_w_trace(res)},
                  {"u_l2norm", u_l2},
                  {"v_2norm", v.norm()},
                  {"trace_clamped", bound.trace_clamped}};
  rep["sigma"] =
      std::vector<double>(res.sigma.data(), res.sigma.data() + res.sigma.size());
  rep["theta"] =
      std::vector<double>(res.theta.data(), res.theta.data() + res.theta.size());
  rep["total"] = bound.total;
  return rep;
}

}  // namespace

int cmd_reduce(const RunConfig& cfg) {
  const StochasticSystem sys = load_checked(cfg);
  cfg.control.check_compatible(cfg.sim.horizon, sys.m);
  std::filesystem::create_directories(cfg.out_dir);

  if (cfg.strategy.strategy == "approach1") {
    const auto res = approach1_reduce(sys, cfg.strategy.aux, cfg.strategy.r,
                                      cfg.strategy.gamma_tilde, cfg.tol);
    save_system(res.reduction.rom.to_system(res.transformed),
                cfg.out_dir / "reduced_approach1.json");
    write_json(cfg.out_dir / "bound_approach1.json",
               reduce_report_approach1(cfg, sys, res));
    if (cfg.verbosity > 0)
      std::cout << "approach1: r=" << cfg.strategy.r << ", bound total = "
                << reduce_report_approach1(cfg, sys, res)["total"].get<double>()
                << "\n";
    return kOk;
  }
  if (cfg.strategy.strategy == "approach2") {
    const auto res = approach2_reduce(sys, cfg.strategy.r, cfg.strategy.r_bold,
                                      cfg.strategy.gamma, cfg.tol);
    save_system(res.control.rom.to_system(sys),
                cfg.out_dir / "reduced_control.json");
    save_system(res.rom_init.to_system(sys),
                cfg.out_dir / "reduced_initial_state.json");
    const json rep = reduce_report_approach2(cfg, sys, res);
    write_json(cfg.out_dir / "bound_approach2.json", rep);
    if (cfg.verbosity > 0)
      std::cout << "approach2: r=" << cfg.strategy.r << ", r_bold="
                << cfg.strategy.r_bold << ", bound total = "
                << rep["total"].get<double>() << "\n";
    return kOk;
  }
  throw ValidationError("unknown strategy \"" + cfg.strategy.strategy + "\"");
}

int cmd_simulate(const RunConfig& cfg) {
  const StochasticSystem sys = load_checked(cfg);
  const Eigen::VectorXd v = resolve_v(cfg, sys);
  const auto summary = simulate_summary(sys, cfg.control, v, cfg.sim);
  std::filesystem::create_directories(cfg.out_dir);
  std::ostringstream os;
  os.precision(17);
  os << "t";
  for (int c = 1; c <= sys.p; ++c) os << ",mean_y_" << c;
  for (int c = 1; c <= sys.p; ++c) os << ",var_y_" << c;
  os << "\n";
  for (Eigen::Index k = 0; k < summary.mean_y.rows(); ++k) {
    os << k * cfg.sim.horizon.dt;
    for (int c = 0; c < sys.p; ++c) os << "," << summary.mean_y(k, c);
    for (int c = 0; c < sys.p; ++c) os << "," << summary.var_y(k, c);
    os << "\n";
  }
  detail::write_file_atomic(cfg.out_dir / "summary.csv", os.str());
  if (cfg.verbosity > 0)
    std::cout << "simulate: wrote " << (cfg.out_dir / "summary.csv").string()
              << "\n";
  return kOk;
}

int cmd_verify(const RunConfig& cfg) {
  const StochasticSystem sys = load_checked(cfg);
  const Eigen::VectorXd v = resolve_v(cfg, sys);
  cfg.control.check_compatible(cfg.sim.horizon, sys.m);
  std::filesystem::create_directories(cfg.out_dir);

  const double u_l2 =
      std::sqrt(l2_norm_sq(cfg.control, cfg.sim.horizon, sys.m).mean_sq);
  json checks = json::array();
  bool all_pass = true;
  auto add_check = [&](const std::string& name, double empirical, double limit,
                       double std_error, bool pass) {
    checks.push_back(json{{"name", name},
                          {"empirical", empirical},
                          {"limit", limit},
                          {"std_error", std_error},
                          {"pass", pass}});
    all_pass = all_pass && pass;
  };

  // Bound check for the configured strategy.
  if (cfg.strategy.strategy == "approach1") {
    const auto res = approach1_reduce(sys, cfg.strategy.aux, cfg.strategy.r,
                                      cfg.strategy.gamma_tilde, cfg.tol);
    const double e0 = u0_energy(res.aux, sys.K, cfg.sim.horizon.T);
    const double bound = approach1_bound(res, u_l2, v.norm(), e0);
    const auto est = coupled_error(sys, res, cfg.control, v, cfg.sim);
    add_check("approach1_bound", est.mean_sq, bound * bound, est.std_error,
              bound_holds(est, bound));
  } else if (cfg.strategy.strategy == "approach2") {
    const auto res = approach2_reduce(sys, cfg.strategy.r, cfg.strategy.r_bold,
                                      cfg.strategy.gamma, cfg.tol);
    const auto bound = approach2_bound(res, u_l2, v.norm());
    const auto est = coupled_error(sys, res, cfg.control, v, cfg.sim);
    add_check("approach2_bound", est.mean_sq, bound.total * bound.total,
              est.std_error, bound_holds(est, bound.total));
  } else {
    throw ValidationError("unknown strategy \"" + cfg.strategy.strategy + "\"");
  }

  // Reachability energy estimate on the zero-initial-state original system.
  {
    const double gamma = cfg.strategy.strategy == "approach1"
                             ? cfg.strategy.gamma_tilde
                             : cfg.strategy.gamma;
    const auto P = solve_lmi_reach(sys.with_zero_initial_state(), gamma, cfg.tol);
    const auto margins = check_energy_estimate(sys, P, cfg.control, cfg.sim);
    double worst = 0.0;
    double worst_se = 0.0;
    bool pass = true;
    for (const auto& em : margins) {
      if (em.margin < worst) {
        worst = em.margin;
        worst_se = em.std_error;
      }
      pass = pass && em.margin >= -3.0 * em.std_error;
    }
    add_check("energy_estimate_margin", worst, 0.0, worst_se, pass);
  }

  // Ito product-rule identity.
  {
    const auto ito = check_ito_lemma(sys, cfg.control, v, cfg.sim);
    const double tol = 3.0 * ito.std_error + 10.0 * cfg.sim.horizon.dt;
    add_check("ito_identity", std::abs(ito.discrepancy), tol, ito.std_error,
              std::abs(ito.discrepancy) <= tol);
  }

  json verdict = base_report(cfg);
  verdict["sim"] = {{"T", cfg.sim.horizon.T},
                    {"dt", cfg.sim.horizon.dt},
                    {"n_traj", cfg.sim.n_traj}};
  verdict["strategy"] = cfg.strategy.strategy;
  verdict["checks"] = checks;
  verdict["all_pass"] = all_pass;
  write_json(cfg.out_dir / "verify_verdict.json", verdict);
  if (cfg.verbosity > 0) {
    for (const auto& c : checks)
      std::cout << (c["pass"].get<bool>() ? "PASS " : "FAIL ")
                << c["name"].get<std::string>() << " (empirical "
                << c["empirical"].get<double>() << ", limit "
                << c["limit"].get<double>() << ")\n";
  }
  return kOk;
}

int run_guarded(const std::string& what, int (*fn)(const RunConfig&),
                const RunConfig& cfg) {
  try {
    return fn(cfg);
  } catch (const ParseError& e) {
    std::cerr << what << ": " << e.what() << "\n";
    return kInputError;
  } catch (const ValidationError& e) {
    std::cerr << what << ": " << e.what() << "\n";
    return kInputError;
  } catch (const CapacityError& e) {
    std::cerr << what << ": " << e.what() << "\n";
    return kNumericalError;
  } catch (const NumericalError& e) {
    std::cerr << what << ": " << e.what() << "\n";
    return kNumericalError;
  } catch (const std::exception& e) {
    std::cerr << what << ": internal error: " << e.what() << "\n";
    return kInternalError;
  }
}

}  // namespace sbt::cli

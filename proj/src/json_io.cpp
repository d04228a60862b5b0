#include <fstream>

#include "json_util.hpp"
#include "sbt/gramians.hpp"
#include "sbt/system.hpp"

namespace sbt {

namespace detail {

void write_file_atomic(const std::filesystem::path& path, const std::string& body) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ParseError("cannot write " + tmp.string());
    out << body;
    if (!out.good()) throw ParseError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace detail

using detail::matrix_from_json;
using detail::matrix_to_json;
using detail::require_field;

void save_system(const StochasticSystem& sys, const std::filesystem::path& path) {
  nlohmann::json j;
  j["n"] = sys.n;
  j["m"] = sys.m;
  j["p"] = sys.p;
  j["q"] = sys.q;
  j["d"] = sys.d;
  j["A"] = matrix_to_json(sys.A);
  j["B"] = matrix_to_json(sys.B);
  j["C"] = matrix_to_json(sys.C);
  j["D"] = matrix_to_json(sys.D);
  j["X0"] = matrix_to_json(sys.X0);
  j["K"] = matrix_to_json(sys.K);
  nlohmann::json Ns = nlohmann::json::array(), Ms = nlohmann::json::array();
  for (const auto& Ni : sys.N) Ns.push_back(matrix_to_json(Ni));
  for (const auto& Mi : sys.M) Ms.push_back(matrix_to_json(Mi));
  j["N"] = std::move(Ns);
  j["M"] = std::move(Ms);
  if (!sys.label.empty()) j["label"] = sys.label;
  detail::write_file_atomic(path, j.dump(2) + "\n");
}

StochasticSystem load_system(const std::filesystem::path& path) {
  const nlohmann::json j = detail::read_json_file(path);
  StochasticSystem sys;
  for (const char* dim : {"n", "m", "p", "q", "d"}) {
    const auto& v = require_field(j, dim);
    if (!v.is_number_integer() || v.get<long long>() < 0)
      throw ParseError("field \"" + std::string(dim) +
                       "\": expected a nonnegative integer");
  }
  sys.n = j["n"].get<int>();
  sys.m = j["m"].get<int>();
  sys.p = j["p"].get<int>();
  sys.q = j["q"].get<int>();
  sys.d = j["d"].get<int>();
  sys.A = matrix_from_json(require_field(j, "A"), "A");
  sys.B = matrix_from_json(require_field(j, "B"), "B");
  sys.C = matrix_from_json(require_field(j, "C"), "C");
  sys.D = matrix_from_json(require_field(j, "D"), "D");
  sys.X0 = matrix_from_json(require_field(j, "X0"), "X0");
  sys.K = matrix_from_json(require_field(j, "K"), "K");
  const auto& Ns = require_field(j, "N");
  const auto& Ms = require_field(j, "M");
  if (!Ns.is_array()) throw ParseError("field \"N\": expected an array of matrices");
  if (!Ms.is_array()) throw ParseError("field \"M\": expected an array of matrices");
  for (size_t i = 0; i < Ns.size(); ++i)
    sys.N.push_back(matrix_from_json(Ns[i], "N[" + std::to_string(i) + "]"));
  for (size_t i = 0; i < Ms.size(); ++i)
    sys.M.push_back(matrix_from_json(Ms[i], "M[" + std::to_string(i) + "]"));
  if (j.contains("label")) sys.label = j["label"].get<std::string>();
  // Dimensional consistency is reported through validate(), not here.
  return sys;
}

void save_gramian(const GramianReport& report, const std::filesystem::path& path) {
  nlohmann::json j;
  j["role"] = to_string(report.role);
  if (report.role == GramianRole::reach_lmi) j["gamma"] = report.gamma;
  j["matrix"] = matrix_to_json(report.G);
  detail::write_file_atomic(path, j.dump(2) + "\n");
}

GramianReport load_gramian(const StochasticSystem& sys,
                           const std::filesystem::path& path,
                           const SolverOptions& opts) {
  const nlohmann::json j = detail::read_json_file(path);
  const auto role = role_from_string(require_field(j, "role").get<std::string>());
  std::optional<double> gamma;
  if (j.contains("gamma")) gamma = j["gamma"].get<double>();
  const Eigen::MatrixXd G = matrix_from_json(require_field(j, "matrix"), "matrix");
  return import_gramian(sys, G, role, gamma, opts);
}

}  // namespace sbt

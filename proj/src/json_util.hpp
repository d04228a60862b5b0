#pragma once

// Internal JSON helpers shared by the serialization code. Matrices are
// row-major nested arrays of doubles; dump() keeps full round-trip precision.

#include <Eigen/Dense>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "sbt/errors.hpp"

namespace sbt::detail {

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& mat) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < mat.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < mat.cols(); ++j) row.push_back(mat(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j,
                                        const std::string& field) {
  if (!j.is_array())
    throw ParseError("field \"" + field + "\": expected an array of rows");
  const auto rows = j.size();
  if (rows == 0) return Eigen::MatrixXd(0, 0);
  if (!j[0].is_array())
    throw ParseError("field \"" + field + "\": rows must be arrays");
  const auto cols = j[0].size();
  Eigen::MatrixXd mat(rows, cols);
  for (size_t i = 0; i < rows; ++i) {
    if (!j[i].is_array() || j[i].size() != cols)
      throw ParseError("field \"" + field + "\": ragged row " + std::to_string(i));
    for (size_t c = 0; c < cols; ++c) {
      if (!j[i][c].is_number())
        throw ParseError("field \"" + field + "\": non-numeric entry at (" +
                         std::to_string(i) + "," + std::to_string(c) + ")");
      mat(i, c) = j[i][c].get<double>();
    }
  }
  return mat;
}

inline const nlohmann::json& require_field(const nlohmann::json& j,
                                           const std::string& field) {
  auto it = j.find(field);
  if (it == j.end()) throw ParseError("missing field \"" + field + "\"");
  return *it;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw ParseError(path.string() + ": expected a JSON object");
  return j;
}

/// Write-then-rename so readers never observe a partial file.
void write_file_atomic(const std::filesystem::path& path, const std::string& body);

}  // namespace sbt::detail

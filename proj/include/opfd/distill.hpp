#pragma once

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "opfd/common.hpp"
#include "opfd/groups.hpp"

namespace opfd {

enum class Method { PCA, DEIM, GL, GL2, BGL, BGL2 };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::PCA: return "pca";
    case Method::DEIM: return "deim";
    case Method::GL: return "gl";
    case Method::GL2: return "gl2";
    case Method::BGL: return "bgl";
    default: return "bgl2";
  }
}

inline Method method_from_string(const std::string& s) {
  if (s == "pca") return Method::PCA;
  if (s == "deim") return Method::DEIM;
  if (s == "gl") return Method::GL;
  if (s == "gl2") return Method::GL2;
  if (s == "bgl") return Method::BGL;
  if (s == "bgl2") return Method::BGL2;
  throw ArgumentError("unknown method '" + s + "'");
}

/// Combined W from the stored factors. Selection methods use W = C S';
/// PCA has no selection and stores C = U_K, giving W = C C'.
inline Mat assemble_w(Method method, const Mat& C, const std::vector<int>& selected, int p) {
  if (method == Method::PCA) return C * C.transpose();
  Mat W = Mat::Zero(p, p);
  require_shape(C.cols() == static_cast<Eigen::Index>(selected.size()),
                "assemble_w: C columns do not match selection");
  for (size_t k = 0; k < selected.size(); ++k) W.col(selected[k]) = C.col(k);
  return W;
}

/// Selection matrix S' theta = theta restricted to the selected indices, a
/// P x K reconstruction C, and the combined map W. Every column of W outside
/// the selection is zero (PCA excepted: it has no selection).
struct DistillationMap {
  Method method = Method::PCA;
  int k = 0;
  int p = 0;
  std::optional<double> lambda;  // fitted regularization weight, if any
  std::vector<int> selected;     // K feature indices; order defines C columns
  Mat C;                         // P x K
  Mat W;                         // P x P
  GroupStructure::Mode groups_mode = GroupStructure::Mode::columns;
};

inline DistillationMap make_map(Method method, const Mat& C, const std::vector<int>& selected,
                                int p, GroupStructure::Mode mode,
                                std::optional<double> lambda = std::nullopt) {
  DistillationMap map;
  map.method = method;
  map.k = method == Method::PCA ? static_cast<int>(C.cols())
                                : static_cast<int>(selected.size());
  map.p = p;
  map.lambda = lambda;
  map.selected = selected;
  map.C = C;
  map.W = assemble_w(method, C, selected, p);
  map.groups_mode = mode;
  return map;
}

inline void save_map_json(const std::string& path, const DistillationMap& map) {
  nlohmann::json j;
  j["method"] = to_string(map.method);
  j["k"] = map.k;
  j["p"] = map.p;
  if (map.lambda)
    j["lambda"] = *map.lambda;
  else
    j["lambda"] = nullptr;
  j["selected_indices"] = map.selected;
  std::vector<double> c_flat(map.C.size());
  for (int i = 0; i < map.C.rows(); ++i)
    for (int jj = 0; jj < map.C.cols(); ++jj) c_flat[i * map.C.cols() + jj] = map.C(i, jj);
  j["C"] = c_flat;
  j["groups_mode"] = to_string(map.groups_mode);
  std::ofstream f(path);
  if (!f) throw ParseError("cannot write " + path);
  f << j.dump(2) << "\n";
}

inline DistillationMap load_map_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ParseError("cannot open " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  try {
    DistillationMap map;
    map.method = method_from_string(j.at("method").get<std::string>());
    map.k = j.at("k").get<int>();
    map.p = j.at("p").get<int>();
    if (!j.at("lambda").is_null()) map.lambda = j.at("lambda").get<double>();
    map.selected = j.at("selected_indices").get<std::vector<int>>();
    std::vector<double> c_flat = j.at("C").get<std::vector<double>>();
    int cols = map.method == Method::PCA ? map.k : static_cast<int>(map.selected.size());
    if (cols == 0) {
      map.C = Mat(map.p, 0);
    } else {
      if (static_cast<int>(c_flat.size()) != map.p * cols)
        throw ParseError(path + ": C has wrong size");
      map.C = Mat(map.p, cols);
      for (int i = 0; i < map.p; ++i)
        for (int jj = 0; jj < cols; ++jj) map.C(i, jj) = c_flat[i * cols + jj];
    }
    map.groups_mode = groups_mode_from_string(j.at("groups_mode").get<std::string>());
    map.W = assemble_w(map.method, map.C, map.selected, map.p);
    return map;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

}  // namespace opfd

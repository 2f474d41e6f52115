#pragma once

#include <map>
#include <string>
#include <vector>

#include "opfd/common.hpp"
#include "opfd/scenario.hpp"

namespace opfd {

/// Disjoint column groups of a P x P distillation matrix. The grouped norm
/// treats the stacked entries of every group as one block, so regularization
/// zeroes whole groups at once.
struct GroupStructure {
  enum class Mode { columns, bus_pairs };
  Mode mode = Mode::columns;
  std::vector<std::vector<int>> groups;

  int n_groups() const { return static_cast<int>(groups.size()); }

  /// One group per column.
  static GroupStructure columns(int p) {
    GroupStructure g;
    g.mode = Mode::columns;
    g.groups.resize(p);
    for (int j = 0; j < p; ++j) g.groups[j] = {j};
    return g;
  }

  /// Features sharing a bus fall into one group, so a sensor either reports
  /// both its active and reactive streams or none.
  static GroupStructure bus_pairs(const FeatureMap& features) {
    GroupStructure g;
    g.mode = Mode::bus_pairs;
    std::map<int, std::vector<int>> by_bus;
    for (size_t j = 0; j < features.size(); ++j)
      by_bus[features[j].bus].push_back(static_cast<int>(j));
    for (auto& [bus, cols] : by_bus) g.groups.push_back(std::move(cols));
    return g;
  }

  void validate(int p) const {
    std::vector<char> seen(p, 0);
    for (const auto& grp : groups) {
      if (grp.empty()) throw ArgumentError("empty group");
      for (int j : grp) {
        if (j < 0 || j >= p) throw ArgumentError("group column out of range");
        if (seen[j]) throw ArgumentError("groups are not disjoint");
        seen[j] = 1;
      }
    }
    for (int j = 0; j < p; ++j)
      if (!seen[j]) throw ArgumentError("groups do not cover column " + std::to_string(j));
  }
};

inline const char* to_string(GroupStructure::Mode m) {
  return m == GroupStructure::Mode::columns ? "columns" : "bus_pairs";
}

inline GroupStructure::Mode groups_mode_from_string(const std::string& s) {
  if (s == "columns") return GroupStructure::Mode::columns;
  if (s == "bus_pairs") return GroupStructure::Mode::bus_pairs;
  throw ArgumentError("unknown groups mode '" + s + "'");
}

/// Norm of every group's stacked columns.
inline Vec group_norms(const Mat& W, const GroupStructure& gs) {
  Vec out(gs.n_groups());
  for (int g = 0; g < gs.n_groups(); ++g) {
    double sq = 0.0;
    for (int j : gs.groups[g]) sq += W.col(j).squaredNorm();
    out(g) = std::sqrt(sq);
  }
  return out;
}

/// Grouped penalty g(W): sum of group norms.
inline double group_penalty(const Mat& W, const GroupStructure& gs) {
  return group_norms(W, gs).sum();
}

inline int count_active_groups(const Mat& W, const GroupStructure& gs, double tol = 1e-6) {
  Vec norms = group_norms(W, gs);
  return static_cast<int>((norms.array() > tol).count());
}

/// Columns belonging to groups whose norm exceeds tol, ascending.
inline std::vector<int> active_columns(const Mat& W, const GroupStructure& gs, double tol = 1e-6) {
  Vec norms = group_norms(W, gs);
  std::vector<int> cols;
  for (int g = 0; g < gs.n_groups(); ++g)
    if (norms(g) > tol)
      for (int j : gs.groups[g]) cols.push_back(j);
  std::sort(cols.begin(), cols.end());
  return cols;
}

}  // namespace opfd

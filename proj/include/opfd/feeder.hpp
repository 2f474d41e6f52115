#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <queue>
#include <sstream>
#include <string>
#include <vector>

#include "opfd/common.hpp"

namespace opfd {

struct Line {
  int from = 0;
  int to = 0;
  double r = 0.0;  // pu
  double x = 0.0;  // pu
};

/// Radial single-phase feeder. Bus 0 is the substation; buses 1..N carry
/// injections. N-vectors throughout the library use index n-1 for bus n.
struct FeederModel {
  int n_bus = 0;                 // N, substation excluded
  std::vector<Line> lines;       // exactly N lines forming a tree rooted at 0
  double v0 = 1.0;               // substation voltage, pu
  double v_limit = 0.03;         // allowable voltage deviation, pu
  std::vector<int> der_buses;    // bus ids in 1..N, unique
  Vec der_qmax;                  // per-DER reactive rating, pu

  int n_der() const { return static_cast<int>(der_buses.size()); }

  /// Parent bus of each bus 1..N (parent[n-1]); throws TopologyError if the
  /// line set is not a spanning tree rooted at bus 0.
  std::vector<int> parents() const {
    if (static_cast<int>(lines.size()) != n_bus)
      throw TopologyError("expected exactly N lines for N+1 buses, got " +
                          std::to_string(lines.size()) + " lines for N=" +
                          std::to_string(n_bus));
    std::vector<std::vector<std::pair<int, int>>> adj(n_bus + 1);
    for (int e = 0; e < static_cast<int>(lines.size()); ++e) {
      const Line& ln = lines[e];
      if (ln.from < 0 || ln.from > n_bus || ln.to < 0 || ln.to > n_bus ||
          ln.from == ln.to)
        throw TopologyError("line " + std::to_string(e) + " references invalid bus");
      adj[ln.from].push_back({ln.to, e});
      adj[ln.to].push_back({ln.from, e});
    }
    std::vector<int> parent(n_bus, -1);
    std::vector<char> seen(n_bus + 1, 0);
    std::vector<char> used(lines.size(), 0);
    seen[0] = 1;
    std::queue<int> q;
    q.push(0);
    int reached = 1;
    while (!q.empty()) {
      int u = q.front();
      q.pop();
      for (auto [v, e] : adj[u]) {
        if (used[e]) continue;
        used[e] = 1;
        if (seen[v]) throw TopologyError("line set contains a cycle through bus " + std::to_string(v));
        seen[v] = 1;
        parent[v - 1] = u;
        ++reached;
        q.push(v);
      }
    }
    if (reached != n_bus + 1)
      throw TopologyError("feeder is not connected: reached " + std::to_string(reached) +
                          " of " + std::to_string(n_bus + 1) + " buses");
    return parent;
  }

  void validate() const {
    parents();
    for (const Line& ln : lines)
      if (ln.r < 0.0 || ln.x < 0.0) throw ModelError("negative line impedance");
    if (v_limit <= 0.0) throw ModelError("voltage deviation limit must be positive");
    if (der_qmax.size() != n_der()) throw ModelError("der_qmax size does not match DER bus count");
    std::vector<int> sorted = der_buses;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw ModelError("duplicate DER bus");
    for (int b : der_buses)
      if (b < 1 || b > n_bus) throw ModelError("DER bus " + std::to_string(b) + " out of range");
    for (int g = 0; g < n_der(); ++g)
      if (der_qmax(g) < 0.0) throw ModelError("negative DER rating");
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    // trim surrounding whitespace
    size_t a = cell.find_first_not_of(" \t\r");
    size_t b = cell.find_last_not_of(" \t\r");
    out.push_back(a == std::string::npos ? "" : cell.substr(a, b - a + 1));
  }
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

inline bool is_blank_or_comment(const std::string& line) {
  for (char c : line) {
    if (c == '#') return true;
    if (!std::isspace(static_cast<unsigned char>(c))) return false;
  }
  return true;
}

inline double parse_number(const std::string& cell, const std::string& where) {
  try {
    size_t pos = 0;
    double v = std::stod(cell, &pos);
    while (pos < cell.size() && std::isspace(static_cast<unsigned char>(cell[pos]))) ++pos;
    if (pos != cell.size()) throw std::invalid_argument(cell);
    if (!std::isfinite(v)) throw ParseError("non-finite value '" + cell + "' at " + where);
    return v;
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception&) {
    throw ParseError("non-numeric cell '" + cell + "' at " + where);
  }
}

inline long parse_int(const std::string& cell, const std::string& where) {
  try {
    size_t pos = 0;
    long v = std::stol(cell, &pos);
    if (pos != cell.size()) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    throw ParseError("non-integer cell '" + cell + "' at " + where);
  }
}

}  // namespace detail

/// Loads a feeder from the two-file CSV schema:
///   buses.csv: bus_id,der_qmax     (der_qmax empty or 0 for non-DER buses)
///   lines.csv: from,to,r_pu,x_pu
/// '#' starts a comment line. External ids are remapped so the substation
/// (id 0) becomes bus 0 and the remaining ids map to 1..N in ascending order.
inline FeederModel load_feeder_csv(const std::string& buses_path,
                                   const std::string& lines_path) {
  std::ifstream bf(buses_path);
  if (!bf) throw ParseError("cannot open " + buses_path);
  std::ifstream lf(lines_path);
  if (!lf) throw ParseError("cannot open " + lines_path);

  std::map<long, double> qmax_by_id;
  std::string line;
  int lineno = 0;
  bool header_seen = false;
  while (std::getline(bf, line)) {
    ++lineno;
    if (detail::is_blank_or_comment(line)) continue;
    if (!header_seen) {
      header_seen = true;
      auto cells = detail::split_csv_line(line);
      if (cells.size() < 2 || cells[0] != "bus_id" || cells[1] != "der_qmax")
        throw ParseError(buses_path + ": expected header 'bus_id,der_qmax'");
      continue;
    }
    auto cells = detail::split_csv_line(line);
    std::string where = buses_path + ":" + std::to_string(lineno);
    if (cells.size() != 2) throw ParseError("expected 2 columns at " + where);
    long id = detail::parse_int(cells[0], where);
    if (id < 0) throw ParseError("negative bus id at " + where);
    double qmax = cells[1].empty() ? 0.0 : detail::parse_number(cells[1], where);
    if (!qmax_by_id.emplace(id, qmax).second)
      throw ParseError("duplicate bus id " + std::to_string(id) + " at " + where);
  }
  if (qmax_by_id.empty()) throw ParseError(buses_path + ": no bus rows");
  if (!qmax_by_id.count(0)) throw ParseError(buses_path + ": substation bus id 0 missing");

  // external id -> internal 0..N, ascending
  std::map<long, int> to_internal;
  for (const auto& [id, _] : qmax_by_id)
    to_internal.emplace(id, static_cast<int>(to_internal.size()));

  FeederModel model;
  model.n_bus = static_cast<int>(qmax_by_id.size()) - 1;

  lineno = 0;
  header_seen = false;
  bool substation_in_lines = false;
  while (std::getline(lf, line)) {
    ++lineno;
    if (detail::is_blank_or_comment(line)) continue;
    if (!header_seen) {
      header_seen = true;
      auto cells = detail::split_csv_line(line);
      if (cells.size() < 4 || cells[0] != "from" || cells[1] != "to")
        throw ParseError(lines_path + ": expected header 'from,to,r_pu,x_pu'");
      continue;
    }
    auto cells = detail::split_csv_line(line);
    std::string where = lines_path + ":" + std::to_string(lineno);
    if (cells.size() != 4) throw ParseError("expected 4 columns at " + where);
    long from = detail::parse_int(cells[0], where);
    long to = detail::parse_int(cells[1], where);
    if (!to_internal.count(from) || !to_internal.count(to))
      throw ParseError("line references unknown bus at " + where);
    if (from == 0 || to == 0) substation_in_lines = true;
    Line ln;
    ln.from = to_internal.at(from);
    ln.to = to_internal.at(to);
    ln.r = detail::parse_number(cells[2], where);
    ln.x = detail::parse_number(cells[3], where);
    model.lines.push_back(ln);
  }
  if (!substation_in_lines)
    throw ParseError(lines_path + ": substation id 0 does not appear in any line");

  for (const auto& [id, qmax] : qmax_by_id) {
    if (id == 0 || qmax == 0.0) continue;
    model.der_buses.push_back(to_internal.at(id));
  }
  model.der_qmax = Vec(model.der_buses.size());
  for (size_t g = 0; g < model.der_buses.size(); ++g) {
    for (const auto& [id, qmax] : qmax_by_id)
      if (to_internal.at(id) == model.der_buses[g]) model.der_qmax(g) = qmax;
  }
  model.validate();
  return model;
}

/// Writes the two-file feeder CSV next described in load_feeder_csv.
inline void save_feeder_csv(const FeederModel& model, const std::string& buses_path,
                            const std::string& lines_path) {
  std::ofstream bf(buses_path);
  if (!bf) throw ParseError("cannot write " + buses_path);
  bf << "bus_id,der_qmax\n";
  for (int n = 0; n <= model.n_bus; ++n) {
    double qmax = 0.0;
    for (int g = 0; g < model.n_der(); ++g)
      if (model.der_buses[g] == n) qmax = model.der_qmax(g);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", qmax);
    bf << n << "," << (qmax == 0.0 ? "" : buf) << "\n";
  }
  std::ofstream lf(lines_path);
  if (!lf) throw ParseError("cannot write " + lines_path);
  lf << "from,to,r_pu,x_pu\n";
  for (const Line& ln : model.lines) {
    char rb[64], xb[64];
    std::snprintf(rb, sizeof(rb), "%.17g", ln.r);
    std::snprintf(xb, sizeof(xb), "%.17g", ln.x);
    lf << ln.from << "," << ln.to << "," << rb << "," << xb << "\n";
  }
}

}  // namespace opfd

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "opfd/common.hpp"
#include "opfd/feeder.hpp"
#include "opfd/rng.hpp"

namespace opfd {

enum class FeatureKind { p_net, q_load };

inline const char* to_string(FeatureKind k) {
  return k == FeatureKind::p_net ? "p_net" : "q_load";
}

/// One OPF feature: a (kind, bus) pair mapping a row of Theta onto the grid.
struct Feature {
  FeatureKind kind = FeatureKind::p_net;
  int bus = 0;  // 1..N
};

using FeatureMap = std::vector<Feature>;

/// P x T matrix of OPF data vectors plus the feature declaration and the
/// normalization state. Rows follow the declared feature order.
struct ScenarioSet {
  Mat theta;                       // P x T
  FeatureMap features;             // size P (may be empty for ad-hoc matrices)
  Vec mean;                        // P, valid when normalized
  Vec scale;                       // P, valid when normalized
  std::vector<uint8_t> constant_rows;  // flags rows with zero raw variance
  bool normalized = false;

  int p() const { return static_cast<int>(theta.rows()); }
  int t() const { return static_cast<int>(theta.cols()); }

  static ScenarioSet from_matrix(Mat m) {
    ScenarioSet s;
    s.theta = std::move(m);
    return s;
  }
};

/// Centers and scales every row to zero mean and unit population variance.
/// Rows with zero raw variance keep scale 1 and are flagged constant.
inline ScenarioSet normalize(const ScenarioSet& set) {
  if (set.normalized) throw StateError("normalize: scenario set is already normalized");
  if (set.t() == 0) throw ArgumentError("normalize: empty scenario set");
  ScenarioSet out = set;
  const int P = set.p(), T = set.t();
  out.mean = Vec(P);
  out.scale = Vec(P);
  out.constant_rows.assign(P, 0);
  for (int r = 0; r < P; ++r) {
    double m = set.theta.row(r).mean();
    double var = (set.theta.row(r).array() - m).square().sum() / T;
    out.mean(r) = m;
    if (var <= 0.0) {
      out.scale(r) = 1.0;
      out.constant_rows[r] = 1;
    } else {
      out.scale(r) = std::sqrt(var);
    }
    out.theta.row(r) = (set.theta.row(r).array() - m) / out.scale(r);
  }
  out.normalized = true;
  return out;
}

inline ScenarioSet denormalize(const ScenarioSet& set) {
  if (!set.normalized) throw StateError("denormalize: scenario set is not normalized");
  ScenarioSet out = set;
  for (int r = 0; r < set.p(); ++r)
    out.theta.row(r) = set.theta.row(r).array() * set.scale(r) + set.mean(r);
  out.normalized = false;
  return out;
}

/// Maps one normalized column back to physical units using the set's stats.
inline Vec denormalize_column(const ScenarioSet& set, const Vec& col) {
  require_shape(col.size() == set.p(), "denormalize_column: length mismatch");
  if (!set.normalized) throw StateError("denormalize_column: set carries no stats");
  return set.scale.cwiseProduct(col) + set.mean;
}

/// Scenario CSV schema: header `feature_id,kind,bus_id,t1,...,tT`, one row
/// per feature, kind in {p_net, q_load}. Loads a raw (unnormalized) set.
inline ScenarioSet load_scenarios_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ParseError("cannot open " + path);
  std::string line;
  int lineno = 0;
  int t_cols = -1;
  std::vector<Feature> features;
  std::vector<std::vector<double>> rows;
  bool header_seen = false;
  while (std::getline(f, line)) {
    ++lineno;
    if (detail::is_blank_or_comment(line)) continue;
    auto cells = detail::split_csv_line(line);
    std::string where = path + ":" + std::to_string(lineno);
    if (!header_seen) {
      header_seen = true;
      if (cells.size() < 4 || cells[0] != "feature_id" || cells[1] != "kind" ||
          cells[2] != "bus_id")
        throw ParseError(path + ": expected header 'feature_id,kind,bus_id,t1,...'");
      t_cols = static_cast<int>(cells.size()) - 3;
      continue;
    }
    if (static_cast<int>(cells.size()) != t_cols + 3)
      throw ParseError("inconsistent column count at " + where + " (expected " +
                       std::to_string(t_cols + 3) + ", got " + std::to_string(cells.size()) + ")");
    detail::parse_int(cells[0], where);  // feature_id is informational
    Feature ft;
    if (cells[1] == "p_net")
      ft.kind = FeatureKind::p_net;
    else if (cells[1] == "q_load")
      ft.kind = FeatureKind::q_load;
    else
      throw ParseError("unknown feature kind '" + cells[1] + "' at " + where);
    ft.bus = static_cast<int>(detail::parse_int(cells[2], where));
    features.push_back(ft);
    std::vector<double> vals(t_cols);
    for (int j = 0; j < t_cols; ++j)
      vals[j] = detail::parse_number(cells[3 + j], where + " column t" + std::to_string(j + 1));
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw ParseError(path + ": no data rows");
  ScenarioSet set;
  set.features = std::move(features);
  set.theta = Mat(rows.size(), t_cols);
  for (size_t r = 0; r < rows.size(); ++r)
    for (int j = 0; j < t_cols; ++j) set.theta(r, j) = rows[r][j];
  return set;
}

inline void save_scenarios_csv(const std::string& path, const ScenarioSet& set) {
  if (set.features.size() != static_cast<size_t>(set.p()))
    throw ArgumentError("save_scenarios_csv: feature map must cover every row");
  std::ofstream f(path);
  if (!f) throw ParseError("cannot write " + path);
  f << "feature_id,kind,bus_id";
  for (int j = 0; j < set.t(); ++j) f << ",t" << (j + 1);
  f << "\n";
  char buf[64];
  for (int r = 0; r < set.p(); ++r) {
    f << r << "," << to_string(set.features[r].kind) << "," << set.features[r].bus;
    for (int j = 0; j < set.t(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", set.theta(r, j));
      f << "," << buf;
    }
    f << "\n";
  }
}

/// Configuration of the synthetic benchmark generator. Profiles follow the
/// usual feeder shapes: smooth diurnal loads with noise, midday solar on the
/// PV buses, block-shaped EV charging on a random subset, and reactive loads
/// derived from active ones through power factors drawn uniformly in
/// [0.85, 1.00]. PV buses double as the DER fleet.
struct SyntheticConfig {
  std::uint64_t seed = 0;
  int n_bus = 36;
  int n_scenarios = 200;
  std::vector<int> load_buses;  // empty: first 25 buses 1..min(25,N)
  std::vector<int> pv_buses;    // empty: every other load bus up to 10
  int n_ev = 8;                 // EV-hosting load buses
  double load_scale = 0.03;     // pu per bus, typical demand magnitude
  double solar_scale = 0.06;    // pu peak PV output
  double ev_scale = 0.02;       // pu per charging block
  double der_qmax = 0.06;       // pu rating per DER
  double v_limit = 0.03;
  double v0 = 1.0;
};

struct SyntheticData {
  FeederModel feeder;
  ScenarioSet scenarios;  // raw (unnormalized)
};

/// Deterministic radial feeder used by the generator: a trunk with short
/// laterals, impedances set by a fixed per-bus formula.
inline FeederModel synthetic_feeder(int n_bus, const std::vector<int>& der_buses,
                                    double der_qmax, double v_limit, double v0 = 1.0) {
  if (n_bus < 1) throw ConfigError("synthetic_feeder: need at least one bus");
  FeederModel model;
  model.n_bus = n_bus;
  model.v0 = v0;
  model.v_limit = v_limit;
  auto frac = [](double v) { return v - std::floor(v); };
  for (int n = 1; n <= n_bus; ++n) {
    int parent = (n >= 2 && n % 3 == 0) ? n - 2 : n - 1;
    Line ln;
    ln.from = parent;
    ln.to = n;
    ln.r = 0.0030 + 0.0015 * frac(0.6180339887498949 * n);
    ln.x = 0.9 * ln.r + 0.0008 * frac(0.3819660112501051 * n);
    model.lines.push_back(ln);
  }
  model.der_buses = der_buses;
  model.der_qmax = Vec::Constant(der_buses.size(), der_qmax);
  model.validate();
  return model;
}

inline SyntheticData generate_synthetic(const SyntheticConfig& cfg) {
  SyntheticConfig c = cfg;
  if (c.load_buses.empty())
    for (int n = 1; n <= std::min(25, c.n_bus); ++n) c.load_buses.push_back(n);
  if (c.pv_buses.empty())
    for (size_t i = 1; i < c.load_buses.size() && c.pv_buses.size() < 10; i += 2)
      c.pv_buses.push_back(c.load_buses[i]);
  for (int b : c.load_buses)
    if (b < 1 || b > c.n_bus) throw ConfigError("load bus " + std::to_string(b) + " not in feeder");
  for (int b : c.pv_buses) {
    if (b < 1 || b > c.n_bus) throw ConfigError("PV bus " + std::to_string(b) + " not in feeder");
    if (std::find(c.load_buses.begin(), c.load_buses.end(), b) == c.load_buses.end())
      throw ConfigError("PV bus " + std::to_string(b) + " is not a load bus");
  }

  SyntheticData out;
  out.feeder = synthetic_feeder(c.n_bus, c.pv_buses, c.der_qmax, c.v_limit, c.v0);

  const int L = static_cast<int>(c.load_buses.size());
  const int T = c.n_scenarios;
  Rng rng(c.seed);

  // per-bus base magnitudes and phases
  std::vector<double> base(L), phase(L);
  for (int i = 0; i < L; ++i) {
    base[i] = c.load_scale * (0.6 + 0.8 * rng.uniform());
    phase[i] = rng.uniform(0.0, 0.8);
  }
  // EV hosts: a seeded subset of load buses with block charging windows
  std::vector<int> ev_host;
  {
    std::vector<int> pool(L);
    for (int i = 0; i < L; ++i) pool[i] = i;
    for (int k = 0; k < std::min(c.n_ev, L); ++k) {
      int j = k + rng.index(L - k);
      std::swap(pool[k], pool[j]);
      ev_host.push_back(pool[k]);
    }
  }
  std::vector<double> ev_start(ev_host.size()), ev_len(ev_host.size()), ev_amp(ev_host.size());
  for (size_t k = 0; k < ev_host.size(); ++k) {
    ev_start[k] = rng.uniform(0.0, 0.7);
    ev_len[k] = rng.uniform(0.15, 0.35);
    ev_amp[k] = c.ev_scale * (0.5 + rng.uniform());
  }

  Mat p_load = Mat::Zero(L, T), q_load = Mat::Zero(L, T), p_gen = Mat::Zero(L, T);
  for (int t = 0; t < T; ++t) {
    double tau = (T == 1) ? 0.5 : static_cast<double>(t) / (T - 1);
    for (int i = 0; i < L; ++i) {
      double diurnal = 0.75 + 0.25 * std::sin(M_PI * (tau + phase[i]));
      double pl = base[i] * diurnal * (1.0 + 0.10 * rng.normal());
      pl = std::max(pl, 0.0);
      double pf = rng.uniform(0.85, 1.00);
      p_load(i, t) = pl;
      q_load(i, t) = pl * std::tan(std::acos(pf));
    }
    for (size_t k = 0; k < ev_host.size(); ++k)
      if (tau >= ev_start[k] && tau <= ev_start[k] + ev_len[k]) p_load(ev_host[k], t) += ev_amp[k];
    for (int i = 0; i < L; ++i) {
      bool has_pv =
          std::find(c.pv_buses.begin(), c.pv_buses.end(), c.load_buses[i]) != c.pv_buses.end();
      if (!has_pv) continue;
      double bell = std::sin(M_PI * tau);
      double pg = c.solar_scale * bell * bell * (1.0 + 0.15 * rng.normal());
      p_gen(i, t) = std::max(pg, 0.0);
    }
  }

  ScenarioSet set;
  set.theta = Mat(2 * L, T);
  for (int i = 0; i < L; ++i) {
    set.theta.row(i) = p_gen.row(i) - p_load.row(i);
    set.theta.row(L + i) = q_load.row(i);
    set.features.push_back({FeatureKind::p_net, c.load_buses[i]});
  }
  for (int i = 0; i < L; ++i) set.features.push_back({FeatureKind::q_load, c.load_buses[i]});
  out.scenarios = std::move(set);
  return out;
}

}  // namespace opfd

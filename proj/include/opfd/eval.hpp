#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "opfd/common.hpp"
#include "opfd/grid.hpp"
#include "opfd/opf.hpp"
#include "opfd/type2.hpp"

namespace opfd {

/// Normalized data reconstruction error ||Theta - W Theta||_F^2 / ||Theta||_F^2.
inline double eval_data_error(const Mat& W, const ScenarioSet& set) {
  require_shape(W.rows() == set.p() && W.cols() == set.p(),
                "eval_data_error: W dimension mismatch");
  double denom = set.theta.squaredNorm();
  if (denom == 0.0) return 0.0;
  return (set.theta - W * set.theta).squaredNorm() / denom;
}

/// Normalized minimizer error ||X - Xhat||_F^2 / ||X||_F^2, with Xhat from
/// the batch solve on reconstructed data.
inline double eval_minimizer_error(const Mat& W, const OpfDataset& data, const OpfSpec& spec,
                                   int jobs = 1) {
  double denom = data.X.squaredNorm();
  double f2 = OpfFitting(spec, data, {}, jobs).cost(W);
  if (denom == 0.0) return 0.0;
  return 2.0 * data.t() * f2 / denom;
}

/// Voltage samples of one map under one grid model: the reconstructed-data
/// DER setpoints are applied to the true loading of every scenario.
struct VoltageStats {
  int samples = 0;
  int violations = 0;   // |v - v0| > v_limit
  int failed = 0;       // scenarios excluded (AC non-convergence)
  std::vector<double> v;        // kept magnitudes, scenario-major blocks of N
  std::vector<int> scenarios;   // scenario id of each block

  double violation_fraction() const {
    return samples == 0 ? 0.0 : static_cast<double>(violations) / samples;
  }
};

inline VoltageStats eval_voltage_feasibility(const Mat& W, const OpfDataset& data,
                                             const OpfSpec& spec, const FeederModel& model,
                                             bool ac, int jobs = 1) {
  const int N = spec.n();
  const int T = data.t();
  const Mat E = spec.incidence();

  // setpoints from reconstructed data
  Mat theta_hat(data.p(), T);
  for (int t = 0; t < T; ++t)
    theta_hat.col(t) = denormalize_column(data.scn, W * data.scn.theta.col(t));
  BatchResult batch = solve_opf_batch(spec, theta_hat, data.scn.features, jobs);
  batch.throw_if_failed();

  // true loading
  ScenarioSet raw = denormalize(data.scn);

  VoltageStats stats;
  stats.v.assign(static_cast<size_t>(N) * T, 0.0);
  std::vector<uint8_t> ok(T, 1);
  detail::parallel_for(T, jobs, [&](int t) {
    OpfTheta truth = OpfTheta::from_theta(raw.theta.col(t), raw.features, spec);
    Vec q = E * batch.solutions[t].qg - truth.ql;
    Vec v;
    if (ac) {
      try {
        v = ac_power_flow(model, truth.p, q, model.v0);
      } catch (const ConvergenceError&) {
        ok[t] = 0;
        return;
      }
    } else {
      v = linear_voltage(spec.grid, truth.p, q, model.v0);
    }
    for (int n = 0; n < N; ++n) stats.v[static_cast<size_t>(t) * N + n] = v(n);
  });

  std::vector<double> kept;
  kept.reserve(stats.v.size());
  for (int t = 0; t < T; ++t) {
    if (!ok[t]) {
      ++stats.failed;
      continue;
    }
    stats.scenarios.push_back(t);
    for (int n = 0; n < N; ++n) {
      double vv = stats.v[static_cast<size_t>(t) * N + n];
      kept.push_back(vv);
      if (std::abs(vv - model.v0) > spec.v_limit) ++stats.violations;
    }
  }
  stats.v = std::move(kept);
  stats.samples = static_cast<int>(stats.v.size());
  return stats;
}

/// Evaluation summary for one distillation map (or the full-data baseline).
struct EvalReport {
  std::string method;
  int k = 0;
  double f1_ratio = 0.0;
  double f2_ratio = 0.0;
  VoltageStats lin;
  VoltageStats ac;
  bool ac_evaluated = false;
};

inline EvalReport evaluate_map(const std::string& method_tag, int k, const Mat& W,
                               const OpfDataset& data, const OpfSpec& spec,
                               const FeederModel& model, bool with_ac, int jobs = 1) {
  EvalReport rep;
  rep.method = method_tag;
  rep.k = k;
  rep.f1_ratio = eval_data_error(W, data.scn);
  rep.f2_ratio = eval_minimizer_error(W, data, spec, jobs);
  rep.lin = eval_voltage_feasibility(W, data, spec, model, false, jobs);
  if (with_ac) {
    rep.ac = eval_voltage_feasibility(W, data, spec, model, true, jobs);
    rep.ac_evaluated = true;
  }
  return rep;
}

inline void save_report_json(const std::string& path, const EvalReport& rep) {
  nlohmann::json j;
  j["method"] = rep.method;
  j["k"] = rep.k;
  j["data_error"] = rep.f1_ratio;
  j["minimizer_error"] = rep.f2_ratio;
  auto stats_json = [](const VoltageStats& s) {
    nlohmann::json o;
    o["samples"] = s.samples;
    o["violations"] = s.violations;
    o["violation_fraction"] = s.violation_fraction();
    o["failed_scenarios"] = s.failed;
    return o;
  };
  j["voltage_linear"] = stats_json(rep.lin);
  if (rep.ac_evaluated) j["voltage_ac"] = stats_json(rep.ac);
  std::ofstream f(path);
  if (!f) throw ParseError("cannot write " + path);
  f << j.dump(2) << "\n";
}

/// Flat voltage-sample CSV for external plotting:
/// method,k,scenario,bus,model,v_pu. Appends when the file already has rows.
inline void append_voltage_csv(const std::string& path, const std::string& method_tag, int k,
                               const VoltageStats& stats, int n_bus, const char* model_tag,
                               bool write_header) {
  std::ofstream f(path, write_header ? std::ios::trunc : std::ios::app);
  if (!f) throw ParseError("cannot write " + path);
  if (write_header) f << "method,k,scenario,bus,model,v_pu\n";
  char buf[64];
  for (size_t i = 0; i < stats.v.size(); ++i) {
    int block = static_cast<int>(i) / n_bus;
    int t = block < static_cast<int>(stats.scenarios.size()) ? stats.scenarios[block] : block;
    int n = static_cast<int>(i) % n_bus;
    std::snprintf(buf, sizeof(buf), "%.17g", stats.v[i]);
    f << method_tag << "," << k << "," << t << "," << (n + 1) << "," << model_tag << "," << buf
      << "\n";
  }
}

}  // namespace opfd

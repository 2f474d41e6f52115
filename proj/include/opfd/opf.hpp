#pragma once

#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "opfd/common.hpp"
#include "opfd/grid.hpp"
#include "opfd/qp.hpp"
#include "opfd/scenario.hpp"

namespace opfd {

/// Soft-constrained reactive dispatch problem over decision [q^g; s]:
///   minimize   q'Rq + nu s^2 + rho s,   q = E q^g - q_load
///   subject to -s1 - vbar <= R p + X q <= vbar + s1
///              -qmax <= q^g <= qmax,  s >= 0
struct OpfSpec {
  GridMatrices grid;
  std::vector<int> der_buses;  // bus ids 1..N, unique; G entries
  Vec der_qmax;                // G
  double v_limit = 0.03;
  double nu = 1000.0;
  double rho = 100.0;
  Vec base_p;   // fixed net active injections for buses not covered by features
  Vec base_ql;  // fixed reactive demands likewise

  int n() const { return grid.n(); }
  int g() const { return static_cast<int>(der_buses.size()); }

  /// N x G DER incidence.
  Mat incidence() const {
    Mat E = Mat::Zero(n(), g());
    for (int j = 0; j < g(); ++j) E(der_buses[j] - 1, j) = 1.0;
    return E;
  }

  static OpfSpec from_feeder(const FeederModel& model, double nu = 1000.0, double rho = 100.0) {
    model.validate();
    OpfSpec spec;
    spec.grid = build_grid_matrices(model);
    spec.der_buses = model.der_buses;
    spec.der_qmax = model.der_qmax;
    spec.v_limit = model.v_limit;
    spec.nu = nu;
    spec.rho = rho;
    spec.base_p = Vec::Zero(model.n_bus);
    spec.base_ql = Vec::Zero(model.n_bus);
    return spec;
  }

  void validate() const {
    if (nu <= 0.0 || rho <= 0.0) throw ModelError("penalties nu, rho must be positive");
    if (v_limit <= 0.0) throw ModelError("voltage limit must be positive");
    std::vector<int> sorted = der_buses;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw ModelError("duplicate DER bus");
    for (int b : der_buses)
      if (b < 1 || b > n()) throw ModelError("DER bus out of range");
    require_shape(der_qmax.size() == g(), "der_qmax size mismatch");
  }
};

/// Full grid loading for one scenario plus the feature stacking that defines
/// the OPF data vector theta (length P <= 2N).
struct OpfTheta {
  Vec p;   // N net active injections
  Vec ql;  // N reactive demands
  FeatureMap features;  // defines theta; empty means the full [p; ql] stacking

  /// Extracts the P-vector theta in declared feature order.
  Vec theta() const {
    const int N = static_cast<int>(p.size());
    if (features.empty()) {
      Vec th(2 * N);
      th.head(N) = p;
      th.tail(N) = ql;
      return th;
    }
    Vec th(features.size());
    for (size_t j = 0; j < features.size(); ++j) {
      const Feature& f = features[j];
      th(j) = (f.kind == FeatureKind::p_net) ? p(f.bus - 1) : ql(f.bus - 1);
    }
    return th;
  }

  /// Builds full loading from a theta vector: spec baselines overwritten at
  /// the declared feature positions.
  static OpfTheta from_theta(const Vec& th, const FeatureMap& features, const OpfSpec& spec) {
    OpfTheta out;
    out.p = spec.base_p;
    out.ql = spec.base_ql;
    out.features = features;
    if (features.empty()) {
      require_shape(th.size() == 2 * spec.n(), "from_theta: expected full 2N stacking");
      out.p = th.head(spec.n());
      out.ql = th.tail(spec.n());
      return out;
    }
    require_shape(th.size() == static_cast<Eigen::Index>(features.size()),
                  "from_theta: theta length does not match feature map");
    for (size_t j = 0; j < features.size(); ++j) {
      const Feature& f = features[j];
      if (f.bus < 1 || f.bus > spec.n()) throw ArgumentError("feature bus out of range");
      if (f.kind == FeatureKind::p_net)
        out.p(f.bus - 1) = th(j);
      else
        out.ql(f.bus - 1) = th(j);
    }
    return out;
  }
};

enum class SolveStatus { optimal, max_iter, infeasible_numerics };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::max_iter: return "max-iter";
    default: return "infeasible-numerics";
  }
}

/// Primal-dual OPF solution. Multiplier layout, matching the assembled rows:
/// [0,N) upper voltage, [N,2N) lower voltage, [2N,2N+G) upper rating,
/// [2N+G,2N+2G) lower rating, last row the s >= 0 bound.
struct OpfSolution {
  Vec qg;
  double s = 0.0;
  double objective = 0.0;
  Vec duals;
  Vec slacks;  // b - A z at the solution, same layout
  SolveStatus status = SolveStatus::infeasible_numerics;
  int iters = 0;
  double kkt_residual = 0.0;

  int n() const { return static_cast<int>((duals.size() - 1) / 2 - qg.size()); }
  int g() const { return static_cast<int>(qg.size()); }
};

/// Assembled QP with the row layout documented on OpfSolution.
struct OpfQp {
  QpProblem qp;
  int n_bus = 0;
  int n_der = 0;
};

inline OpfQp assemble_opf(const OpfSpec& spec, const OpfTheta& theta) {
  spec.validate();
  const int N = spec.n();
  const int G = spec.g();
  require_shape(theta.p.size() == N && theta.ql.size() == N,
                "assemble_opf: loading length does not match grid size");

  const Mat E = spec.incidence();
  const Mat XE = spec.grid.X * E;        // N x G
  const Mat ERE = E.transpose() * spec.grid.R * E;  // G x G
  const Vec u = spec.grid.R * theta.p - spec.grid.X * theta.ql;  // fixed voltage part

  OpfQp out;
  out.n_bus = N;
  out.n_der = G;
  QpProblem& qp = out.qp;
  const int nv = G + 1;
  const int m = 2 * N + 2 * G + 1;

  qp.Q = Mat::Zero(nv, nv);
  qp.Q.topLeftCorner(G, G) = 2.0 * ERE;
  qp.Q(G, G) = 2.0 * spec.nu;
  qp.c = Vec::Zero(nv);
  qp.c.head(G) = -2.0 * E.transpose() * (spec.grid.R * theta.ql);
  qp.c(G) = spec.rho;
  qp.obj_const = theta.ql.dot(spec.grid.R * theta.ql);

  qp.A = Mat::Zero(m, nv);
  qp.b = Vec::Zero(m);
  // upper voltage: XE q^g - s <= vbar - u
  qp.A.block(0, 0, N, G) = XE;
  qp.A.block(0, G, N, 1) = -Vec::Ones(N);
  qp.b.segment(0, N) = Vec::Constant(N, spec.v_limit) - u;
  // lower voltage: -XE q^g - s <= vbar + u
  qp.A.block(N, 0, N, G) = -XE;
  qp.A.block(N, G, N, 1) = -Vec::Ones(N);
  qp.b.segment(N, N) = Vec::Constant(N, spec.v_limit) + u;
  // ratings
  qp.A.block(2 * N, 0, G, G) = Mat::Identity(G, G);
  qp.b.segment(2 * N, G) = spec.der_qmax;
  qp.A.block(2 * N + G, 0, G, G) = -Mat::Identity(G, G);
  qp.b.segment(2 * N + G, G) = spec.der_qmax;
  // s >= 0
  qp.A(m - 1, G) = -1.0;
  qp.b(m - 1) = 0.0;
  return out;
}

inline OpfSolution solve_opf(const OpfSpec& spec, const OpfTheta& theta,
                             double gap_tol = 1e-9, int max_iters = 100) {
  OpfQp assembled = assemble_opf(spec, theta);
  QpResult qr = solve_qp(assembled.qp, gap_tol, max_iters);
  OpfSolution sol;
  const int G = assembled.n_der;
  sol.qg = qr.x.head(G);
  sol.s = qr.x(G);
  sol.objective = qr.objective;
  sol.duals = qr.lambda;
  sol.slacks = qr.slack;
  sol.iters = qr.iters;
  sol.kkt_residual = qr.kkt_residual();
  switch (qr.status) {
    case QpStatus::optimal: sol.status = SolveStatus::optimal; break;
    case QpStatus::max_iter: sol.status = SolveStatus::max_iter; break;
    default: sol.status = SolveStatus::infeasible_numerics; break;
  }
  return sol;
}

/// Hard-constraint variant (no slack, voltage limits enforced exactly); used
/// to cross-check the soft formulation on feasible instances.
inline OpfSolution solve_opf_hard(const OpfSpec& spec, const OpfTheta& theta,
                                  double gap_tol = 1e-9, int max_iters = 100) {
  spec.validate();
  const int N = spec.n();
  const int G = spec.g();
  const Mat E = spec.incidence();
  const Mat XE = spec.grid.X * E;
  const Vec u = spec.grid.R * theta.p - spec.grid.X * theta.ql;

  QpProblem qp;
  qp.Q = 2.0 * (E.transpose() * spec.grid.R * E);
  qp.c = -2.0 * E.transpose() * (spec.grid.R * theta.ql);
  qp.obj_const = theta.ql.dot(spec.grid.R * theta.ql);
  qp.A = Mat::Zero(2 * N + 2 * G, G);
  qp.b = Vec::Zero(2 * N + 2 * G);
  qp.A.block(0, 0, N, G) = XE;
  qp.b.segment(0, N) = Vec::Constant(N, spec.v_limit) - u;
  qp.A.block(N, 0, N, G) = -XE;
  qp.b.segment(N, N) = Vec::Constant(N, spec.v_limit) + u;
  qp.A.block(2 * N, 0, G, G) = Mat::Identity(G, G);
  qp.b.segment(2 * N, G) = spec.der_qmax;
  qp.A.block(2 * N + G, 0, G, G) = -Mat::Identity(G, G);
  qp.b.segment(2 * N + G, G) = spec.der_qmax;

  QpResult qr = solve_qp(qp, gap_tol, max_iters);
  OpfSolution sol;
  sol.qg = qr.x;
  sol.s = 0.0;
  sol.objective = qr.objective;
  sol.duals = qr.lambda;
  sol.slacks = qr.slack;
  sol.iters = qr.iters;
  sol.kkt_residual = qr.kkt_residual();
  sol.status = qr.status == QpStatus::optimal
                   ? SolveStatus::optimal
                   : (qr.status == QpStatus::max_iter ? SolveStatus::max_iter
                                                      : SolveStatus::infeasible_numerics);
  return sol;
}

struct BatchError {
  int scenario;
  std::string message;
};

struct BatchResult {
  std::vector<OpfSolution> solutions;
  std::vector<BatchError> errors;  // non-status failures, scenario-indexed

  void throw_if_failed() const {
    if (!errors.empty())
      throw NumericError("scenario " + std::to_string(errors.front().scenario) + ": " +
                         errors.front().message);
  }
};

namespace detail {

/// Static cyclic partition across threads; each index writes its own slot so
/// results do not depend on scheduling.
inline void parallel_for(int count, int jobs, const std::function<void(int)>& body) {
  jobs = std::max(1, std::min(jobs, count));
  if (jobs == 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(jobs);
  for (int w = 0; w < jobs; ++w)
    pool.emplace_back([&, w]() {
      for (int i = w; i < count; i += jobs) body(i);
    });
  for (auto& th : pool) th.join();
}

}  // namespace detail

/// Solves every column of theta (physical units) against the spec. Errors are
/// collected per scenario; remaining scenarios still run.
inline BatchResult solve_opf_batch(const OpfSpec& spec, const Mat& thetas,
                                   const FeatureMap& features, int jobs = 1,
                                   double gap_tol = 1e-9, int max_iters = 100) {
  const int T = static_cast<int>(thetas.cols());
  BatchResult out;
  out.solutions.resize(T);
  std::vector<std::string> errs(T);
  detail::parallel_for(T, jobs, [&](int t) {
    try {
      OpfTheta th = OpfTheta::from_theta(thetas.col(t), features, spec);
      out.solutions[t] = solve_opf(spec, th, gap_tol, max_iters);
    } catch (const std::exception& e) {
      errs[t] = e.what();
    }
  });
  for (int t = 0; t < T; ++t)
    if (!errs[t].empty()) out.errors.push_back({t, errs[t]});
  return out;
}

inline BatchResult solve_opf_batch(const OpfSpec& spec, const ScenarioSet& set, int jobs = 1,
                                   double gap_tol = 1e-9, int max_iters = 100) {
  if (set.normalized)
    throw StateError("solve_opf_batch: scenario set must carry physical data; denormalize first");
  return solve_opf_batch(spec, set.theta, set.features, jobs, gap_tol, max_iters);
}

/// CSV emission: scenario,qg_1..qg_G,s,objective,status
inline void save_batch_csv(const std::string& path, const BatchResult& batch) {
  std::ofstream f(path);
  if (!f) throw ParseError("cannot write " + path);
  int G = batch.solutions.empty() ? 0 : batch.solutions.front().g();
  f << "scenario";
  for (int j = 1; j <= G; ++j) f << ",qg_" << j;
  f << ",s,objective,status\n";
  char buf[64];
  for (size_t t = 0; t < batch.solutions.size(); ++t) {
    const OpfSolution& s = batch.solutions[t];
    f << t;
    for (int j = 0; j < G; ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", s.qg(j));
      f << "," << buf;
    }
    std::snprintf(buf, sizeof(buf), "%.17g", s.s);
    f << "," << buf;
    std::snprintf(buf, sizeof(buf), "%.17g", s.objective);
    f << "," << buf << "," << to_string(s.status) << "\n";
  }
}

}  // namespace opfd

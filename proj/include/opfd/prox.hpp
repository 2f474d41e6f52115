#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "opfd/common.hpp"
#include "opfd/groups.hpp"

namespace opfd {

/// Group shrink-or-kill map: per group, scale the stacked block by
/// (1 - beta/||y||) when ||y|| >= beta, otherwise zero it. Solves the grouped
/// proximal subproblem in closed form.
inline Mat group_prox(const Mat& Y, double beta, const GroupStructure& gs) {
  if (beta < 0.0) throw ArgumentError("group_prox: negative shrinkage");
  if (beta == 0.0) return Y;
  Mat out = Y;
  for (const auto& grp : gs.groups) {
    double sq = 0.0;
    for (int j : grp) sq += Y.col(j).squaredNorm();
    double nrm = std::sqrt(sq);
    if (nrm >= beta && nrm > 0.0) {
      double f = 1.0 - beta / nrm;
      for (int j : grp) out.col(j) *= f;
    } else {
      for (int j : grp) out.col(j).setZero();
    }
  }
  return out;
}

using CostFn = std::function<double(const Mat&)>;
using GradFn = std::function<Mat(const Mat&)>;

struct ApgConfig {
  double step = 0.0;         // convex engine: fixed step, <= 1/L of the smooth part
  double step_bar0 = 1.0;    // nonconvex engine: initial step before backtracking
  int max_iters = 500;
  double rel_tol = 1e-6;     // relative total-cost change
  double eta = 0.8;          // nonconvex averaging weight, in [0, 1)
  double delta = 1e-4;       // sufficient-decrease margin
  int backtrack_max = 30;
  std::uint64_t seed = 0;    // initialization seed used by callers

  void validate() const {
    if (step < 0.0 || step_bar0 <= 0.0) throw ArgumentError("apg: step sizes must be positive");
    if (delta <= 0.0) throw ArgumentError("apg: delta must be positive");
    if (eta < 0.0 || eta >= 1.0) throw ArgumentError("apg: eta must lie in [0, 1)");
  }
};

struct TraceRow {
  int iter = 0;
  double cost = 0.0;
  double smooth = 0.0;
  double penalty = 0.0;
  int nnz_groups = 0;
  std::string step_kind;
};

struct ApgResult {
  Mat W;
  double cost = 0.0;
  double smooth = 0.0;
  int iters = 0;
  bool converged = false;
  std::vector<TraceRow> trace;
  std::vector<double> c_seq;  // nonconvex monitor sequence c_i
  std::vector<double> q_seq;  // companion weights q_i
};

/// Per-iteration trace CSV: iter,cost,smooth_cost,penalty,nnz_groups,step_kind
inline void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace) {
  std::ofstream f(path);
  if (!f) throw ParseError("cannot write " + path);
  f << "iter,cost,smooth_cost,penalty,nnz_groups,step_kind\n";
  char a[64], b[64], c[64];
  for (const TraceRow& r : trace) {
    std::snprintf(a, sizeof(a), "%.17g", r.cost);
    std::snprintf(b, sizeof(b), "%.17g", r.smooth);
    std::snprintf(c, sizeof(c), "%.17g", r.penalty);
    f << r.iter << "," << a << "," << b << "," << c << "," << r.nnz_groups << ","
      << r.step_kind << "\n";
  }
}

namespace detail {

inline void check_finite(const Mat& m, const char* what, int iter) {
  if (!m.allFinite())
    throw NumericError(std::string(what) + " is not finite at iteration " + std::to_string(iter));
}

inline void check_finite(double v, const char* what, int iter) {
  if (!std::isfinite(v))
    throw NumericError(std::string(what) + " is not finite at iteration " + std::to_string(iter));
}

}  // namespace detail

/// Accelerated proximal gradient for a convex smooth part: extrapolate with
/// the alpha recursion, take a gradient step at the extrapolated point, and
/// apply the group proximal map. With step <= 1/L the total cost converges at
/// the O(1/i^2) rate. Stops when the relative total-cost change drops below
/// rel_tol; returns the last iterate.
inline ApgResult apg_convex(const CostFn& smooth, const GradFn& grad, double lambda,
                            const GroupStructure& gs, const ApgConfig& cfg, const Mat& W0) {
  cfg.validate();
  if (cfg.step <= 0.0) throw ArgumentError("apg_convex: cfg.step must be set");
  const double mu = cfg.step;

  ApgResult res;
  Mat W = W0, W_prev = W0;
  double a = 1.0, a_prev = 0.0;
  double F = smooth(W) + lambda * group_penalty(W, gs);
  for (int i = 1; i <= cfg.max_iters; ++i) {
    Mat Wbar = W + ((a_prev - 1.0) / a) * (W - W_prev);
    Mat Gr = grad(Wbar);
    detail::check_finite(Gr, "gradient", i);
    Mat Y = Wbar - mu * Gr;
    Mat W_next = group_prox(Y, lambda * mu, gs);
    double a_next = 0.5 * (1.0 + std::sqrt(4.0 * a * a + 1.0));

    double sm = smooth(W_next);
    detail::check_finite(sm, "cost", i);
    double pen = lambda * group_penalty(W_next, gs);
    double F_next = sm + pen;
    res.trace.push_back({i, F_next, sm, pen, count_active_groups(W_next, gs), "prox"});

    bool converged = std::abs(F_next - F) <= cfg.rel_tol * std::max(1.0, std::abs(F));
    W_prev = W;
    W = W_next;
    a_prev = a;
    a = a_next;
    F = F_next;
    res.iters = i;
    if (converged) {
      res.converged = true;
      break;
    }
  }
  res.W = W;
  res.cost = F;
  res.smooth = smooth(W);
  return res;
}

/// Monitored accelerated proximal gradient for nonconvex smooth parts.
/// Extrapolates over three points (W^i, Z^i, W^{i-1}), proximal-steps at the
/// extrapolation, and accepts the candidate only when it beats the monitor
/// c_i by the sufficient-decrease margin; otherwise it falls back to a
/// proximal step at W^i and keeps the better of the two candidates. The
/// monitor c and weight q follow the eta recursion, so c_i is a convex
/// combination of all past costs and accepted iterates never exceed it.
/// Step sizes come from halving line searches started at step_bar0.
inline ApgResult apg_nonconvex(const CostFn& smooth, const GradFn& grad, double lambda,
                               const GroupStructure& gs, const ApgConfig& cfg, const Mat& W0) {
  cfg.validate();

  auto total = [&](const Mat& M, double& sm_out) {
    sm_out = smooth(M);
    return sm_out + lambda * group_penalty(M, gs);
  };

  ApgResult res;
  Mat W = W0, W_prev = W0, Z = W0;
  double sm_w = 0.0;
  double F_w = total(W, sm_w);
  detail::check_finite(F_w, "initial cost", 0);
  double c = F_w, q = 1.0;
  double a = 1.0, a_prev = 0.0;
  res.c_seq.push_back(c);
  res.q_seq.push_back(q);

  // proximal step at base with halving until the total cost stops increasing
  // relative to the base point
  auto prox_search = [&](const Mat& base, double F_base, double& F_out, double& sm_out) {
    Mat Gr = grad(base);
    detail::check_finite(Gr, "gradient", res.iters + 1);
    double step = cfg.step_bar0;
    Mat cand;
    for (int bt = 0; bt <= cfg.backtrack_max; ++bt) {
      cand = group_prox(base - step * Gr, lambda * step, gs);
      F_out = total(cand, sm_out);
      detail::check_finite(F_out, "cost", res.iters + 1);
      if (F_out <= F_base || bt == cfg.backtrack_max) break;
      step *= 0.5;
    }
    return cand;
  };

  for (int i = 1; i <= cfg.max_iters; ++i) {
    Mat Wbar = ((a - 1.0) / a) * W + (a_prev / a) * Z - ((a_prev - 1.0) / a) * W_prev;
    double sm_bar = 0.0;
    double F_bar = total(Wbar, sm_bar);
    detail::check_finite(F_bar, "cost", i);

    double F_z = 0.0, sm_z = 0.0;
    Mat Z_next = prox_search(Wbar, F_bar, F_z, sm_z);

    Mat W_next;
    double F_next, sm_next;
    std::string kind;
    if (F_z <= c - cfg.delta * (Z_next - Wbar).squaredNorm()) {
      W_next = Z_next;
      F_next = F_z;
      sm_next = sm_z;
      kind = "extrapolated";
    } else {
      double F_zb = 0.0, sm_zb = 0.0;
      Mat Zb = prox_search(W, F_w, F_zb, sm_zb);
      if (F_z <= F_zb) {
        W_next = Z_next;
        F_next = F_z;
        sm_next = sm_z;
        kind = "extrapolated";
      } else {
        W_next = Zb;
        F_next = F_zb;
        sm_next = sm_zb;
        kind = "fallback";
      }
    }

    Z = Z_next;
    a_prev = a;
    a = 0.5 * (1.0 + std::sqrt(4.0 * a_prev * a_prev + 1.0));
    double q_next = cfg.eta * q + 1.0;
    c = (cfg.eta * q * c + F_next) / q_next;
    q = q_next;
    res.c_seq.push_back(c);
    res.q_seq.push_back(q);

    res.trace.push_back(
        {i, F_next, sm_next, F_next - sm_next, count_active_groups(W_next, gs), kind});

    bool converged = std::abs(F_next - F_w) <= cfg.rel_tol * std::max(1.0, std::abs(F_w));
    W_prev = W;
    W = W_next;
    F_w = F_next;
    sm_w = sm_next;
    res.iters = i;
    if (converged) {
      res.converged = true;
      break;
    }
  }
  res.W = W;
  res.cost = F_w;
  res.smooth = sm_w;
  return res;
}

}  // namespace opfd

#pragma once

#include <string>
#include <vector>

#include "opfd/common.hpp"
#include "opfd/opf.hpp"

namespace opfd {

struct SensTols {
  double primal = 1e-7;  // slack below this counts as active
  double dual = 1e-7;    // dual above this makes an active row strongly active
};

/// Classification of the inequality rows at an OPF solution. Indices cover
/// the 2N voltage and 2G rating rows; the s >= 0 bound is reported through
/// the s_strong / s_weak flags. Weakly active rows (tight with a vanishing
/// dual) signal a degenerate point: the Jacobian there is one element of the
/// generalized Jacobian, obtained by treating those rows as inactive.
struct ActiveSet {
  std::vector<int> strong;
  std::vector<int> weak;
  bool s_strong = false;
  bool s_weak = false;

  bool degenerate() const { return !weak.empty() || s_weak; }
};

inline ActiveSet active_set(const OpfSolution& sol, const SensTols& tols = {}) {
  if (sol.status != SolveStatus::optimal)
    throw ArgumentError("active_set: solution is not optimal");
  ActiveSet out;
  const int rows = static_cast<int>(sol.duals.size());
  for (int i = 0; i < rows; ++i) {
    bool tight = sol.slacks(i) <= tols.primal;
    if (!tight) continue;
    bool strong = sol.duals(i) >= tols.dual;
    if (i == rows - 1) {
      (strong ? out.s_strong : out.s_weak) = true;
    } else {
      (strong ? out.strong : out.weak).push_back(i);
    }
  }
  return out;
}

/// Jacobian of the OPF minimizer x = [q^g; s] with respect to the OPF data
/// vector theta, together with the active set it was computed on.
struct SensitivitySet {
  Mat jacobian;  // (G+1) x P
  ActiveSet act;
  bool degenerate = false;
};

/// Differentiates the KKT conditions at the solution: strongly active rows
/// are kept as equalities, every other row is dropped, and the resulting
/// linear system is solved for d x / d theta. The theta-derivatives of the
/// QP cost and right-hand side come from the problem structure itself:
/// only q_load features enter the objective, and both kinds shift the
/// voltage-constraint bounds through R and X columns.
inline SensitivitySet minimizer_jacobian(const OpfSpec& spec, const OpfSolution& sol,
                                         const OpfTheta& theta, const SensTols& tols = {}) {
  spec.validate();
  const int N = spec.n();
  const int G = spec.g();
  const FeatureMap& features = theta.features;
  const int P = features.empty() ? 2 * N : static_cast<int>(features.size());

  SensitivitySet out;
  out.act = active_set(sol, tols);
  out.degenerate = out.act.degenerate();

  const Mat E = spec.incidence();
  const Mat XE = spec.grid.X * E;
  const Mat ERt = E.transpose() * spec.grid.R;  // G x N

  // feature kind/bus lookup; empty map means full [p; ql] stacking
  auto feature_at = [&](int j) -> Feature {
    if (!features.empty()) return features[j];
    return j < N ? Feature{FeatureKind::p_net, j + 1} : Feature{FeatureKind::q_load, j - N + 1};
  };

  // d c / d theta, (G+1) x P
  Mat dc = Mat::Zero(G + 1, P);
  for (int j = 0; j < P; ++j) {
    Feature f = feature_at(j);
    if (f.kind == FeatureKind::q_load) dc.block(0, j, G, 1) = -2.0 * ERt.col(f.bus - 1);
  }

  const std::vector<int>& act = out.act.strong;
  const int n_eq = static_cast<int>(act.size()) + (out.act.s_strong ? 1 : 0);
  const int nv = G + 1;

  Mat A_eq = Mat::Zero(n_eq, nv);
  Mat db = Mat::Zero(n_eq, P);
  for (int r = 0; r < static_cast<int>(act.size()); ++r) {
    int row = act[r];
    if (row < N) {
      A_eq.block(r, 0, 1, G) = XE.row(row);
      A_eq(r, G) = -1.0;
    } else if (row < 2 * N) {
      A_eq.block(r, 0, 1, G) = -XE.row(row - N);
      A_eq(r, G) = -1.0;
    } else if (row < 2 * N + G) {
      A_eq(r, row - 2 * N) = 1.0;
    } else {
      A_eq(r, row - 2 * N - G) = -1.0;
    }
    if (row < 2 * N) {
      int bus_row = row < N ? row : row - N;
      double sgn = row < N ? -1.0 : 1.0;  // b_up = vbar - u, b_lo = vbar + u
      for (int j = 0; j < P; ++j) {
        Feature f = feature_at(j);
        double du = (f.kind == FeatureKind::p_net) ? spec.grid.R(bus_row, f.bus - 1)
                                                   : -spec.grid.X(bus_row, f.bus - 1);
        db(r, j) = sgn * du;
      }
    }
  }
  if (out.act.s_strong) A_eq(n_eq - 1, G) = -1.0;

  Mat Q = Mat::Zero(nv, nv);
  Q.topLeftCorner(G, G) = 2.0 * (E.transpose() * spec.grid.R * E);
  Q(G, G) = 2.0 * spec.nu;

  Mat kkt = Mat::Zero(nv + n_eq, nv + n_eq);
  kkt.topLeftCorner(nv, nv) = Q;
  if (n_eq > 0) {
    kkt.block(0, nv, nv, n_eq) = A_eq.transpose();
    kkt.block(nv, 0, n_eq, nv) = A_eq;
  }
  Mat rhs = Mat::Zero(nv + n_eq, P);
  rhs.topRows(nv) = -dc;
  rhs.bottomRows(n_eq) = db;

  Eigen::FullPivLU<Mat> lu(kkt);
  if (!lu.isInvertible()) {
    std::string rows;
    for (int r : act) rows += std::to_string(r) + " ";
    throw RankError("minimizer_jacobian: singular KKT system; active rows [" + rows +
                    "] are linearly dependent");
  }
  Mat sol_full = lu.solve(rhs);
  out.jacobian = sol_full.topRows(nv);
  return out;
}

}  // namespace opfd

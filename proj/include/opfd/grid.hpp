#pragma once

#include <complex>
#include <vector>

#include "opfd/common.hpp"
#include "opfd/feeder.hpp"

namespace opfd {

/// Sensitivities of the linearized grid model v = R p + X q + v0 1.
/// R[n][m] (X[n][m]) is the total resistance (reactance) on the edges shared
/// by the substation-to-n and substation-to-m paths. Both matrices are
/// symmetric positive definite for a connected tree with positive impedances.
struct GridMatrices {
  Mat R;
  Mat X;
  int n() const { return static_cast<int>(R.rows()); }
};

/// Builds R and X by walking buses in breadth-first order: the row of a bus
/// equals its parent's row plus the incoming line impedance on the subtree
/// the line feeds.
inline GridMatrices build_grid_matrices(const FeederModel& model) {
  model.validate();
  const int N = model.n_bus;
  for (const Line& ln : model.lines)
    if (ln.r <= 0.0 || ln.x <= 0.0)
      throw ModelError("nonpositive impedance on line " + std::to_string(ln.from) +
                       "-" + std::to_string(ln.to));

  std::vector<int> parent = model.parents();
  std::vector<double> r_in(N, 0.0), x_in(N, 0.0);
  for (const Line& ln : model.lines) {
    // the endpoint whose parent is the other endpoint is the child
    int child = (ln.to != 0 && parent[ln.to - 1] == ln.from) ? ln.to : ln.from;
    r_in[child - 1] = ln.r;
    x_in[child - 1] = ln.x;
  }

  // breadth-first order from the root
  std::vector<std::vector<int>> children(N + 1);
  for (int n = 1; n <= N; ++n) children[parent[n - 1]].push_back(n);
  std::vector<int> order;
  order.reserve(N);
  std::vector<int> stack = {0};
  while (!stack.empty()) {
    int u = stack.back();
    stack.pop_back();
    if (u != 0) order.push_back(u);
    for (int c : children[u]) stack.push_back(c);
  }

  // subtree membership masks per bus, found from DFS entry/exit times
  std::vector<int> tin(N + 1), tout(N + 1);
  {
    int timer = 0;
    std::vector<std::pair<int, bool>> dfs = {{0, false}};
    while (!dfs.empty()) {
      auto [u, done] = dfs.back();
      dfs.pop_back();
      if (done) {
        tout[u] = timer++;
        continue;
      }
      tin[u] = timer++;
      dfs.push_back({u, true});
      for (int c : children[u]) dfs.push_back({c, false});
    }
  }
  auto in_subtree = [&](int m, int rootbus) {
    return tin[rootbus] <= tin[m] && tout[m] <= tout[rootbus];
  };

  GridMatrices g;
  g.R = Mat::Zero(N, N);
  g.X = Mat::Zero(N, N);
  for (int n : order) {
    int p = parent[n - 1];
    for (int m = 1; m <= N; ++m) {
      double base_r = (p == 0) ? 0.0 : g.R(p - 1, m - 1);
      double base_x = (p == 0) ? 0.0 : g.X(p - 1, m - 1);
      bool shared = in_subtree(m, n);  // incoming edge of n lies on path to m
      g.R(n - 1, m - 1) = base_r + (shared ? r_in[n - 1] : 0.0);
      g.X(n - 1, m - 1) = base_x + (shared ? x_in[n - 1] : 0.0);
    }
  }
  // the construction fills row-by-row; enforce exact symmetry
  g.R = ((g.R + g.R.transpose()) * 0.5).eval();
  g.X = ((g.X + g.X.transpose()) * 0.5).eval();
  return g;
}

/// v = R p + X q + v0 1.
inline Vec linear_voltage(const GridMatrices& mat, const Vec& p, const Vec& q, double v0) {
  require_shape(p.size() == mat.n() && q.size() == mat.n(),
                "linear_voltage: injection length does not match grid size");
  return mat.R * p + mat.X * q + Vec::Constant(mat.n(), v0);
}

/// Ohmic losses of the second-order model, 2 p'Rp + 2 q'Rq.
inline double quadratic_losses(const GridMatrices& mat, const Vec& p, const Vec& q) {
  require_shape(p.size() == mat.n() && q.size() == mat.n(),
                "quadratic_losses: injection length does not match grid size");
  return 2.0 * p.dot(mat.R * p) + 2.0 * q.dot(mat.R * q);
}

/// Exact AC power flow for the radial feeder via backward/forward sweeps on
/// complex phasors. Injections are in pu; returns voltage magnitudes.
/// Converges when the largest voltage update falls below tol.
inline Vec ac_power_flow(const FeederModel& model, const Vec& p, const Vec& q,
                         double v0, int max_sweeps = 200, double tol = 1e-10) {
  const int N = model.n_bus;
  require_shape(p.size() == N && q.size() == N,
                "ac_power_flow: injection length does not match feeder size");
  std::vector<int> parent = model.parents();

  std::vector<std::complex<double>> z(N);
  for (const Line& ln : model.lines) {
    int child = (ln.to != 0 && parent[ln.to - 1] == ln.from) ? ln.to : ln.from;
    z[child - 1] = {ln.r, ln.x};
  }

  std::vector<std::vector<int>> children(N + 1);
  for (int n = 1; n <= N; ++n) children[parent[n - 1]].push_back(n);
  std::vector<int> order;  // root-to-leaf
  order.reserve(N);
  {
    std::vector<int> stack = {0};
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      if (u != 0) order.push_back(u);
      for (int c : children[u]) stack.push_back(c);
    }
  }

  std::vector<std::complex<double>> V(N + 1, {v0, 0.0});
  std::vector<std::complex<double>> J(N + 1);  // branch current into bus n
  double delta = 0.0;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    // backward: accumulate branch currents from the leaves up
    for (int i = N - 1; i >= 0; --i) {
      int n = order[i];
      std::complex<double> s(p(n - 1), q(n - 1));
      std::complex<double> inj = std::conj(s / V[n]);
      std::complex<double> sum = -inj;
      for (int c : children[n]) sum += J[c];
      J[n] = sum;
    }
    // forward: propagate voltage drops from the root down
    delta = 0.0;
    for (int n : order) {
      std::complex<double> v_new = V[parent[n - 1]] - z[n - 1] * J[n];
      delta = std::max(delta, std::abs(v_new - V[n]));
      V[n] = v_new;
    }
    if (delta <= tol) {
      Vec mag(N);
      for (int n = 1; n <= N; ++n) mag(n - 1) = std::abs(V[n]);
      return mag;
    }
  }
  throw ConvergenceError("ac_power_flow: no convergence after " +
                             std::to_string(max_sweeps) + " sweeps (residual " +
                             std::to_string(delta) + ")",
                         delta);
}

}  // namespace opfd

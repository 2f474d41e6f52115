#pragma once

// Independent reference computations used only by tests. Everything here is
// deliberately written in the most direct way available (closed forms, brute
// force, explicit summation) and never calls the code path it checks.

#include <cmath>
#include <limits>

#include "opfd/common.hpp"
#include "opfd/feeder.hpp"
#include "opfd/opf.hpp"

namespace oracles {

using opfd::Mat;
using opfd::Vec;

/// Exact single-branch DistFlow: solves the quadratic in the squared branch
/// current l, (r^2+x^2) l^2 - (2rp + 2xq + v0^2) l + (p^2+q^2) = 0, takes the
/// physical (small) root, and evaluates the receiving-end voltage.
inline double single_branch_voltage(double r, double x, double p, double q, double v0) {
  double a = r * r + x * x;
  double b = 2.0 * r * p + 2.0 * x * q + v0 * v0;
  double cc = p * p + q * q;
  double l;
  if (a == 0.0) {
    l = cc / b;
  } else {
    double disc = b * b - 4.0 * a * cc;
    l = (b - std::sqrt(disc)) / (2.0 * a);
  }
  double P = -p + r * l;
  double Q = -q + x * l;
  double v2 = v0 * v0 - 2.0 * (r * P + x * Q) + a * l;
  return std::sqrt(v2);
}

/// Losses by explicit double-loop summation of 2 p'Rp + 2 q'Rq.
inline double losses_by_summation(const Mat& R, const Vec& p, const Vec& q) {
  double acc = 0.0;
  for (int i = 0; i < R.rows(); ++i)
    for (int j = 0; j < R.cols(); ++j) acc += 2.0 * p(i) * R(i, j) * p(j) + 2.0 * q(i) * R(i, j) * q(j);
  return acc;
}

/// Brute-force solution of a single-DER soft OPF on a grid of q^g values.
/// For each candidate, the optimal slack is the smallest feasible one.
struct BruteForceResult {
  double qg = 0.0;
  double s = 0.0;
  double objective = std::numeric_limits<double>::infinity();
};

inline BruteForceResult brute_force_1der(const opfd::OpfSpec& spec, const opfd::OpfTheta& theta,
                                         double grid_step = 1e-4) {
  if (spec.g() != 1) throw opfd::ArgumentError("brute_force_1der: exactly one DER expected");
  const Mat E = spec.incidence();
  BruteForceResult best;
  double qmax = spec.der_qmax(0);
  long steps = static_cast<long>(std::floor(2.0 * qmax / grid_step)) + 1;
  for (long i = 0; i < steps; ++i) {
    double qg = -qmax + i * grid_step;
    Vec q = E.col(0) * qg - theta.ql;
    Vec dev = spec.grid.R * theta.p + spec.grid.X * q;
    double worst = dev.cwiseAbs().maxCoeff();
    double s = std::max(0.0, worst - spec.v_limit);
    double obj = q.dot(spec.grid.R * q) + spec.nu * s * s + spec.rho * s;
    if (obj < best.objective) best = {qg, s, obj};
  }
  return best;
}

/// Central finite differences of the OPF minimizer x = [q^g; s] with respect
/// to one theta coordinate, re-solving the OPF on both sides.
inline Vec fd_minimizer_column(const opfd::OpfSpec& spec, const Vec& theta,
                               const opfd::FeatureMap& features, int coord, double h) {
  Vec tp = theta, tm = theta;
  tp(coord) += h;
  tm(coord) -= h;
  opfd::OpfSolution sp = opfd::solve_opf(spec, opfd::OpfTheta::from_theta(tp, features, spec));
  opfd::OpfSolution sm = opfd::solve_opf(spec, opfd::OpfTheta::from_theta(tm, features, spec));
  Vec xp(sp.qg.size() + 1), xm(sm.qg.size() + 1);
  xp << sp.qg, sp.s;
  xm << sm.qg, sm.s;
  return (xp - xm) / (2.0 * h);
}

}  // namespace oracles

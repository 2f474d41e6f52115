#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include "opfd/common.hpp"

namespace opfd {

/// Dense convex QP with inequality constraints only:
///   minimize   1/2 x'Qx + c'x + obj_const
///   subject to A x <= b
struct QpProblem {
  Mat Q;
  Vec c;
  Mat A;
  Vec b;
  double obj_const = 0.0;

  int n() const { return static_cast<int>(c.size()); }
  int m() const { return static_cast<int>(b.size()); }
};

enum class QpStatus { optimal, max_iter, numeric_failure };

struct QpResult {
  Vec x;
  Vec lambda;  // multipliers of A x <= b, nonnegative
  Vec slack;   // b - A x
  QpStatus status = QpStatus::numeric_failure;
  int iters = 0;
  double gap = std::numeric_limits<double>::infinity();       // w'lambda / m
  double stat_res = std::numeric_limits<double>::infinity();  // ||Qx + c + A'lambda||_inf
  double feas_res = std::numeric_limits<double>::infinity();  // max(0, Ax - b)_inf
  double comp_res = std::numeric_limits<double>::infinity();  // max_i |lambda_i (b - Ax)_i|
  double objective = std::numeric_limits<double>::quiet_NaN();

  double kkt_residual() const { return std::max({stat_res, feas_res, comp_res}); }
};

namespace detail {

inline double max_step(const Vec& v, const Vec& dv) {
  double a = 1.0;
  for (int i = 0; i < v.size(); ++i)
    if (dv(i) < 0.0) a = std::min(a, -v(i) / dv(i));
  return a;
}

}  // namespace detail

/// Primal-dual interior-point solver with Mehrotra predictor-corrector steps.
/// Returns primal and dual iterates; duals are accurate enough for active-set
/// identification and minimizer sensitivities (complementarity driven to gap_tol).
inline QpResult solve_qp(const QpProblem& qp, double gap_tol = 1e-9, int max_iters = 100) {
  const int n = qp.n();
  const int m = qp.m();
  require_shape(qp.Q.rows() == n && qp.Q.cols() == n, "solve_qp: Q dimension mismatch");
  require_shape(qp.A.rows() == m && qp.A.cols() == n, "solve_qp: A dimension mismatch");

  QpResult res;
  res.x = Vec::Zero(n);
  if (m == 0) {
    // unconstrained quadratic
    Eigen::LDLT<Mat> ldlt(qp.Q);
    res.x = ldlt.solve(-qp.c);
    res.lambda = Vec(0);
    res.slack = Vec(0);
    res.status = QpStatus::optimal;
    res.gap = 0.0;
    res.stat_res = (qp.Q * res.x + qp.c).cwiseAbs().maxCoeff();
    res.feas_res = res.comp_res = 0.0;
    res.objective = 0.5 * res.x.dot(qp.Q * res.x) + qp.c.dot(res.x) + qp.obj_const;
    return res;
  }

  Vec x = Vec::Zero(n);
  Vec w = (qp.b - qp.A * x).cwiseMax(1.0);
  Vec lam = Vec::Ones(m);

  const double res_tol = 1e-10;
  const double scale_c = 1.0 + qp.c.cwiseAbs().maxCoeff();
  const double scale_b = 1.0 + qp.b.cwiseAbs().maxCoeff();

  double best_score = std::numeric_limits<double>::infinity();
  auto record = [&](int it) {
    Vec rd = qp.Q * x + qp.c + qp.A.transpose() * lam;
    Vec ax = qp.A * x;
    double stat = rd.cwiseAbs().maxCoeff();
    double feas = (ax - qp.b).cwiseMax(0.0).maxCoeff();
    Vec sl = qp.b - ax;
    double comp = (lam.array() * sl.array()).abs().maxCoeff();
    double mu = w.dot(lam) / m;
    double score = std::max({stat / scale_c, feas / scale_b, mu});
    if (score < best_score) {
      best_score = score;
      res.x = x;
      res.lambda = lam;
      res.slack = sl;
      res.stat_res = stat;
      res.feas_res = feas;
      res.comp_res = comp;
      res.gap = mu;
      res.iters = it;
    }
    bool done = stat / scale_c <= res_tol && feas / scale_b <= res_tol && mu <= gap_tol &&
                comp <= 10.0 * gap_tol;
    return std::make_pair(done, mu);
  };

  for (int it = 0; it <= max_iters; ++it) {
    auto [done, mu] = record(it);
    if (done) {
      res.status = QpStatus::optimal;
      res.objective = 0.5 * res.x.dot(qp.Q * res.x) + qp.c.dot(res.x) + qp.obj_const;
      return res;
    }
    if (it == max_iters) break;

    Vec rd = qp.Q * x + qp.c + qp.A.transpose() * lam;
    Vec rp = qp.A * x + w - qp.b;
    Vec d = lam.cwiseQuotient(w);

    Mat M = qp.Q + qp.A.transpose() * d.asDiagonal() * qp.A;
    Eigen::LDLT<Mat> ldlt;
    double reg = 0.0;
    for (int attempt = 0; attempt < 4; ++attempt) {
      ldlt.compute(M + reg * Mat::Identity(n, n));
      if (ldlt.info() == Eigen::Success && ldlt.isPositive()) break;
      reg = (reg == 0.0) ? 1e-12 * (1.0 + M.diagonal().cwiseAbs().maxCoeff()) : reg * 100.0;
    }
    if (ldlt.info() != Eigen::Success) {
      res.status = QpStatus::numeric_failure;
      res.objective = 0.5 * res.x.dot(qp.Q * res.x) + qp.c.dot(res.x) + qp.obj_const;
      return res;
    }

    auto solve_step = [&](const Vec& rc) {
      Vec rhs = -rd - qp.A.transpose() * (d.asDiagonal() * rp - rc.cwiseQuotient(w));
      Vec dx = ldlt.solve(rhs);
      Vec dlam = d.asDiagonal() * (qp.A * dx + rp) - rc.cwiseQuotient(w);
      Vec dw = -(rc + w.cwiseProduct(dlam)).cwiseQuotient(lam);
      return std::tuple<Vec, Vec, Vec>(dx, dlam, dw);
    };

    // predictor
    Vec rc_aff = w.cwiseProduct(lam);
    auto [dx_a, dlam_a, dw_a] = solve_step(rc_aff);
    double ap_a = detail::max_step(w, dw_a);
    double ad_a = detail::max_step(lam, dlam_a);
    double mu_aff = (w + ap_a * dw_a).dot(lam + ad_a * dlam_a) / m;
    double sigma = std::pow(std::max(mu_aff, 0.0) / std::max(mu, 1e-300), 3.0);
    sigma = std::min(std::max(sigma, 0.0), 1.0);

    // corrector
    Vec rc = w.cwiseProduct(lam) + dw_a.cwiseProduct(dlam_a) -
             Vec::Constant(m, sigma * mu);
    auto [dx, dlam, dw] = solve_step(rc);

    const double tau = 0.995;
    double ap = std::min(1.0, tau * detail::max_step(w, dw));
    double ad = std::min(1.0, tau * detail::max_step(lam, dlam));

    x += ap * dx;
    w += ap * dw;
    lam += ad * dlam;

    if (!x.allFinite() || !w.allFinite() || !lam.allFinite()) {
      res.status = QpStatus::numeric_failure;
      res.objective = 0.5 * res.x.dot(qp.Q * res.x) + qp.c.dot(res.x) + qp.obj_const;
      return res;
    }
  }

  res.status = QpStatus::max_iter;
  res.objective = 0.5 * res.x.dot(qp.Q * res.x) + qp.c.dot(res.x) + qp.obj_const;
  return res;
}

}  // namespace opfd

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "opfd/common.hpp"
#include "opfd/distill.hpp"
#include "opfd/groups.hpp"
#include "opfd/prox.hpp"
#include "opfd/rng.hpp"
#include "opfd/scenario.hpp"

namespace opfd {

/// Data covariance C = Theta Theta' / T with its full symmetric
/// eigendecomposition, eigenvalues descending.
struct CovarianceBundle {
  Mat C;
  Vec eigvals;
  Mat U;

  int p() const { return static_cast<int>(C.rows()); }
};

inline CovarianceBundle covariance(const ScenarioSet& set) {
  if (set.t() == 0) throw ArgumentError("covariance: empty scenario set");
  CovarianceBundle out;
  out.C = set.theta * set.theta.transpose() / static_cast<double>(set.t());
  out.C = ((out.C + out.C.transpose()) * 0.5).eval();
  Eigen::SelfAdjointEigenSolver<Mat> es(out.C);
  if (es.info() != Eigen::Success) throw NumericError("covariance: eigendecomposition failed");
  // Eigen returns ascending order
  out.eigvals = es.eigenvalues().reverse();
  out.U = es.eigenvectors().rowwise().reverse();
  return out;
}

/// Data fitting cost f1(W) = ||Theta - W Theta||_F^2 / (2T), evaluated
/// through the covariance as tr((I-W) C (I-W)') / 2.
inline double f1_cost(const Mat& W, const CovarianceBundle& cov) {
  Mat M = Mat::Identity(W.rows(), W.cols()) - W;
  return 0.5 * (M * cov.C).cwiseProduct(M).sum();
}

inline double f1_cost(const Mat& W, const ScenarioSet& set) {
  require_shape(W.rows() == set.p() && W.cols() == set.p(), "f1_cost: W dimension mismatch");
  return (set.theta - W * set.theta).squaredNorm() / (2.0 * set.t());
}

/// Best rank-K reconstruction benchmark: W = U_K U_K'. No data selection.
inline DistillationMap fit_pca(const ScenarioSet& set, int k) {
  CovarianceBundle cov = covariance(set);
  if (k < 1 || k > cov.p()) throw ArgumentError("fit_pca: K out of range");
  Mat Uk = cov.U.leftCols(k);
  return make_map(Method::PCA, Uk, {}, cov.p(), GroupStructure::Mode::columns);
}

/// Greedy interpolation-point selection on the top-K eigenvectors.
/// The first index maximizes |U[:,1]|; each later index maximizes the
/// residual of the next eigenvector after interpolating it through the
/// points already chosen. The reconstruction C = U_K (S'U_K)^{-1} then
/// interpolates exactly at the selected entries; its rows at the selected
/// indices are unit rows by construction, which this implementation also
/// enforces bitwise.
inline DistillationMap fit_deim(const ScenarioSet& set, int k) {
  CovarianceBundle cov = covariance(set);
  const int P = cov.p();
  if (k < 1 || k > P) throw ArgumentError("fit_deim: K out of range");

  std::vector<int> sel;
  sel.reserve(k);
  int i0 = 0;
  cov.U.col(0).cwiseAbs().maxCoeff(&i0);
  sel.push_back(i0);
  for (int step = 1; step < k; ++step) {
    Mat Uk = cov.U.leftCols(step);         // P x step
    Mat SU(step, step);                    // S' U_k
    Vec su_next(step);                     // S' u_{k+1}
    for (int r = 0; r < step; ++r) {
      SU.row(r) = Uk.row(sel[r]);
      su_next(r) = cov.U(sel[r], step);
    }
    Eigen::FullPivLU<Mat> lu(SU);
    if (!lu.isInvertible())
      throw RankError("fit_deim: S'U_k became singular at step " + std::to_string(step));
    Vec coef = lu.solve(su_next);
    Vec resid = cov.U.col(step) - Uk * coef;
    int idx = 0;
    resid.cwiseAbs().maxCoeff(&idx);
    sel.push_back(idx);
  }

  Mat Uk = cov.U.leftCols(k);
  Mat SU(k, k);
  for (int r = 0; r < k; ++r) SU.row(r) = Uk.row(sel[r]);
  Eigen::FullPivLU<Mat> lu(SU);
  if (!lu.isInvertible()) throw RankError("fit_deim: S'U_K is singular");
  Mat C = Uk * lu.inverse();
  // interpolation rows are exactly the identity
  for (int r = 0; r < k; ++r) {
    C.row(sel[r]).setZero();
    C(sel[r], r) = 1.0;
  }
  return make_map(Method::DEIM, C, sel, P, GroupStructure::Mode::columns);
}

/// Smallest weight that zeroes the whole group-lasso solution: the largest
/// group norm over the stacked covariance columns. For per-column groups
/// this is max_p ||c_p||.
inline double lambda1_max(const CovarianceBundle& cov, const GroupStructure& gs) {
  double best = 0.0;
  for (const auto& grp : gs.groups) {
    double sq = 0.0;
    for (int j : grp) sq += cov.C.col(j).squaredNorm();
    best = std::max(best, std::sqrt(sq));
  }
  return best;
}

namespace detail {

/// Thresholds group norms, hard-zeroes dropped columns, and packs the
/// surviving columns of W into a selection map.
inline DistillationMap finalize_selection(Method method, const Mat& W, const GroupStructure& gs,
                                          double lambda, double zero_tol = 1e-6) {
  std::vector<int> sel = active_columns(W, gs, zero_tol);
  Mat C(W.rows(), sel.size());
  for (size_t j = 0; j < sel.size(); ++j) C.col(j) = W.col(sel[j]);
  return make_map(method, C, sel, static_cast<int>(W.rows()), gs.mode, lambda);
}

}  // namespace detail

/// Group lasso distillation, solved with the convex APG engine:
/// grad f1 = (W - I) C_theta and fixed step 1/lambda_max(C_theta).
inline DistillationMap fit_gl(const ScenarioSet& set, double lambda1, const GroupStructure& gs,
                              const ApgConfig& cfg = {}) {
  if (lambda1 < 0.0) throw ArgumentError("fit_gl: negative lambda");
  CovarianceBundle cov = covariance(set);
  gs.validate(cov.p());
  double lmax = std::max(cov.eigvals(0), 1e-300);

  ApgConfig run = cfg;
  if (run.step <= 0.0) run.step = 1.0 / lmax;
  Mat W0 = Rng(run.seed).randn(cov.p(), cov.p());

  CostFn smooth = [&cov](const Mat& W) { return f1_cost(W, cov); };
  GradFn grad = [&cov](const Mat& W) -> Mat {
    return (W - Mat::Identity(W.rows(), W.cols())) * cov.C;
  };
  ApgResult res = apg_convex(smooth, grad, lambda1, gs, run, W0);
  return detail::finalize_selection(Method::GL, res.W, gs, lambda1);
}

/// Two-stage group lasso: GL fixes the selection, then C is refit by least
/// squares, C = C_theta S (S' C_theta S)^{-1}.
inline DistillationMap fit_gl2(const ScenarioSet& set, double lambda1, const GroupStructure& gs,
                               const ApgConfig& cfg = {}) {
  DistillationMap stage1 = fit_gl(set, lambda1, gs, cfg);
  if (stage1.selected.empty())
    throw ArgumentError("fit_gl2: GL stage selected no features (lambda too large)");
  CovarianceBundle cov = covariance(set);
  const auto& sel = stage1.selected;
  Mat CS(cov.p(), sel.size());
  Mat SCS(sel.size(), sel.size());
  for (size_t j = 0; j < sel.size(); ++j) CS.col(j) = cov.C.col(sel[j]);
  for (size_t i = 0; i < sel.size(); ++i) SCS.row(i) = CS.row(sel[i]);
  Eigen::FullPivLU<Mat> lu(SCS);
  if (!lu.isInvertible())
    throw RankError("fit_gl2: selected features are collinear (S'C S singular)");
  Mat C = CS * lu.inverse();
  return make_map(Method::GL2, C, sel, cov.p(), gs.mode, lambda1);
}

struct BisectResult {
  double lambda = 0.0;
  DistillationMap map;
  int achieved_k = 0;
  bool exact = false;
  int rounds = 0;
};

/// Bisection on the regularization weight until the fit has exactly k_target
/// nonzero groups. The achieved count is treated as approximately monotone in
/// lambda; if the exact count is never hit the closest fit is returned with
/// exact = false.
inline BisectResult bisect_lambda_for_k(const std::function<DistillationMap(double)>& fitter,
                                        const GroupStructure& gs, int k_target, double lambda_hi,
                                        int max_rounds = 30) {
  if (k_target < 1 || k_target > gs.n_groups())
    throw ArgumentError("bisect_lambda_for_k: target group count out of range");
  if (lambda_hi <= 0.0) throw ArgumentError("bisect_lambda_for_k: lambda_hi must be positive");

  auto groups_of = [&](const DistillationMap& m) {
    // count groups intersecting the selection
    int cnt = 0;
    for (const auto& grp : gs.groups) {
      bool hit = false;
      for (int j : grp)
        hit = hit || std::binary_search(m.selected.begin(), m.selected.end(), j);
      cnt += hit ? 1 : 0;
    }
    return cnt;
  };

  BisectResult best;
  int best_gap = INT32_MAX;
  auto consider = [&](double lam, const DistillationMap& m, int count) {
    int gap = std::abs(count - k_target);
    // prefer smaller gap; at equal gap prefer over-selection
    bool better = gap < best_gap ||
                  (gap == best_gap && count >= k_target && best.achieved_k < k_target);
    if (better) {
      best.lambda = lam;
      best.map = m;
      best.achieved_k = count;
      best.exact = count == k_target;
      best_gap = gap;
    }
    return count == k_target;
  };

  double lo = 0.0, hi = lambda_hi;
  {
    DistillationMap m = fitter(lo);
    int cnt = groups_of(m);
    best.rounds = 1;
    if (consider(lo, m, cnt)) return best;
    if (cnt < k_target) return best;  // even lambda=0 cannot reach the target
  }
  for (int round = 0; round < max_rounds; ++round) {
    DistillationMap m = fitter(0.5 * (lo + hi));
    int cnt = groups_of(m);
    best.rounds = round + 2;
    if (consider(0.5 * (lo + hi), m, cnt)) return best;
    if (cnt > k_target)
      lo = 0.5 * (lo + hi);
    else
      hi = 0.5 * (lo + hi);
  }
  return best;
}

/// GL2 at a target K, found by bisection on lambda over [0, lambda1_max].
inline BisectResult fit_gl2_k(const ScenarioSet& set, int k_target, const GroupStructure& gs,
                              const ApgConfig& cfg = {}, int max_rounds = 30) {
  CovarianceBundle cov = covariance(set);
  double hi = lambda1_max(cov, gs);
  BisectResult r = bisect_lambda_for_k(
      [&](double lam) { return fit_gl(set, lam, gs, cfg); }, gs, k_target,
      std::max(hi, 1e-12), max_rounds);
  if (!r.map.selected.empty()) {
    DistillationMap refit = fit_gl2(set, r.lambda, gs, cfg);
    r.map = refit;
  }
  return r;
}

}  // namespace opfd

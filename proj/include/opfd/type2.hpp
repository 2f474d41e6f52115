#pragma once

#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "opfd/common.hpp"
#include "opfd/distill.hpp"
#include "opfd/opf.hpp"
#include "opfd/prox.hpp"
#include "opfd/sensitivity.hpp"
#include "opfd/type1.hpp"

namespace opfd {

/// Training set for decision-fidelity distillation: normalized scenarios
/// paired with the OPF minimizers of the original (physical) data.
struct OpfDataset {
  ScenarioSet scn;  // normalized, P x T
  Mat X;            // (G+1) x T reference minimizers [q^g; s]

  int p() const { return scn.p(); }
  int t() const { return scn.t(); }
};

/// Solves the reference batch on raw data and normalizes the scenarios.
inline OpfDataset build_opf_dataset(const OpfSpec& spec, const ScenarioSet& raw, int jobs = 1) {
  if (raw.normalized) throw StateError("build_opf_dataset: expected raw scenarios");
  OpfDataset data;
  data.scn = normalize(raw);
  BatchResult batch = solve_opf_batch(spec, raw, jobs);
  batch.throw_if_failed();
  const int G = spec.g();
  data.X = Mat(G + 1, raw.t());
  for (int t = 0; t < raw.t(); ++t) {
    const OpfSolution& s = batch.solutions[t];
    if (s.status != SolveStatus::optimal)
      throw NumericError("build_opf_dataset: scenario " + std::to_string(t) +
                         " did not solve to optimality");
    data.X.col(t).head(G) = s.qg;
    data.X(G, t) = s.s;
  }
  return data;
}

/// OPF fitting error and its gradient, with per-iterate caching of the batch
/// solutions and minimizer Jacobians. Reconstruction follows the
/// normalization chain: the map acts on normalized data and the OPF consumes
/// the denormalized vector, theta_hat = Dsigma W theta_tilde + mean, so the
/// gradient carries the Dsigma factor. With identity stats this is exactly
/// the plain minimizer-Jacobian gradient.
class OpfFitting {
 public:
  OpfFitting(const OpfSpec& spec, const OpfDataset& data, SensTols tols = {}, int jobs = 1,
             size_t cache_slots = 8)
      : spec_(spec), data_(data), tols_(tols), jobs_(jobs), cache_slots_(cache_slots) {}

  double cost(const Mat& W) const { return ensure(W, false).f2; }

  Mat grad(const Mat& W) const {
    const Entry& e = ensure(W, true);
    const int T = data_.t();
    Mat G = Mat::Zero(data_.p(), data_.p());
    for (int t = 0; t < T; ++t) {
      Vec resid = e.xhat.col(t) - data_.X.col(t);
      Vec v = e.jac[t].transpose() * resid;            // P
      v = data_.scn.scale.cwiseProduct(v);             // Dsigma
      G += v * data_.scn.theta.col(t).transpose();
    }
    return G / static_cast<double>(T);
  }

  /// Scenarios whose sensitivity was computed at a degenerate active set
  /// during the last gradient evaluation.
  int degenerate_count() const { return last_degenerate_; }

  const OpfSpec& spec() const { return spec_; }
  const OpfDataset& data() const { return data_; }

 private:
  struct Entry {
    Mat W;
    Mat xhat;               // (G+1) x T
    std::vector<OpfSolution> sols;
    std::vector<Mat> jac;   // per-scenario (G+1) x P
    bool jac_done = false;
    double f2 = 0.0;
    int degenerate = 0;
  };

  const Entry& ensure(const Mat& W, bool need_jac) const {
    require_shape(W.rows() == data_.p() && W.cols() == data_.p(),
                  "OpfFitting: W dimension mismatch");
    for (auto it = cache_.begin(); it != cache_.end(); ++it) {
      if (it->W.rows() == W.rows() && it->W == W) {
        if (need_jac && !it->jac_done) fill_jacobians(*it);
        // move to front
        if (it != cache_.begin()) std::rotate(cache_.begin(), it, std::next(it));
        if (need_jac) last_degenerate_ = cache_.front().degenerate;
        return cache_.front();
      }
    }

    Entry e;
    e.W = W;
    const int T = data_.t();
    const int G = spec_.g();
    Mat theta_hat(data_.p(), T);
    for (int t = 0; t < T; ++t)
      theta_hat.col(t) = denormalize_column(data_.scn, W * data_.scn.theta.col(t));
    BatchResult batch =
        solve_opf_batch(spec_, theta_hat, data_.scn.features, jobs_);
    batch.throw_if_failed();
    e.sols = std::move(batch.solutions);
    e.xhat = Mat(G + 1, T);
    double acc = 0.0;
    for (int t = 0; t < T; ++t) {
      if (e.sols[t].status != SolveStatus::optimal)
        throw NumericError("OPF fitting: scenario " + std::to_string(t) +
                           " did not reach optimality at the current iterate");
      e.xhat.col(t).head(G) = e.sols[t].qg;
      e.xhat(G, t) = e.sols[t].s;
      acc += (e.xhat.col(t) - data_.X.col(t)).squaredNorm();
    }
    e.f2 = acc / (2.0 * T);

    cache_.push_front(std::move(e));
    if (cache_.size() > cache_slots_) cache_.pop_back();
    if (need_jac) {
      fill_jacobians(cache_.front());
      last_degenerate_ = cache_.front().degenerate;
    }
    return cache_.front();
  }

  void fill_jacobians(Entry& e) const {
    const int T = data_.t();
    e.jac.resize(T);
    std::vector<int> degen(T, 0);
    Mat theta_hat(data_.p(), T);
    for (int t = 0; t < T; ++t)
      theta_hat.col(t) = denormalize_column(data_.scn, e.W * data_.scn.theta.col(t));
    const FeatureMap& features = data_.scn.features;
    detail::parallel_for(T, jobs_, [&](int t) {
      OpfTheta th = OpfTheta::from_theta(theta_hat.col(t), features, spec_);
      SensitivitySet s = minimizer_jacobian(spec_, e.sols[t], th, tols_);
      e.jac[t] = std::move(s.jacobian);
      degen[t] = s.degenerate ? 1 : 0;
    });
    e.degenerate = 0;
    for (int t = 0; t < T; ++t) e.degenerate += degen[t];
    e.jac_done = true;
  }

  const OpfSpec& spec_;
  const OpfDataset& data_;
  SensTols tols_;
  int jobs_;
  size_t cache_slots_;
  mutable std::deque<Entry> cache_;
  mutable int last_degenerate_ = 0;
};

/// OPF fitting error f2(W) = sum_t ||x_t - x(theta_hat_t)||^2 / (2T).
inline double f2_cost(const Mat& W, const OpfDataset& data, const OpfSpec& spec, int jobs = 1) {
  return OpfFitting(spec, data, {}, jobs).cost(W);
}

/// Gradient of f2: (1/T) sum_t Dsigma (dx/dtheta)' (xhat_t - x_t) theta_tilde_t'.
inline Mat grad_f2(const Mat& W, const OpfDataset& data, const OpfSpec& spec,
                   SensTols tols = {}, int jobs = 1) {
  return OpfFitting(spec, data, tols, jobs).grad(W);
}

struct Lambda2Result {
  double value = 0.0;
  bool degenerate = false;  // sensitivity at the zero-reconstruction point was degenerate
};

/// Critical-point threshold for the bilevel group lasso: the largest group
/// norm of the f2 gradient at W = 0, where every scenario reconstructs to the
/// denormalized zero (the feature means).
inline Lambda2Result lambda2_max(const OpfDataset& data, const OpfSpec& spec,
                                 const GroupStructure& gs, SensTols tols = {}, int jobs = 1) {
  OpfFitting fit(spec, data, tols, jobs);
  Mat K = fit.grad(Mat::Zero(data.p(), data.p()));
  Lambda2Result out;
  out.degenerate = fit.degenerate_count() > 0;
  for (const auto& grp : gs.groups) {
    double sq = 0.0;
    for (int j : grp) sq += K.col(j).squaredNorm();
    out.value = std::max(out.value, std::sqrt(sq));
  }
  return out;
}

/// Bilevel group lasso via the monitored nonconvex APG engine. Every cost
/// evaluation solves a batch of OPFs at the reconstructed data; gradients
/// additionally differentiate each minimizer through its KKT system.
inline DistillationMap fit_bgl(const OpfDataset& data, const OpfSpec& spec, double lambda2,
                               const GroupStructure& gs, const ApgConfig& cfg = {},
                               const std::optional<Mat>& W0 = std::nullopt, int jobs = 1,
                               ApgResult* diag = nullptr) {
  if (lambda2 < 0.0) throw ArgumentError("fit_bgl: negative lambda");
  gs.validate(data.p());
  OpfFitting fit(spec, data, {}, jobs);
  Mat Winit = W0 ? *W0 : Mat(Rng(cfg.seed).randn(data.p(), data.p()));
  CostFn smooth = [&fit](const Mat& W) { return fit.cost(W); };
  GradFn grad = [&fit](const Mat& W) { return fit.grad(W); };
  ApgResult res = apg_nonconvex(smooth, grad, lambda2, gs, cfg, Winit);
  if (diag) *diag = res;
  return detail::finalize_selection(Method::BGL, res.W, gs, lambda2);
}

namespace detail {

/// Minimizes f2 over the reconstruction C for a fixed selection, by descent
/// on the selected columns. Steps start from a Barzilai-Borwein estimate and
/// are halved until the cost decreases.
inline Mat refit_c_descent(const OpfFitting& fit, const std::vector<int>& sel, Mat C,
                           int max_iters = 200, double rel_tol = 1e-6, int backtrack_max = 40) {
  const int P = fit.data().p();
  auto to_w = [&](const Mat& Cm) {
    Mat W = Mat::Zero(P, P);
    for (size_t j = 0; j < sel.size(); ++j) W.col(sel[j]) = Cm.col(j);
    return W;
  };
  auto grad_c = [&](const Mat& W) {
    Mat Gfull = fit.grad(W);
    Mat Gc(P, sel.size());
    for (size_t j = 0; j < sel.size(); ++j) Gc.col(j) = Gfull.col(sel[j]);
    return Gc;
  };

  double h = fit.cost(to_w(C));
  Mat G = grad_c(to_w(C));
  double step = 1.0;
  Mat C_prev, G_prev;
  bool have_prev = false;
  for (int it = 0; it < max_iters; ++it) {
    if (have_prev) {
      Mat dc = C - C_prev;
      Mat dg = G - G_prev;
      double denom = dc.cwiseProduct(dg).sum();
      if (denom > 0.0) step = dc.squaredNorm() / denom;  // BB1
      step = std::min(std::max(step, 1e-12), 1e6);
    }
    double h_new = h;
    Mat C_new;
    bool moved = false;
    for (int bt = 0; bt <= backtrack_max; ++bt) {
      C_new = C - step * G;
      h_new = fit.cost(to_w(C_new));
      if (h_new <= h) {
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;
    C_prev = C;
    G_prev = G;
    have_prev = true;
    bool converged = std::abs(h - h_new) <= rel_tol * std::max(1.0, std::abs(h));
    C = C_new;
    h = h_new;
    if (converged) break;
    G = grad_c(to_w(C));
  }
  return C;
}

}  // namespace detail

/// Two-stage bilevel group lasso: BGL fixes the selection, then the
/// reconstruction is refit against the OPF minimizers alone, warm-started
/// from the BGL columns.
inline DistillationMap fit_bgl2(const OpfDataset& data, const OpfSpec& spec, double lambda2,
                                const GroupStructure& gs, const ApgConfig& cfg = {},
                                const std::optional<Mat>& W0 = std::nullopt, int jobs = 1) {
  DistillationMap stage1 = fit_bgl(data, spec, lambda2, gs, cfg, W0, jobs);
  if (stage1.selected.empty())
    throw ArgumentError("fit_bgl2: BGL stage selected no features (lambda too large)");
  OpfFitting fit(spec, data, {}, jobs);
  Mat C = detail::refit_c_descent(fit, stage1.selected, stage1.C);
  return make_map(Method::BGL2, C, stage1.selected, data.p(), gs.mode, lambda2);
}

/// BGL2 at a target K via bisection on lambda over [0, lambda2_max].
inline BisectResult fit_bgl2_k(const OpfDataset& data, const OpfSpec& spec, int k_target,
                               const GroupStructure& gs, const ApgConfig& cfg = {},
                               const std::optional<Mat>& W0 = std::nullopt, int jobs = 1,
                               int max_rounds = 30) {
  double hi = lambda2_max(data, spec, gs, {}, jobs).value;
  BisectResult r = bisect_lambda_for_k(
      [&](double lam) { return fit_bgl(data, spec, lam, gs, cfg, W0, jobs); }, gs, k_target,
      std::max(hi, 1e-12), max_rounds);
  if (!r.map.selected.empty()) {
    OpfFitting fit(spec, data, {}, jobs);
    Mat C = detail::refit_c_descent(fit, r.map.selected, r.map.C);
    r.map = make_map(Method::BGL2, C, r.map.selected, data.p(), gs.mode, r.lambda);
  }
  return r;
}

}  // namespace opfd

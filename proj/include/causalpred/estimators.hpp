#pragma once

// Estimators for both model families.
//
//  * fit_regression:      argmin_R ||X - D R||_F^2 + lambda ||R||_1
//  * fit_regression_lodo: unpenalized fit on the remaining drugs, zero row
//                         for the held-out drug
//  * fit_causal_linear:   argmin_W ||X - D B^T (-W^{-T})||_F^2
//                                  + lambda ||W - diag(W)||_1
//                         by proximal gradient with backtracking
//  * fit_causal_ode:      the same penalized loss with steady states taken
//                         from the ODE, finite-difference gradients

#include "causalpred/model.hpp"
#include "causalpred/ode.hpp"
#include "causalpred/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace causalpred {

struct FitConfig {
  double lambda = 0.0;
  int max_iter = 10000;
  double tol = 1e-8;                 ///< relative objective change, floored at 1
  std::optional<double> step_size;   ///< fixed step; empty means backtracking
  std::optional<EdgeMask> mask;
  std::optional<InteractionMatrix> w_init;

  void validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidArgument("lambda must be a finite value >= 0");
    if (max_iter < 1) throw InvalidArgument("max_iter must be positive");
    if (!(tol > 0.0)) throw InvalidArgument("tol must be positive");
    if (step_size && !(*step_size > 0.0)) throw InvalidArgument("step_size must be positive");
  }
};

struct FitReport {
  double final_objective = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> objective_trace;
  bool unique_solution = true;
  std::string diagnostic;
};

/// Raised when an unpenalized regression has no unique solution.
class RankDeficientError : public DimensionError {
 public:
  RankDeficientError(const std::string& msg, std::vector<std::string> columns)
      : DimensionError(msg), columns_(std::move(columns)) {}
  const std::vector<std::string>& columns() const { return columns_; }

 private:
  std::vector<std::string> columns_;
};

inline double soft_threshold(double v, double threshold) {
  if (v > threshold) return v - threshold;
  if (v < -threshold) return v + threshold;
  return 0.0;
}

inline double offdiag_l1(const Matrix& w) {
  return w.cwiseAbs().sum() - w.diagonal().cwiseAbs().sum();
}

/// Proximal map of threshold * ||W - diag(W)||_1; the diagonal passes through.
inline Matrix prox_offdiag(const Matrix& w, double threshold) {
  Matrix out = w;
  for (Index j = 0; j < w.cols(); ++j)
    for (Index i = 0; i < w.rows(); ++i)
      if (i != j) out(i, j) = soft_threshold(w(i, j), threshold);
  return out;
}

namespace detail {

inline void check_pair(const ConditionMatrix& d, const ResponseMatrix& x) {
  if (d.conditions() != x.conditions())
    throw DimensionError("condition matrix has " + std::to_string(d.conditions()) + " rows but response matrix has " +
                         std::to_string(x.conditions()));
}

inline bool relative_change_small(double before, double after, double tol) {
  return std::abs(before - after) <= tol * std::max(1.0, std::abs(before));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Regression
// ---------------------------------------------------------------------------

struct RegressionFit {
  RegressionCoefficients coefficients;
  FitReport report;
};

inline double regression_objective(const Matrix& d, const Matrix& x, const Matrix& r, double lambda) {
  return (x - d * r).squaredNorm() + lambda * r.cwiseAbs().sum();
}

namespace detail {

inline RegressionFit fit_regression_exact(const ConditionMatrix& d, const ResponseMatrix& x) {
  Eigen::ColPivHouseholderQR<Matrix> qr(d.values());
  if (qr.rank() < d.drugs()) {
    std::vector<std::string> deficient;
    const auto& perm = qr.colsPermutation().indices();
    for (Index k = qr.rank(); k < d.drugs(); ++k) deficient.push_back(d.drug_names()[static_cast<std::size_t>(perm(k))]);
    std::sort(deficient.begin(), deficient.end());
    std::string names;
    for (const auto& n : deficient) names += (names.empty() ? "" : ", ") + n;
    throw RankDeficientError("unpenalized regression has no unique solution: design has rank " +
                                 std::to_string(qr.rank()) + " < " + std::to_string(d.drugs()) +
                                 " (deficient drug columns: " + names + ")",
                             deficient);
  }
  Matrix r = qr.solve(x.values());
  RegressionFit fit{RegressionCoefficients(r), {}};
  fit.report.final_objective = regression_objective(d.values(), x.values(), r, 0.0);
  fit.report.objective_trace = {x.values().squaredNorm(), fit.report.final_objective};
  fit.report.iterations = 1;
  fit.report.converged = true;
  return fit;
}

/// Cyclic coordinate descent on every response column, one sweep per iteration.
inline RegressionFit fit_regression_lasso(const ConditionMatrix& d, const ResponseMatrix& x, const FitConfig& cfg) {
  const Matrix& dv = d.values();
  const Matrix& xv = x.values();
  const Matrix gram = dv.transpose() * dv;
  const Matrix cross = dv.transpose() * xv;
  const double xx = xv.squaredNorm();
  const double half_lambda = 0.5 * cfg.lambda;
  const Index q = d.drugs();
  const Index p = x.responses();

  Matrix r = Matrix::Zero(q, p);
  Matrix gr = Matrix::Zero(q, p);  // gram * r, kept in sync
  auto objective = [&] {
    return xx - 2.0 * r.cwiseProduct(cross).sum() + r.cwiseProduct(gr).sum() + cfg.lambda * r.cwiseAbs().sum();
  };

  RegressionFit fit;
  FitReport& rep = fit.report;
  double obj = objective();
  rep.objective_trace.push_back(obj);
  for (int iter = 0; iter < cfg.max_iter; ++iter) {
    for (Index c = 0; c < p; ++c) {
      for (Index j = 0; j < q; ++j) {
        const double gjj = gram(j, j);
        if (gjj <= 0.0) continue;  // unused drug stays at zero
        const double old = r(j, c);
        const double rho = cross(j, c) - gr(j, c) + gjj * old;
        const double updated = soft_threshold(rho, half_lambda) / gjj;
        if (updated != old) {
          gr.col(c) += gram.col(j) * (updated - old);
          r(j, c) = updated;
        }
      }
    }
    const double next = objective();
    rep.objective_trace.push_back(next);
    rep.iterations = iter + 1;
    const bool done = detail::relative_change_small(obj, next, cfg.tol);
    obj = next;
    if (done) {
      rep.converged = true;
      break;
    }
  }
  rep.final_objective = obj;
  if (!rep.converged) rep.diagnostic = "coordinate descent reached max_iter";
  fit.coefficients = RegressionCoefficients(r);
  return fit;
}

}  // namespace detail

/// Penalized multivariate regression of responses on doses. lambda = 0 solves
/// least squares exactly and throws RankDeficientError when D^T D is singular.
inline RegressionFit fit_regression(const ConditionMatrix& d, const ResponseMatrix& x, const FitConfig& cfg = {}) {
  cfg.validate();
  detail::check_pair(d, x);
  if (cfg.lambda == 0.0) return detail::fit_regression_exact(d, x);
  return detail::fit_regression_lasso(d, x, cfg);
}

/// Leave-one-drug-out regression: unpenalized fit on the other drugs, with the
/// held-out drug's coefficient row fixed at zero.
inline RegressionFit fit_regression_lodo(const ConditionMatrix& d, const ResponseMatrix& x, Index held_out_drug,
                                         const FitConfig& cfg = {}) {
  cfg.validate();
  detail::check_pair(d, x);
  if (held_out_drug < 0 || held_out_drug >= d.drugs())
    throw InvalidArgument("held-out drug index " + std::to_string(held_out_drug) + " out of range");
  if ((d.values().col(held_out_drug).array() != 0.0).any())
    throw InvalidArgument("split plan inconsistency: held-out drug '" +
                          d.drug_names()[static_cast<std::size_t>(held_out_drug)] + "' is used in training");

  const Index q = d.drugs();
  const Index p = x.responses();
  Matrix full = Matrix::Zero(q, p);
  RegressionFit fit;
  if (q == 1) {
    fit.report.final_objective = x.values().squaredNorm();
    fit.report.objective_trace = {fit.report.final_objective};
    fit.report.converged = true;
  } else {
    Matrix reduced(d.conditions(), q - 1);
    std::vector<std::string> names;
    for (Index j = 0, k = 0; j < q; ++j) {
      if (j == held_out_drug) continue;
      reduced.col(k++) = d.values().col(j);
      names.push_back(d.drug_names()[static_cast<std::size_t>(j)]);
    }
    FitConfig unpenalized = cfg;
    unpenalized.lambda = 0.0;
    auto sub = fit_regression(ConditionMatrix(reduced, names), x, unpenalized);
    for (Index j = 0, k = 0; j < q; ++j) {
      if (j == held_out_drug) continue;
      full.row(j) = sub.coefficients.values().row(k++);
    }
    fit.report = std::move(sub.report);
  }
  fit.coefficients = RegressionCoefficients(full);
  return fit;
}

// ---------------------------------------------------------------------------
// Linear causal model
// ---------------------------------------------------------------------------

struct CausalLossGradient {
  double loss = 0.0;
  Matrix gradient;
};

/// Smooth part of the causal objective and its gradient in W, with
/// u = D B^T precomputed. Predictions are -u W^{-T}; the gradient is
/// -2 W^{-T} E^T u W^{-T} with E = X + u W^{-T}.
inline CausalLossGradient causal_loss_and_gradient(const Matrix& w, const Matrix& u, const Matrix& x) {
  const auto lu = checked_lu(w, "W");
  const Matrix y = lu.solve(u.transpose());  // W^{-1} u^T, so u W^{-T} = y^T
  const Matrix resid = x + y.transpose();
  CausalLossGradient out;
  out.loss = resid.squaredNorm();
  out.gradient = -2.0 * lu.inverse().transpose() * (resid.transpose() * y.transpose());
  return out;
}

inline CausalLossGradient causal_loss_and_gradient(const InteractionMatrix& w, const ConditionMatrix& d,
                                                   const ResponseMatrix& x, const TargetMap& b) {
  if (w.form() != InteractionForm::W) throw InvalidArgument("causal loss expects a W-form matrix");
  detail::check_pair(d, x);
  detail::check_causal_dims(w.size(), b, d);
  if (x.responses() != w.size()) throw DimensionError("response count does not match the interaction matrix");
  return causal_loss_and_gradient(w.values(), d.values() * b.values().transpose(), x.values());
}

inline double causal_loss(const Matrix& w, const Matrix& u, const Matrix& x) {
  if (!(reciprocal_condition(w) >= kMinReciprocalCondition)) return std::numeric_limits<double>::infinity();
  Eigen::PartialPivLU<Matrix> lu(w);
  return (x + lu.solve(u.transpose()).transpose()).squaredNorm();
}

struct CausalFit {
  InteractionMatrix w;  ///< W-form
  FitReport report;
};

namespace detail {

inline Matrix initial_w(const FitConfig& cfg, Index p) {
  Matrix w = -Matrix::Identity(p, p);
  if (cfg.w_init) {
    if (cfg.w_init->form() != InteractionForm::W) throw InvalidArgument("w_init must be W-form");
    if (cfg.w_init->size() != p) throw DimensionError("w_init size does not match the response count");
    w = cfg.w_init->values();
  }
  if (cfg.mask) {
    if (cfg.mask->size() != p) throw DimensionError("edge mask size does not match the response count");
    cfg.mask->apply(w);
  }
  if (reciprocal_condition(w) < kMinReciprocalCondition) throw InvalidArgument("initial W is not invertible");
  return w;
}

}  // namespace detail

/// Proximal gradient on W for the linear causal model. Off-diagonal entries
/// are soft-thresholded, the diagonal is unpenalized, masked entries are zero
/// at every iterate. With backtracking the objective trace is nonincreasing.
inline CausalFit fit_causal_linear(const ConditionMatrix& d, const ResponseMatrix& x, const TargetMap& b,
                                   const FitConfig& cfg = {}) {
  cfg.validate();
  detail::check_pair(d, x);
  const Index p = x.responses();
  detail::check_causal_dims(p, b, d);

  const Matrix u = d.values() * b.values().transpose();
  const Matrix& xv = x.values();
  const double lambda = cfg.lambda;
  Matrix w = detail::initial_w(cfg, p);

  CausalFit fit;
  FitReport& rep = fit.report;
  if (lambda == 0.0) {
    Eigen::ColPivHouseholderQR<Matrix> qr(u);
    if (qr.rank() < p) {
      rep.unique_solution = false;
      rep.diagnostic = "D B^T has rank " + std::to_string(qr.rank()) + " < " + std::to_string(p) +
                       ": unpenalized W is not identifiable";
    }
  }

  double obj = causal_loss(w, u, xv) + lambda * offdiag_l1(w);
  rep.objective_trace.push_back(obj);
  double step = cfg.step_size.value_or(1.0);

  // One backtracked proximal-gradient step taken from `from`.
  struct Step {
    bool ok = false;
    Matrix w;
    double objective = 0.0;
  };
  auto prox_step = [&](const Matrix& from) {
    Step out;
    if (reciprocal_condition(from) < kMinReciprocalCondition) return out;
    const auto lg = causal_loss_and_gradient(from, u, xv);
    double trial = cfg.step_size ? *cfg.step_size : std::min(step * 2.0, 1e12);
    for (int halvings = 0; halvings < 200; ++halvings, trial *= 0.5) {
      Matrix next = prox_offdiag(from - trial * lg.gradient, trial * lambda);
      if (cfg.mask) cfg.mask->apply(next);
      const double f_next = causal_loss(next, u, xv);
      if (!std::isfinite(f_next)) continue;  // singular or ill-conditioned candidate
      const Matrix delta = next - from;
      const double bound = lg.loss + lg.gradient.cwiseProduct(delta).sum() + delta.squaredNorm() / (2.0 * trial);
      if (cfg.step_size || f_next <= bound + 1e-14 * std::max(1.0, std::abs(lg.loss))) {
        if (!cfg.step_size) step = trial;
        out.ok = true;
        out.w = std::move(next);
        out.objective = f_next + lambda * offdiag_l1(out.w);
        return out;
      }
    }
    return out;
  };

  // Accelerated proximal gradient with momentum restart: a step from the
  // extrapolated point is kept only if it does not increase the objective,
  // otherwise momentum is dropped and a plain step is taken from w.
  Matrix w_prev = w;
  double momentum = 1.0;
  for (int iter = 0; iter < cfg.max_iter; ++iter) {
    const double momentum_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * momentum * momentum));
    const Matrix extrapolated = w + ((momentum - 1.0) / momentum_next) * (w - w_prev);
    Step s = prox_step(extrapolated);
    if (s.ok && s.objective <= obj) {
      momentum = momentum_next;
    } else {
      momentum = 1.0;
      s = prox_step(w);
      if (cfg.step_size && s.ok && s.objective > obj) s.ok = false;
    }
    if (!s.ok) {
      rep.diagnostic = "no feasible step: every candidate was ill-conditioned or failed sufficient decrease";
      break;
    }
    w_prev = w;
    w = std::move(s.w);
    const double obj_next = s.objective;
    rep.objective_trace.push_back(obj_next);
    rep.iterations = iter + 1;
    const bool done = detail::relative_change_small(obj, obj_next, cfg.tol);
    obj = obj_next;
    if (done) {
      rep.converged = true;
      break;
    }
  }
  rep.final_objective = obj;
  if (!rep.converged && rep.diagnostic.empty()) rep.diagnostic = "reached max_iter";
  fit.w = InteractionMatrix(w, InteractionForm::W);
  return fit;
}

// ---------------------------------------------------------------------------
// ODE causal model
// ---------------------------------------------------------------------------

struct OdeFitOptions {
  bool fit_epsilon = true;
  double fd_step = 1e-5;
  SteadyStateOptions steady{1e-10, 200.0, 0.05};
};

struct OdeFit {
  OdeModel model;
  FitReport report;
};

namespace detail {

/// Sum of squared steady-state errors; +inf when any condition fails to settle.
/// warm holds one start state per condition and is updated when update_warm.
inline double ode_loss(const OdeModel& model, const Matrix& d, const Matrix& x, const SteadyStateOptions& opt,
                       Matrix& warm, bool update_warm) {
  double total = 0.0;
  Matrix states(warm.rows(), warm.cols());
  for (Index k = 0; k < d.rows(); ++k) {
    SteadyStateResult ss;
    try {
      ss = steady_state(model, d.row(k).transpose(), warm.row(k).transpose(), opt);
    } catch (const DivergenceError&) {
      return std::numeric_limits<double>::infinity();
    }
    if (!ss.converged) return std::numeric_limits<double>::infinity();
    total += (x.row(k).transpose() - ss.state).squaredNorm();
    states.row(k) = ss.state.transpose();
  }
  if (update_warm) warm = states;
  return total;
}

}  // namespace detail

/// Fits W (and optionally epsilon, through log epsilon) of the ODE model by
/// proximal gradient descent with central finite-difference gradients of the
/// steady-state loss. Candidates whose steady state does not settle are
/// rejected and the step is halved.
inline OdeFit fit_causal_ode(const ConditionMatrix& d, const ResponseMatrix& x, const TargetMap& b,
                             const OdeModel& model_template, const FitConfig& cfg = {},
                             const OdeFitOptions& opt = {}) {
  cfg.validate();
  detail::check_pair(d, x);
  const Index p = x.responses();
  detail::check_causal_dims(p, b, d);
  if (model_template.size() != p) throw DimensionError("model template size does not match the response count");
  if (!(opt.fd_step > 0.0)) throw InvalidArgument("finite-difference step must be positive");

  OdeModel model(cfg.w_init ? *cfg.w_init : model_template.w, model_template.epsilon, model_template.envelope, b);
  {
    Matrix w0 = model.w.values();
    if (cfg.mask) {
      if (cfg.mask->size() != p) throw DimensionError("edge mask size does not match the response count");
      cfg.mask->apply(w0);
    }
    model.w = InteractionMatrix(w0, InteractionForm::W);
  }
  const Matrix& dv = d.values();
  const Matrix& xv = x.values();
  const double lambda = cfg.lambda;

  Matrix warm = Matrix::Zero(d.conditions(), p);
  OdeFit fit;
  FitReport& rep = fit.report;
  double smooth = detail::ode_loss(model, dv, xv, opt.steady, warm, true);
  if (!std::isfinite(smooth))
    throw ConvergenceError("initial ODE model does not reach a steady state for every condition");
  double obj = smooth + lambda * offdiag_l1(model.w.values());
  rep.objective_trace.push_back(obj);

  auto free_entry = [&](Index i, Index j) { return !cfg.mask || cfg.mask->allowed()(i, j); };
  auto with_params = [&](const Matrix& w, const Vector& log_eps) {
    OdeModel m = model;
    m.w = InteractionMatrix(w, InteractionForm::W);
    m.epsilon = log_eps.array().exp().matrix();
    return m;
  };

  double step = cfg.step_size.value_or(1.0);
  const double h = opt.fd_step;
  for (int iter = 0; iter < cfg.max_iter; ++iter) {
    const Matrix w = model.w.values();
    const Vector log_eps = model.epsilon.array().log().matrix();

    Matrix grad_w = Matrix::Zero(p, p);
    Vector grad_e = Vector::Zero(p);
    Matrix scratch = warm;
    auto central = [&](const OdeModel& plus, const OdeModel& minus, double& out) {
      const double lp = detail::ode_loss(plus, dv, xv, opt.steady, scratch, false);
      const double lm = detail::ode_loss(minus, dv, xv, opt.steady, scratch, false);
      if (!std::isfinite(lp) || !std::isfinite(lm)) return false;
      out = (lp - lm) / (2.0 * h);
      return true;
    };
    bool probes_ok = true;
    for (Index j = 0; j < p && probes_ok; ++j) {
      for (Index i = 0; i < p && probes_ok; ++i) {
        if (!free_entry(i, j)) continue;
        Matrix wp = w, wm = w;
        wp(i, j) += h;
        wm(i, j) -= h;
        probes_ok = central(with_params(wp, log_eps), with_params(wm, log_eps), grad_w(i, j));
      }
    }
    for (Index i = 0; opt.fit_epsilon && i < p && probes_ok; ++i) {
      Vector ep = log_eps, em = log_eps;
      ep(i) += h;
      em(i) -= h;
      probes_ok = central(with_params(w, ep), with_params(w, em), grad_e(i));
    }
    if (!probes_ok) {
      rep.diagnostic = "finite-difference probe left the stable region";
      break;
    }

    {
      double trial = cfg.step_size ? *cfg.step_size : std::min(step * 2.0, 1e12);
      bool accepted = false;
      Matrix w_next;
      Vector e_next;
      double s_next = 0.0;
      Matrix warm_next = warm;
      for (int halvings = 0; halvings < 60; ++halvings, trial *= 0.5) {
        w_next = prox_offdiag(w - trial * grad_w, trial * lambda);
        if (cfg.mask) cfg.mask->apply(w_next);
        e_next = log_eps - trial * grad_e;
        warm_next = warm;
        s_next = detail::ode_loss(with_params(w_next, e_next), dv, xv, opt.steady, warm_next, true);
        if (!std::isfinite(s_next)) continue;
        if (cfg.step_size) {
          accepted = true;
          break;
        }
        const double delta_sq = (w_next - w).squaredNorm() + (e_next - log_eps).squaredNorm();
        const double lin = grad_w.cwiseProduct(w_next - w).sum() + grad_e.dot(e_next - log_eps);
        if (s_next <= smooth + lin + delta_sq / (2.0 * trial) + 1e-12 * std::max(1.0, smooth)) {
          accepted = true;
          break;
        }
      }
      if (!accepted) {
        rep.diagnostic = "no acceptable step: candidates failed to settle or to decrease the objective";
        break;
      }
      if (!cfg.step_size) step = trial;
      model = with_params(w_next, e_next);
      warm = warm_next;
      smooth = s_next;
      const double obj_next = smooth + lambda * offdiag_l1(w_next);
      rep.objective_trace.push_back(obj_next);
      rep.iterations = iter + 1;
      const bool done = detail::relative_change_small(obj, obj_next, cfg.tol);
      obj = obj_next;
      if (done) {
        rep.converged = true;
        break;
      }
    }
  }
  rep.final_objective = obj;
  if (!rep.converged && rep.diagnostic.empty()) rep.diagnostic = "reached max_iter";
  fit.model = model;
  return fit;
}

// ---------------------------------------------------------------------------
// Penalty selection
// ---------------------------------------------------------------------------

inline std::vector<double> default_lambda_grid() { return {1e-3, 1e-2, 1e-1, 1.0, 10.0}; }

/// Picks lambda for fit_causal_linear by k-fold cross-validated squared error.
/// Ties go to the first grid entry.
inline double select_lambda_cv(const ConditionMatrix& d, const ResponseMatrix& x, const TargetMap& b,
                               const std::vector<double>& grid, int folds, std::uint64_t seed,
                               const FitConfig& base = {}) {
  detail::check_pair(d, x);
  if (grid.empty()) throw InvalidArgument("lambda grid is empty");
  const Index n = d.conditions();
  if (folds < 2 || folds > n) throw InvalidArgument("fold count must be in [2, n]");

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::seed_seq seq{seed, std::uint64_t{0x1a3bda}};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);

  double best_lambda = grid.front();
  double best_err = std::numeric_limits<double>::infinity();
  for (double lambda : grid) {
    FitConfig cfg = base;
    cfg.lambda = lambda;
    double err = 0.0;
    for (int f = 0; f < folds && std::isfinite(err); ++f) {
      std::vector<Index> train, test;
      for (Index i = 0; i < n; ++i) (i % folds == f ? test : train).push_back(order[static_cast<std::size_t>(i)]);
      std::sort(train.begin(), train.end());
      std::sort(test.begin(), test.end());
      try {
        const auto fitted = fit_causal_linear(select_rows(d, train), select_rows(x, train), b, cfg);
        const auto pred = predict_causal_linear(fitted.w, b, select_rows(d, test));
        err += (select_rows(x.values(), test) - pred.predicted).squaredNorm();
      } catch (const Error&) {
        err = std::numeric_limits<double>::infinity();
      }
    }
    if (err < best_err) {
      best_err = err;
      best_lambda = lambda;
    }
  }
  return best_lambda;
}

}  // namespace causalpred

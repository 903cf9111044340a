#pragma once

// Train/test split plans and the two evaluation protocols: repeated random
// folds with prediction averaging, and leave-one-drug-out.

#include "causalpred/estimators.hpp"
#include "causalpred/model.hpp"
#include "causalpred/ode.hpp"
#include "causalpred/types.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

namespace causalpred {

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

class MetricError : public Error {
 public:
  using Error::Error;
};

/// Sample Pearson correlation. Throws MetricError on zero variance.
inline double pearson(const Vector& x, const Vector& y) {
  if (x.size() != y.size()) throw DimensionError("pearson: vectors differ in length");
  if (x.size() < 2) throw MetricError("pearson: need at least two points");
  const Vector xc = x.array() - x.mean();
  const Vector yc = y.array() - y.mean();
  const double sxx = xc.squaredNorm();
  const double syy = yc.squaredNorm();
  if (!(sxx > 0.0) || !(syy > 0.0)) throw MetricError("pearson: zero variance, correlation undefined");
  return std::clamp(xc.dot(yc) / std::sqrt(sxx * syy), -1.0, 1.0);
}

inline double mae(const Vector& x, const Vector& y) {
  if (x.size() != y.size()) throw DimensionError("mae: vectors differ in length");
  if (x.size() < 1) throw MetricError("mae: empty input");
  return (x - y).cwiseAbs().mean();
}

inline Vector flatten(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

// ---------------------------------------------------------------------------
// Split plans
// ---------------------------------------------------------------------------

struct Split {
  std::vector<Index> train;
  std::vector<Index> test;
};

enum class SplitKind { random_fold, lodo };

struct SplitPlan {
  SplitKind kind = SplitKind::random_fold;
  Index n = 0;
  double train_fraction = 0.0;  ///< random_fold only
  int repetitions = 0;          ///< random_fold only
  std::uint64_t seed = 0;       ///< random_fold only
  Index held_out_drug = -1;     ///< lodo only
  std::string held_out_name;    ///< lodo only
  std::vector<Split> splits;

  /// Partition soundness; for LODO also checks dose usage against D.
  void validate(const ConditionMatrix* d = nullptr) const {
    for (const auto& s : splits) {
      std::vector<char> seen(static_cast<std::size_t>(n), 0);
      for (Index i : s.train) {
        if (i < 0 || i >= n || seen[static_cast<std::size_t>(i)]++) throw InvalidArgument("split: bad train index");
      }
      for (Index i : s.test) {
        if (i < 0 || i >= n || seen[static_cast<std::size_t>(i)]++) throw InvalidArgument("split: train/test overlap");
      }
      if (static_cast<Index>(s.train.size() + s.test.size()) != n) throw InvalidArgument("split: rows not covered");
      if (kind == SplitKind::lodo && d != nullptr) {
        const auto col = d->values().col(held_out_drug);
        for (Index i : s.train)
          if (col(i) != 0.0) throw InvalidArgument("split: LODO training row uses the held-out drug");
        for (Index i : s.test)
          if (col(i) == 0.0) throw InvalidArgument("split: LODO test row does not use the held-out drug");
      }
    }
  }
};

inline Index random_fold_train_size(Index n, double train_fraction) {
  return static_cast<Index>(std::floor(static_cast<double>(n) * train_fraction + 1e-9));
}

/// reps independent random partitions with floor(n * fraction) training rows.
inline SplitPlan make_random_folds(Index n, double train_fraction, int reps, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw InvalidArgument("train fraction must be in (0, 1)");
  if (reps < 1) throw InvalidArgument("repetitions must be >= 1");
  const Index n_train = random_fold_train_size(n, train_fraction);
  if (n_train < 1 || n_train >= n)
    throw InvalidArgument("degenerate split: " + std::to_string(n_train) + " training rows out of " + std::to_string(n));

  SplitPlan plan;
  plan.kind = SplitKind::random_fold;
  plan.n = n;
  plan.train_fraction = train_fraction;
  plan.repetitions = reps;
  plan.seed = seed;
  std::seed_seq seq{seed};
  std::mt19937_64 rng(seq);
  std::vector<Index> order(static_cast<std::size_t>(n));
  plan.splits.reserve(static_cast<std::size_t>(reps));
  for (int r = 0; r < reps; ++r) {
    std::iota(order.begin(), order.end(), Index{0});
    std::shuffle(order.begin(), order.end(), rng);
    Split s;
    s.train.assign(order.begin(), order.begin() + n_train);
    s.test.assign(order.begin() + n_train, order.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.test.begin(), s.test.end());
    plan.splits.push_back(std::move(s));
  }
  return plan;
}

/// One plan per drug: test rows are the conditions where that drug has a
/// nonzero dose, training rows are the rest.
inline std::vector<SplitPlan> make_lodo_splits(const ConditionMatrix& d) {
  std::vector<SplitPlan> plans;
  for (Index j = 0; j < d.drugs(); ++j) {
    SplitPlan plan;
    plan.kind = SplitKind::lodo;
    plan.n = d.conditions();
    plan.held_out_drug = j;
    plan.held_out_name = d.drug_names()[static_cast<std::size_t>(j)];
    Split s;
    for (Index i = 0; i < d.conditions(); ++i) (d.values()(i, j) != 0.0 ? s.test : s.train).push_back(i);
    if (s.test.empty()) throw InvalidArgument("drug '" + plan.held_out_name + "' is never used; no LODO test set");
    if (s.train.empty()) throw InvalidArgument("drug '" + plan.held_out_name + "' is used in every condition");
    plan.splits.push_back(std::move(s));
    plans.push_back(std::move(plan));
  }
  return plans;
}

// ---------------------------------------------------------------------------
// Model families
// ---------------------------------------------------------------------------

struct Dataset {
  ConditionMatrix d;
  ResponseMatrix x;
  std::optional<TargetMap> b;
};

struct FoldContext {
  std::optional<Index> held_out_drug;
};

/// Fits on a training subset and predicts responses for test conditions.
using FitPredict = std::function<Matrix(const Dataset& train, const ConditionMatrix& test, const FoldContext&)>;

enum class ModelFamily { regression, causal_linear, causal_ode };

inline ModelFamily parse_model_family(const std::string& name) {
  if (name == "regression") return ModelFamily::regression;
  if (name == "causal-linear" || name == "causal_linear") return ModelFamily::causal_linear;
  if (name == "causal-ode" || name == "causal_ode") return ModelFamily::causal_ode;
  throw ParseError("unknown model '" + name + "' (expected regression, causal-linear or causal-ode)");
}

struct FamilyOptions {
  FitConfig fit;
  std::optional<OdeModel> ode_template;  ///< envelope and epsilon start for causal-ode
  OdeFitOptions ode;
};

/// Regression honours the zero-coefficient convention when a drug is held out.
inline FitPredict make_fit_predict(ModelFamily family, FamilyOptions opts = {}) {
  switch (family) {
    case ModelFamily::regression:
      return [opts](const Dataset& train, const ConditionMatrix& test, const FoldContext& ctx) {
        const auto fit = ctx.held_out_drug ? fit_regression_lodo(train.d, train.x, *ctx.held_out_drug, opts.fit)
                                           : fit_regression(train.d, train.x, opts.fit);
        return predict_regression(fit.coefficients, test).predicted;
      };
    case ModelFamily::causal_linear:
      return [opts](const Dataset& train, const ConditionMatrix& test, const FoldContext&) {
        if (!train.b) throw InvalidArgument("causal-linear model needs a target map");
        const auto fit = fit_causal_linear(train.d, train.x, *train.b, opts.fit);
        return predict_causal_linear(fit.w, *train.b, test).predicted;
      };
    case ModelFamily::causal_ode:
      return [opts](const Dataset& train, const ConditionMatrix& test, const FoldContext&) {
        if (!train.b) throw InvalidArgument("causal-ode model needs a target map");
        const Index p = train.x.responses();
        OdeModel tmpl = opts.ode_template
                            ? *opts.ode_template
                            : OdeModel(InteractionMatrix(-Matrix::Identity(p, p), InteractionForm::W),
                                       Vector::Ones(p), Envelope{}, *train.b);
        const auto fit = fit_causal_ode(train.d, train.x, *train.b, tmpl, opts.fit, opts.ode);
        return predict_causal_ode(fit.model, test, opts.ode.steady).predicted;
      };
  }
  throw InvalidArgument("unknown model family");
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct ScatterPoint {
  Index condition = 0;
  Index response = 0;
  double observed = 0.0;
  double predicted = 0.0;
};

struct FoldMetric {
  std::string label;
  std::optional<double> pearson_r;
  double mae = 0.0;
  Index n_points = 0;
};

struct MetricReport {
  std::optional<double> pearson_r;  ///< empty when the correlation is undefined
  double mae = 0.0;
  Index n_points = 0;
  std::string status = "ok";
  std::string pooling = "all (condition, response) pairs";
  std::vector<FoldMetric> folds;
  std::vector<std::optional<double>> per_response_r;
  std::vector<Index> dropped_conditions;
  std::vector<ScatterPoint> points;
};

namespace detail {

inline MetricReport score_points(std::vector<ScatterPoint> points, Index p) {
  MetricReport rep;
  Vector obs(static_cast<Index>(points.size())), pred(static_cast<Index>(points.size()));
  for (std::size_t i = 0; i < points.size(); ++i) {
    obs(static_cast<Index>(i)) = points[i].observed;
    pred(static_cast<Index>(i)) = points[i].predicted;
  }
  rep.n_points = obs.size();
  if (rep.n_points == 0) {
    rep.status = "no test points";
    return rep;
  }
  rep.mae = mae(obs, pred);
  try {
    rep.pearson_r = pearson(obs, pred);
  } catch (const MetricError& e) {
    rep.status = e.what();
  }
  rep.per_response_r.assign(static_cast<std::size_t>(p), std::nullopt);
  for (Index j = 0; j < p; ++j) {
    std::vector<double> o, q;
    for (const auto& pt : points)
      if (pt.response == j) {
        o.push_back(pt.observed);
        q.push_back(pt.predicted);
      }
    try {
      rep.per_response_r[static_cast<std::size_t>(j)] =
          pearson(Eigen::Map<Vector>(o.data(), static_cast<Index>(o.size())),
                  Eigen::Map<Vector>(q.data(), static_cast<Index>(q.size())));
    } catch (const Error&) {
    }
  }
  rep.points = std::move(points);
  return rep;
}

/// Runs body(i) for i in [0, count) on up to jobs threads.
template <class Body>
void parallel_for(int count, int jobs, Body&& body) {
  jobs = std::max(1, std::min(jobs, count));
  if (jobs == 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (int t = 0; t < jobs; ++t) {
    pool.emplace_back([&] {
      for (int i = next++; i < count; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = count;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

inline Dataset subset(const Dataset& data, const std::vector<Index>& rows) {
  return {select_rows(data.d, rows), select_rows(data.x, rows), data.b};
}

}  // namespace detail

/// Sum and count of test-set predictions per (condition, response).
struct PredictionAccumulator {
  Matrix sum;
  Eigen::VectorXi count;

  PredictionAccumulator(Index n, Index p) : sum(Matrix::Zero(n, p)), count(Eigen::VectorXi::Zero(n)) {}

  void add(const std::vector<Index>& rows, const Matrix& predicted) {
    for (std::size_t r = 0; r < rows.size(); ++r) {
      sum.row(rows[r]) += predicted.row(static_cast<Index>(r));
      ++count(rows[r]);
    }
  }
};

/// Fits every repetition, averages each condition's test predictions across
/// the repetitions where it was held out, and scores the averages against the
/// observations pooled over all (condition, response) pairs.
inline MetricReport averaged_random_fold_eval(const FitPredict& model, const Dataset& data, const SplitPlan& plan,
                                              int jobs = 1) {
  if (plan.kind != SplitKind::random_fold) throw InvalidArgument("averaged_random_fold_eval needs a random-fold plan");
  if (plan.n != data.d.conditions()) throw DimensionError("split plan size does not match the data");
  detail::check_pair(data.d, data.x);
  const Index n = data.d.conditions();
  const Index p = data.x.responses();
  const int reps = static_cast<int>(plan.splits.size());

  std::vector<Matrix> predictions(static_cast<std::size_t>(reps));
  std::vector<FoldMetric> folds(static_cast<std::size_t>(reps));
  detail::parallel_for(reps, jobs, [&](int r) {
    const Split& s = plan.splits[static_cast<std::size_t>(r)];
    Matrix pred = model(detail::subset(data, s.train), select_rows(data.d, s.test), FoldContext{});
    FoldMetric fm;
    fm.label = "rep" + std::to_string(r + 1);
    const Vector obs = flatten(select_rows(data.x.values(), s.test));
    fm.n_points = obs.size();
    fm.mae = mae(obs, flatten(pred));
    try {
      fm.pearson_r = pearson(obs, flatten(pred));
    } catch (const MetricError&) {
    }
    folds[static_cast<std::size_t>(r)] = std::move(fm);
    predictions[static_cast<std::size_t>(r)] = std::move(pred);
  });
  // Summing in repetition order makes the result independent of the thread count.
  PredictionAccumulator total(n, p);
  for (int r = 0; r < reps; ++r)
    total.add(plan.splits[static_cast<std::size_t>(r)].test, predictions[static_cast<std::size_t>(r)]);

  std::vector<ScatterPoint> points;
  std::vector<Index> dropped;
  for (Index i = 0; i < n; ++i) {
    if (total.count(i) == 0) {
      dropped.push_back(i);
      continue;
    }
    for (Index j = 0; j < p; ++j) points.push_back({i, j, data.x.values()(i, j), total.sum(i, j) / total.count(i)});
  }
  if (!dropped.empty())
    std::cerr << "warning: " << dropped.size() << " condition(s) never landed in a test set and were excluded\n";
  MetricReport rep = detail::score_points(std::move(points), p);
  rep.folds = std::move(folds);
  rep.dropped_conditions = std::move(dropped);
  return rep;
}

struct LodoReport {
  std::vector<MetricReport> per_drug;  ///< one per plan, label = held-out drug
  std::optional<double> mean_r;        ///< unweighted mean over defined correlations
  double mean_mae = 0.0;
};

/// One fit per held-out drug; per-drug Pearson r over that drug's test points.
inline LodoReport lodo_eval(const FitPredict& model, const Dataset& data, const std::vector<SplitPlan>& plans,
                            int jobs = 1) {
  detail::check_pair(data.d, data.x);
  const Index p = data.x.responses();
  LodoReport out;
  out.per_drug.resize(plans.size());
  detail::parallel_for(static_cast<int>(plans.size()), jobs, [&](int k) {
    const SplitPlan& plan = plans[static_cast<std::size_t>(k)];
    if (plan.kind != SplitKind::lodo || plan.splits.size() != 1) throw InvalidArgument("lodo_eval needs LODO plans");
    plan.validate(&data.d);
    const Split& s = plan.splits.front();
    const Matrix pred =
        model(detail::subset(data, s.train), select_rows(data.d, s.test), FoldContext{plan.held_out_drug});
    std::vector<ScatterPoint> points;
    for (std::size_t r = 0; r < s.test.size(); ++r)
      for (Index j = 0; j < p; ++j)
        points.push_back({s.test[r], j, data.x.values()(s.test[r], j), pred(static_cast<Index>(r), j)});
    MetricReport rep = detail::score_points(std::move(points), p);
    rep.folds.push_back({plan.held_out_name, rep.pearson_r, rep.mae, rep.n_points});
    out.per_drug[static_cast<std::size_t>(k)] = std::move(rep);
  });
  double sum_r = 0.0, sum_mae = 0.0;
  int defined = 0;
  for (const auto& rep : out.per_drug) {
    sum_mae += rep.mae;
    if (rep.pearson_r) {
      sum_r += *rep.pearson_r;
      ++defined;
    }
  }
  if (defined > 0) out.mean_r = sum_r / defined;
  if (!out.per_drug.empty()) out.mean_mae = sum_mae / static_cast<double>(out.per_drug.size());
  return out;
}

}  // namespace causalpred

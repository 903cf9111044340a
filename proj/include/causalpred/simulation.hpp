#pragma once

// Five-response, fifteen-drug simulation: every pair of drugs applied once,
// five single-target drugs at strength 1, ten double-target drugs at 1/2 per
// target, and the DAG X1 -> X2 (1.6), X1 -> X3 (1.2), X3 -> X4 (2).

#include "causalpred/estimators.hpp"
#include "causalpred/model.hpp"
#include "causalpred/types.hpp"
#include "causalpred/validation.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace causalpred::sim {

inline constexpr Index kResponses = 5;
inline constexpr Index kDrugs = 15;
inline constexpr Index kConditions = kDrugs * (kDrugs - 1) / 2;  // 105
inline constexpr double kDisplayThreshold = 0.2;

struct SimSpec {
  double noise_sd = 0.2;
  std::uint64_t seed = 0;
};

enum class ScenarioKind { random_fold, random_fold_misspecified_b, lodo };

struct Scenario {
  ScenarioKind kind = ScenarioKind::random_fold;
  Index held_out_drug = 0;  ///< 0-based, LODO only
};

inline const char* to_string(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::random_fold: return "RF";
    case ScenarioKind::random_fold_misspecified_b: return "RF-misspecified-B";
    case ScenarioKind::lodo: return "LODO";
  }
  return "unknown";
}

inline std::vector<std::string> drug_names() { return detail::numbered("D", kDrugs); }
inline std::vector<std::string> response_names() { return detail::numbered("X", kResponses); }

/// All unordered drug pairs in lexicographic order, one row each.
inline ConditionMatrix build_design() {
  Matrix d = Matrix::Zero(kConditions, kDrugs);
  Index row = 0;
  for (Index a = 0; a < kDrugs; ++a)
    for (Index b = a + 1; b < kDrugs; ++b, ++row) {
      d(row, a) = 1.0;
      d(row, b) = 1.0;
    }
  return ConditionMatrix(d, drug_names());
}

/// Columns 1-5 hit one response each; columns 6-15 hit each response pair
/// (lexicographic) at 0.5, or at 1.0 when misspecified.
inline TargetMap build_targets(bool misspecified = false) {
  Matrix b = Matrix::Zero(kResponses, kDrugs);
  for (Index i = 0; i < kResponses; ++i) b(i, i) = 1.0;
  const double strength = misspecified ? 1.0 : 0.5;
  Index col = kResponses;
  for (Index a = 0; a < kResponses; ++a)
    for (Index c = a + 1; c < kResponses; ++c, ++col) {
      b(a, col) = strength;
      b(c, col) = strength;
    }
  return TargetMap(b);
}

inline InteractionMatrix build_dag() {
  Matrix a = Matrix::Zero(kResponses, kResponses);
  a(1, 0) = 1.6;
  a(2, 0) = 1.2;
  a(3, 2) = 2.0;
  return {a, InteractionForm::A};
}

inline bool is_true_edge(Index i, Index j) { return (i == 1 && j == 0) || (i == 2 && j == 0) || (i == 3 && j == 2); }

namespace streams {
inline constexpr std::uint64_t noise = 0;
inline constexpr std::uint64_t split = 1;
}  // namespace streams

inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{seed, stream};
  return std::mt19937_64(seq);
}

/// Noise-free responses: row k is ((I - A)^{-1} B d_k)^T.
inline Matrix noiseless_responses() {
  return predict_causal_dag(build_dag(), build_targets(false), build_design()).predicted;
}

/// Noise-free responses plus i.i.d. N(0, noise_sd^2), filled row by row.
inline ResponseMatrix simulate_responses(const SimSpec& spec) {
  if (!(spec.noise_sd >= 0.0)) throw InvalidArgument("noise_sd must be >= 0");
  Matrix x = noiseless_responses();
  if (spec.noise_sd > 0.0) {
    auto rng = make_rng(spec.seed, streams::noise);
    std::normal_distribution<double> noise(0.0, spec.noise_sd);
    for (Index i = 0; i < x.rows(); ++i)
      for (Index j = 0; j < x.cols(); ++j) x(i, j) += noise(rng);
  }
  return ResponseMatrix(x, response_names());
}

/// floor(2n/3) training rows drawn without replacement; RF and RF with
/// misspecified B share this split for a given seed.
inline Split random_fold_split(std::uint64_t seed) {
  auto rng = make_rng(seed, streams::split);
  std::vector<Index> order(static_cast<std::size_t>(kConditions));
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  const Index n_train = 2 * kConditions / 3;
  Split s;
  s.train.assign(order.begin(), order.begin() + n_train);
  s.test.assign(order.begin() + n_train, order.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

struct ScenarioReport {
  Scenario scenario;
  Split split;
  Matrix observed;              ///< test rows x p
  Matrix regression_predicted;  ///< test rows x p
  Matrix causal_predicted;      ///< test rows x p
  double regression_r = 0.0;
  double causal_r = 0.0;
  InteractionMatrix fitted_dag;  ///< A-form
  FitReport causal_report;
};

/// Fits both estimators with lambda = 0 on the scenario's training rows and
/// scores them on its test rows.
inline ScenarioReport run_scenario(const Scenario& scenario, const SimSpec& spec, const FitConfig& cfg = {}) {
  const ConditionMatrix d = build_design();
  const ResponseMatrix x = simulate_responses(spec);
  const TargetMap b = build_targets(scenario.kind == ScenarioKind::random_fold_misspecified_b);

  ScenarioReport rep;
  rep.scenario = scenario;
  std::optional<Index> held_out;
  if (scenario.kind == ScenarioKind::lodo) {
    if (scenario.held_out_drug < 0 || scenario.held_out_drug >= kDrugs)
      throw InvalidArgument("LODO drug index out of range");
    held_out = scenario.held_out_drug;
    rep.split = make_lodo_splits(d)[static_cast<std::size_t>(scenario.held_out_drug)].splits.front();
  } else {
    rep.split = random_fold_split(spec.seed);
  }

  FitConfig unpenalized = cfg;
  unpenalized.lambda = 0.0;
  const ConditionMatrix d_train = select_rows(d, rep.split.train);
  const ResponseMatrix x_train = select_rows(x, rep.split.train);
  const ConditionMatrix d_test = select_rows(d, rep.split.test);
  rep.observed = select_rows(x.values(), rep.split.test);

  const auto reg = held_out ? fit_regression_lodo(d_train, x_train, *held_out, unpenalized)
                            : fit_regression(d_train, x_train, unpenalized);
  rep.regression_predicted = predict_regression(reg.coefficients, d_test).predicted;

  const auto causal = fit_causal_linear(d_train, x_train, b, unpenalized);
  rep.causal_predicted = predict_causal_linear(causal.w, b, d_test).predicted;
  rep.causal_report = causal.report;
  rep.fitted_dag = w_to_dag(causal.w);

  rep.regression_r = pearson(flatten(rep.observed), flatten(rep.regression_predicted));
  rep.causal_r = pearson(flatten(rep.observed), flatten(rep.causal_predicted));
  return rep;
}

struct LodoSummary {
  std::vector<ScenarioReport> folds;
  double regression_mean_r = 0.0;
  double causal_mean_r = 0.0;
};

/// Every drug held out in turn.
inline LodoSummary run_lodo_all(const SimSpec& spec, const FitConfig& cfg = {}) {
  LodoSummary out;
  for (Index j = 0; j < kDrugs; ++j) {
    out.folds.push_back(run_scenario({ScenarioKind::lodo, j}, spec, cfg));
    out.regression_mean_r += out.folds.back().regression_r;
    out.causal_mean_r += out.folds.back().causal_r;
  }
  out.regression_mean_r /= static_cast<double>(kDrugs);
  out.causal_mean_r /= static_cast<double>(kDrugs);
  return out;
}

struct NetworkRecovery {
  bool edges_within_tolerance = false;  ///< true edges within +-0.15 of truth
  bool non_edges_below_threshold = false;
  int spurious_edges = 0;  ///< non-edge entries with |a| >= display threshold
  double max_edge_error = 0.0;
  double max_non_edge = 0.0;
};

/// Compares a fitted A-form against the true DAG. Non-edges include the diagonal.
inline NetworkRecovery assess_network(const InteractionMatrix& fitted, double edge_tol = 0.15,
                                      double threshold = kDisplayThreshold) {
  if (fitted.form() != InteractionForm::A || fitted.size() != kResponses)
    throw InvalidArgument("assess_network expects a 5x5 A-form matrix");
  const Matrix& a = fitted.values();
  const Matrix truth = build_dag().values();
  NetworkRecovery out;
  for (Index i = 0; i < kResponses; ++i)
    for (Index j = 0; j < kResponses; ++j) {
      if (is_true_edge(i, j)) {
        out.max_edge_error = std::max(out.max_edge_error, std::abs(a(i, j) - truth(i, j)));
      } else {
        out.max_non_edge = std::max(out.max_non_edge, std::abs(a(i, j)));
        if (std::abs(a(i, j)) >= threshold) ++out.spurious_edges;
      }
    }
  out.edges_within_tolerance = out.max_edge_error <= edge_tol;
  out.non_edges_below_threshold = out.max_non_edge < threshold;
  return out;
}

}  // namespace causalpred::sim

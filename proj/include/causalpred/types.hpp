#pragma once

// Domain types shared by every module: condition/response/target matrices,
// interaction matrices in W- or A-form, regression coefficients, edge masks,
// and the error hierarchy used across the library.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace causalpred {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;
using Index = Eigen::Index;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible matrix shapes or inconsistent data layout.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file or configuration.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// A matrix that must be inverted is singular or too ill-conditioned.
class SingularMatrixError : public Error {
 public:
  using Error::Error;
};

/// An invariant on a value was violated (negative dose, duplicate label, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// An iterative procedure diverged or could not make progress.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw InvalidArgument(std::string(what) + " contains non-finite entries");
}

inline void require_unique(const std::vector<std::string>& names, const char* what) {
  std::unordered_set<std::string> seen;
  for (const auto& n : names) {
    if (!seen.insert(n).second) throw InvalidArgument(std::string("duplicate ") + what + " '" + n + "'");
  }
}

inline std::vector<std::string> numbered(const std::string& prefix, Index count) {
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) out.push_back(prefix + std::to_string(i + 1));
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Data matrices
// ---------------------------------------------------------------------------

/// n x q nonnegative drug doses, one row per experimental condition.
class ConditionMatrix {
 public:
  ConditionMatrix() = default;

  explicit ConditionMatrix(Matrix values, std::vector<std::string> drug_names = {})
      : values_(std::move(values)), drug_names_(std::move(drug_names)) {
    if (values_.rows() < 1 || values_.cols() < 1)
      throw DimensionError("condition matrix must be at least 1x1, got " + detail::shape(values_));
    detail::require_finite(values_, "condition matrix");
    if ((values_.array() < 0.0).any()) throw InvalidArgument("condition matrix has negative doses");
    if (drug_names_.empty()) drug_names_ = detail::numbered("D", values_.cols());
    if (static_cast<Index>(drug_names_.size()) != values_.cols())
      throw DimensionError("condition matrix has " + std::to_string(values_.cols()) + " columns but " +
                           std::to_string(drug_names_.size()) + " drug names");
    detail::require_unique(drug_names_, "drug name");
  }

  const Matrix& values() const { return values_; }
  const std::vector<std::string>& drug_names() const { return drug_names_; }
  Index conditions() const { return values_.rows(); }
  Index drugs() const { return values_.cols(); }

 private:
  Matrix values_;
  std::vector<std::string> drug_names_;
};

/// n x p measured log-normalized changes of proteins and phenotypes.
class ResponseMatrix {
 public:
  ResponseMatrix() = default;

  explicit ResponseMatrix(Matrix values, std::vector<std::string> response_names = {})
      : values_(std::move(values)), response_names_(std::move(response_names)) {
    if (values_.rows() < 1 || values_.cols() < 1)
      throw DimensionError("response matrix must be at least 1x1, got " + detail::shape(values_));
    detail::require_finite(values_, "response matrix");
    if (response_names_.empty()) response_names_ = detail::numbered("X", values_.cols());
    if (static_cast<Index>(response_names_.size()) != values_.cols())
      throw DimensionError("response matrix has " + std::to_string(values_.cols()) + " columns but " +
                           std::to_string(response_names_.size()) + " response names");
    detail::require_unique(response_names_, "response name");
  }

  const Matrix& values() const { return values_; }
  const std::vector<std::string>& response_names() const { return response_names_; }
  Index conditions() const { return values_.rows(); }
  Index responses() const { return values_.cols(); }

 private:
  Matrix values_;
  std::vector<std::string> response_names_;
};

/// p x q direct drug effects; entry (i, j) is the effect of one unit of drug j on response i.
class TargetMap {
 public:
  TargetMap() = default;

  explicit TargetMap(Matrix values) : values_(std::move(values)) {
    if (values_.rows() < 1 || values_.cols() < 1)
      throw DimensionError("target map must be at least 1x1, got " + detail::shape(values_));
    detail::require_finite(values_, "target map");
  }

  const Matrix& values() const { return values_; }
  Index responses() const { return values_.rows(); }
  Index drugs() const { return values_.cols(); }

 private:
  Matrix values_;
};

enum class InteractionForm {
  W,  ///< ODE interaction matrix; diagonal holds decay rates.
  A,  ///< structural-equation matrix; A(i, j) is the effect of x_j on x_i.
};

/// p x p causal interaction parameters, tagged with their parameterization.
class InteractionMatrix {
 public:
  InteractionMatrix() = default;

  InteractionMatrix(Matrix values, InteractionForm form) : values_(std::move(values)), form_(form) {
    if (values_.rows() != values_.cols() || values_.rows() < 1)
      throw DimensionError("interaction matrix must be square, got " + detail::shape(values_));
    detail::require_finite(values_, "interaction matrix");
  }

  const Matrix& values() const { return values_; }
  InteractionForm form() const { return form_; }
  Index size() const { return values_.rows(); }

 private:
  Matrix values_;
  InteractionForm form_ = InteractionForm::W;
};

/// q x p coefficients; entry (i, j) is the total effect of drug i on response j.
class RegressionCoefficients {
 public:
  RegressionCoefficients() = default;

  explicit RegressionCoefficients(Matrix values) : values_(std::move(values)) {
    detail::require_finite(values_, "regression coefficients");
  }

  const Matrix& values() const { return values_; }
  Index drugs() const { return values_.rows(); }
  Index responses() const { return values_.cols(); }

 private:
  Matrix values_;
};

/// p x p mask over W; false entries are pinned to zero during fitting.
class EdgeMask {
 public:
  EdgeMask() = default;

  explicit EdgeMask(BoolMatrix allowed) : allowed_(std::move(allowed)) {
    if (allowed_.rows() != allowed_.cols())
      throw DimensionError("edge mask must be square, got " + std::to_string(allowed_.rows()) + "x" +
                           std::to_string(allowed_.cols()));
    for (Index i = 0; i < allowed_.rows(); ++i) {
      if (!allowed_(i, i)) throw InvalidArgument("edge mask must allow every diagonal entry");
    }
  }

  static EdgeMask all(Index p) { return EdgeMask(BoolMatrix::Constant(p, p, true)); }

  const BoolMatrix& allowed() const { return allowed_; }
  Index size() const { return allowed_.rows(); }

  void apply(Matrix& w) const {
    for (Index j = 0; j < w.cols(); ++j)
      for (Index i = 0; i < w.rows(); ++i)
        if (!allowed_(i, j)) w(i, j) = 0.0;
  }

 private:
  BoolMatrix allowed_;
};

enum class ModelTag { regression, causal_linear, causal_ode };

inline const char* to_string(ModelTag tag) {
  switch (tag) {
    case ModelTag::regression: return "regression";
    case ModelTag::causal_linear: return "causal-linear";
    case ModelTag::causal_ode: return "causal-ode";
  }
  return "unknown";
}

struct PredictionResult {
  Matrix predicted;  ///< n x p
  ModelTag model_tag = ModelTag::regression;
};

// ---------------------------------------------------------------------------
// Row selection helpers
// ---------------------------------------------------------------------------

inline Matrix select_rows(const Matrix& m, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = m.row(rows[r]);
  return out;
}

inline ConditionMatrix select_rows(const ConditionMatrix& d, const std::vector<Index>& rows) {
  return ConditionMatrix(select_rows(d.values(), rows), d.drug_names());
}

inline ResponseMatrix select_rows(const ResponseMatrix& x, const std::vector<Index>& rows) {
  return ResponseMatrix(select_rows(x.values(), rows), x.response_names());
}

}  // namespace causalpred

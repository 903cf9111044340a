#pragma once

// Forward prediction for the regression and linear causal models, W <-> A
// conversion, and the matrix exponential used to check the steady-state
// limit of the augmented drug + response system.

#include "causalpred/types.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

namespace causalpred {

/// Reject matrices whose reciprocal condition number falls below this.
inline constexpr double kMinReciprocalCondition = 1e-10;

/// LU factorization that refuses singular or ill-conditioned input.
inline Eigen::PartialPivLU<Matrix> checked_lu(const Matrix& m, const char* what) {
  Eigen::PartialPivLU<Matrix> lu(m);
  // The rcond estimator can miss an exactly zero pivot.
  const bool zero_pivot = !(lu.matrixLU().diagonal().array().abs() > 0.0).all();
  const double rc = zero_pivot ? 0.0 : lu.rcond();
  if (!(rc >= kMinReciprocalCondition)) {
    throw SingularMatrixError(std::string(what) + " is singular or ill-conditioned (rcond = " +
                              std::to_string(rc) + ")");
  }
  return lu;
}

inline double reciprocal_condition(const Matrix& m) {
  Eigen::PartialPivLU<Matrix> lu(m);
  if (!(lu.matrixLU().diagonal().array().abs() > 0.0).all()) return 0.0;
  const double rc = lu.rcond();
  return std::isfinite(rc) ? rc : 0.0;
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

/// Row k of the result is d_k^T R.
inline PredictionResult predict_regression(const RegressionCoefficients& r, const ConditionMatrix& d) {
  if (r.drugs() != d.drugs())
    throw DimensionError("coefficients cover " + std::to_string(r.drugs()) + " drugs but conditions have " +
                         std::to_string(d.drugs()));
  return {d.values() * r.values(), ModelTag::regression};
}

namespace detail {

inline void check_causal_dims(Index p, const TargetMap& b, const ConditionMatrix& d) {
  if (b.responses() != p)
    throw DimensionError("target map has " + std::to_string(b.responses()) + " rows but the interaction matrix is " +
                         std::to_string(p) + "x" + std::to_string(p));
  if (b.drugs() != d.drugs())
    throw DimensionError("target map has " + std::to_string(b.drugs()) + " drug columns but conditions have " +
                         std::to_string(d.drugs()));
}

}  // namespace detail

/// Total drug-to-response effect of the linear model, -W^{-1} B (p x q).
inline Matrix causal_total_effect(const InteractionMatrix& w, const TargetMap& b) {
  if (w.form() != InteractionForm::W) throw InvalidArgument("expected a W-form interaction matrix");
  if (b.responses() != w.size()) throw DimensionError("target map rows do not match interaction matrix size");
  return -checked_lu(w.values(), "W").solve(b.values());
}

/// Steady state of dx/dt = Wx + Bd, i.e. each row is (-W^{-1} B d_k)^T.
inline PredictionResult predict_causal_linear(const InteractionMatrix& w, const TargetMap& b,
                                              const ConditionMatrix& d) {
  if (w.form() != InteractionForm::W) throw InvalidArgument("predict_causal_linear expects a W-form matrix");
  detail::check_causal_dims(w.size(), b, d);
  const Matrix total = -checked_lu(w.values(), "W").solve(b.values());
  return {d.values() * total.transpose(), ModelTag::causal_linear};
}

/// Solution of x = Ax + Bd, i.e. each row is ((I - A)^{-1} B d_k)^T.
/// Cycles and self loops are accepted as long as I - A is invertible.
inline PredictionResult predict_causal_dag(const InteractionMatrix& a, const TargetMap& b, const ConditionMatrix& d) {
  if (a.form() != InteractionForm::A) throw InvalidArgument("predict_causal_dag expects an A-form matrix");
  detail::check_causal_dims(a.size(), b, d);
  const Matrix i_minus_a = Matrix::Identity(a.size(), a.size()) - a.values();
  const Matrix total = checked_lu(i_minus_a, "I - A").solve(b.values());
  return {d.values() * total.transpose(), ModelTag::causal_linear};
}

// ---------------------------------------------------------------------------
// Parameterization
// ---------------------------------------------------------------------------

/// W = A - I. Both forms index entry (i, j) as the effect of x_j on x_i.
inline InteractionMatrix dag_to_w(const InteractionMatrix& a) {
  if (a.form() != InteractionForm::A) throw InvalidArgument("dag_to_w expects an A-form matrix");
  return {a.values() - Matrix::Identity(a.size(), a.size()), InteractionForm::W};
}

inline InteractionMatrix w_to_dag(const InteractionMatrix& w) {
  if (w.form() != InteractionForm::W) throw InvalidArgument("w_to_dag expects a W-form matrix");
  return {w.values() + Matrix::Identity(w.size(), w.size()), InteractionForm::A};
}

/// Zero diagonal and no directed cycle among the off-diagonal support.
inline bool is_acyclic(const InteractionMatrix& a) {
  const Index p = a.size();
  const Matrix& v = a.values();
  for (Index i = 0; i < p; ++i)
    if (v(i, i) != 0.0) return false;
  // Kahn's algorithm over edges j -> i for v(i, j) != 0.
  std::vector<int> indegree(static_cast<std::size_t>(p), 0);
  for (Index i = 0; i < p; ++i)
    for (Index j = 0; j < p; ++j)
      if (i != j && v(i, j) != 0.0) ++indegree[static_cast<std::size_t>(i)];
  std::vector<Index> ready;
  for (Index i = 0; i < p; ++i)
    if (indegree[static_cast<std::size_t>(i)] == 0) ready.push_back(i);
  Index visited = 0;
  while (!ready.empty()) {
    const Index j = ready.back();
    ready.pop_back();
    ++visited;
    for (Index i = 0; i < p; ++i) {
      if (i != j && v(i, j) != 0.0 && --indegree[static_cast<std::size_t>(i)] == 0) ready.push_back(i);
    }
  }
  return visited == p;
}

// ---------------------------------------------------------------------------
// Matrix exponential
// ---------------------------------------------------------------------------

/// e^{Mt} by scaling and squaring around a degree-13 Pade approximant.
inline Matrix matrix_exponential(const Matrix& m, double t = 1.0) {
  if (m.rows() != m.cols()) throw DimensionError("matrix exponential needs a square matrix, got " + detail::shape(m));
  detail::require_finite(m, "matrix exponential input");
  const Index n = m.rows();
  if (n == 0) return m;

  static constexpr std::array<double, 14> b = {
      64764752532480000.0, 32382376266240000.0, 7771770303897600.0, 1187353796428800.0, 129060195264000.0,
      10559470521600.0,    670442572800.0,      33522128640.0,      1323241920.0,      40840800.0,
      960960.0,            16380.0,             182.0,              1.0};
  static constexpr double theta13 = 5.371920351148152;

  Matrix a = m * t;
  const double norm1 = a.cwiseAbs().colwise().sum().maxCoeff();
  int squarings = 0;
  if (norm1 > theta13) {
    squarings = std::max(0, static_cast<int>(std::ceil(std::log2(norm1 / theta13))));
    a /= std::ldexp(1.0, squarings);
  }

  const Matrix id = Matrix::Identity(n, n);
  const Matrix a2 = a * a;
  const Matrix a4 = a2 * a2;
  const Matrix a6 = a4 * a2;
  const Matrix u_inner = a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2) + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * id;
  const Matrix u = a * u_inner;
  const Matrix v = a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * id;

  Matrix r = (v - u).partialPivLu().solve(v + u);
  for (int k = 0; k < squarings; ++k) r = r * r;
  return r;
}

// ---------------------------------------------------------------------------
// Steady-state limit of the augmented system
// ---------------------------------------------------------------------------

/// Generator of y' = [0 0; B W] y with y = (d, x).
inline Matrix augmented_generator(const Matrix& w, const Matrix& b) {
  const Index p = w.rows();
  const Index q = b.cols();
  Matrix g = Matrix::Zero(q + p, q + p);
  g.bottomLeftCorner(p, q) = b;
  g.bottomRightCorner(p, p) = w;
  return g;
}

/// Limit of e^{Gt} as t -> infinity when W is stable: [I 0; -W^{-1}B 0].
inline Matrix augmented_limit(const Matrix& w, const Matrix& b) {
  const Index p = w.rows();
  const Index q = b.cols();
  Matrix lim = Matrix::Zero(q + p, q + p);
  lim.topLeftCorner(q, q).setIdentity();
  lim.bottomLeftCorner(p, q) = -checked_lu(w, "W").solve(b);
  return lim;
}

inline bool is_symmetric_negative_definite(const Matrix& w) {
  if (w.rows() != w.cols()) return false;
  const double scale = std::max(1.0, w.cwiseAbs().maxCoeff());
  if ((w - w.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) return false;
  Eigen::LLT<Matrix> llt(-w);
  return llt.info() == Eigen::Success;
}

/// Frobenius distance between e^{Gt} and its t -> infinity limit, where
/// G = [0 0; B W]. Requires W symmetric negative definite.
inline double verify_steady_state_limit(const InteractionMatrix& w, const TargetMap& b, double t) {
  if (w.form() != InteractionForm::W) throw InvalidArgument("verify_steady_state_limit expects a W-form matrix");
  if (b.responses() != w.size()) throw DimensionError("target map rows do not match interaction matrix size");
  if (!is_symmetric_negative_definite(w.values()))
    throw InvalidArgument("W must be symmetric negative definite for the steady-state limit check");
  const Matrix e = matrix_exponential(augmented_generator(w.values(), b.values()), t);
  return (e - augmented_limit(w.values(), b.values())).norm();
}

}  // namespace causalpred

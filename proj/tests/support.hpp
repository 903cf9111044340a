#pragma once

#include "causalpred/causalpred.hpp"

#include <random>

namespace causalpred::testing {

inline std::mt19937_64 rng_for(std::uint64_t seed) {
  std::seed_seq seq{seed, std::uint64_t{0x7e57}};
  return std::mt19937_64(seq);
}

inline Matrix gaussian(Index rows, Index cols, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = n(rng);
  return m;
}

inline Matrix uniform(Index rows, Index cols, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = u(rng);
  return m;
}

/// Random off-diagonal couplings shifted so every eigenvalue has real part <= -0.5.
inline Matrix stable_w(Index p, std::mt19937_64& rng) {
  Matrix s = gaussian(p, p, rng, 0.6);
  const double spread = Eigen::JacobiSVD<Matrix>(s).singularValues()(0);
  return s - (spread + 0.5) * Matrix::Identity(p, p);
}

/// Symmetric negative definite with eigenvalues in [-(|M|^2 + 0.5), -0.5].
inline Matrix symmetric_negative_definite(Index p, std::mt19937_64& rng) {
  const Matrix m = gaussian(p, p, rng, 0.7);
  return -(m * m.transpose() + 0.5 * Matrix::Identity(p, p));
}

inline InteractionMatrix w_form(Matrix m) { return {std::move(m), InteractionForm::W}; }
inline InteractionMatrix a_form(Matrix m) { return {std::move(m), InteractionForm::A}; }

inline Matrix sim_dag_values() { return sim::build_dag().values(); }

}  // namespace causalpred::testing

#pragma once

// Fixed-step RK4 integration of the perturbation ODE
//
//   dx_i/dt = eps_i * phi( sum_{j != i} w_ij x_j + u_i ) + w_ii x_i,   u = B d,
//
// with the self term kept outside the envelope phi. With phi = identity and
// eps = 1 this is dx/dt = Wx + Bd, whose equilibrium is -W^{-1} B d.

#include "causalpred/model.hpp"
#include "causalpred/types.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

namespace causalpred {

enum class EnvelopeKind { identity, clipped_linear, sigmoid };

struct Envelope {
  EnvelopeKind kind = EnvelopeKind::identity;
  double bound = 10.0;  ///< clip level for clipped_linear

  double operator()(double v) const {
    switch (kind) {
      case EnvelopeKind::identity: return v;
      case EnvelopeKind::clipped_linear: return std::clamp(v, -bound, bound);
      case EnvelopeKind::sigmoid: return std::tanh(v);
    }
    return v;
  }
};

inline const char* to_string(EnvelopeKind kind) {
  switch (kind) {
    case EnvelopeKind::identity: return "identity";
    case EnvelopeKind::clipped_linear: return "clipped-linear";
    case EnvelopeKind::sigmoid: return "sigmoid";
  }
  return "unknown";
}

inline EnvelopeKind parse_envelope(const std::string& name) {
  if (name == "identity") return EnvelopeKind::identity;
  if (name == "clipped-linear" || name == "clipped_linear") return EnvelopeKind::clipped_linear;
  if (name == "sigmoid") return EnvelopeKind::sigmoid;
  throw ParseError("unknown envelope '" + name + "' (expected identity, clipped-linear or sigmoid)");
}

struct OdeModel {
  InteractionMatrix w;  ///< W-form
  Vector epsilon;       ///< p positive saturation scales
  Envelope envelope;
  TargetMap b;

  OdeModel() = default;
  OdeModel(InteractionMatrix w_, Vector eps, Envelope env, TargetMap b_)
      : w(std::move(w_)), epsilon(std::move(eps)), envelope(env), b(std::move(b_)) {
    validate();
  }

  Index size() const { return w.size(); }

  void validate() const {
    if (w.form() != InteractionForm::W) throw InvalidArgument("ODE model needs a W-form interaction matrix");
    if (epsilon.size() != w.size()) throw DimensionError("epsilon length does not match W");
    if (!(epsilon.array() > 0.0).all() || !epsilon.allFinite())
      throw InvalidArgument("epsilon entries must be positive and finite");
    if (envelope.kind == EnvelopeKind::clipped_linear && !(envelope.bound > 0.0))
      throw InvalidArgument("clipped-linear envelope bound must be positive");
    if (b.responses() != w.size()) throw DimensionError("target map rows do not match W");
  }

  /// Time derivative at state x given direct effects u = B d.
  Vector derivative(const Vector& x, const Vector& u) const {
    const Matrix& wv = w.values();
    Vector inner = wv * x + u;
    Vector dx(x.size());
    for (Index i = 0; i < x.size(); ++i) {
      const double self = wv(i, i) * x(i);
      dx(i) = epsilon(i) * envelope(inner(i) - self) + self;
    }
    return dx;
  }
};

struct Trajectory {
  Vector times;   ///< m, strictly increasing
  Matrix states;  ///< m x p
};

class DivergenceError : public ConvergenceError {
 public:
  DivergenceError(const std::string& msg, double time) : ConvergenceError(msg), time_(time) {}
  double time() const { return time_; }

 private:
  double time_;
};

namespace detail {

inline Vector rk4_step(const OdeModel& model, const Vector& x, const Vector& u, double h, const Vector& k1) {
  const Vector k2 = model.derivative(x + 0.5 * h * k1, u);
  const Vector k3 = model.derivative(x + 0.5 * h * k2, u);
  const Vector k4 = model.derivative(x + h * k3, u);
  return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

inline Vector direct_effect(const OdeModel& model, const Vector& d) {
  if (d.size() != model.b.drugs())
    throw DimensionError("dose vector has " + std::to_string(d.size()) + " entries but the target map has " +
                         std::to_string(model.b.drugs()) + " drugs");
  return model.b.values() * d;
}

[[noreturn]] inline void diverged(double t) {
  std::ostringstream os;
  os << "ODE state became non-finite at t = " << t;
  throw DivergenceError(os.str(), t);
}

}  // namespace detail

/// Integrates from x0 over [0, t_end] with about t_end/dt equal RK4 steps.
inline Trajectory integrate(const OdeModel& model, const Vector& d, const Vector& x0, double t_end, double dt = 0.01) {
  if (!(dt > 0.0) || !(t_end > 0.0)) throw InvalidArgument("integrate needs dt > 0 and t_end > 0");
  if (x0.size() != model.size()) throw DimensionError("initial state length does not match the model");
  const Vector u = detail::direct_effect(model, d);
  const auto steps = static_cast<Index>(std::max(1.0, std::round(t_end / dt)));
  const double h = t_end / static_cast<double>(steps);

  Trajectory traj;
  traj.times.resize(steps + 1);
  traj.states.resize(steps + 1, model.size());
  traj.times(0) = 0.0;
  traj.states.row(0) = x0.transpose();
  Vector x = x0;
  for (Index s = 1; s <= steps; ++s) {
    x = detail::rk4_step(model, x, u, h, model.derivative(x, u));
    const double t = static_cast<double>(s) * h;
    if (!x.allFinite()) detail::diverged(t);
    traj.times(s) = t;
    traj.states.row(s) = x.transpose();
  }
  return traj;
}

inline Trajectory integrate(const OdeModel& model, const Vector& d, double t_end, double dt = 0.01) {
  return integrate(model, d, Vector::Zero(model.size()), t_end, dt);
}

struct SteadyStateResult {
  Vector state;
  bool converged = false;
  double time = 0.0;      ///< integration time consumed
  double residual = 0.0;  ///< max-norm of dx/dt at the returned state
};

struct SteadyStateOptions {
  double tol = 1e-8;
  double t_max = 200.0;
  double dt = 0.01;
};

/// Integrates until the max-norm of dx/dt drops below tol or t_max is reached.
/// Non-convergence is reported in the result, not thrown.
inline SteadyStateResult steady_state(const OdeModel& model, const Vector& d, const Vector& x0,
                                      const SteadyStateOptions& opt = {}) {
  if (!(opt.tol > 0.0)) throw InvalidArgument("steady_state tolerance must be positive");
  if (!(opt.dt > 0.0)) throw InvalidArgument("steady_state step must be positive");
  if (x0.size() != model.size()) throw DimensionError("initial state length does not match the model");
  const Vector u = detail::direct_effect(model, d);

  SteadyStateResult res;
  Vector x = x0;
  double t = 0.0;
  for (;;) {
    const Vector k1 = model.derivative(x, u);
    res.residual = k1.cwiseAbs().maxCoeff();
    if (res.residual < opt.tol) {
      res.converged = true;
      break;
    }
    if (t >= opt.t_max) break;
    x = detail::rk4_step(model, x, u, opt.dt, k1);
    t += opt.dt;
    if (!x.allFinite()) detail::diverged(t);
  }
  res.state = std::move(x);
  res.time = t;
  return res;
}

inline SteadyStateResult steady_state(const OdeModel& model, const Vector& d, const SteadyStateOptions& opt = {}) {
  return steady_state(model, d, Vector::Zero(model.size()), opt);
}

/// Steady states for every row of D. Throws ConvergenceError when any row
/// fails to settle.
inline PredictionResult predict_causal_ode(const OdeModel& model, const ConditionMatrix& d,
                                           const SteadyStateOptions& opt = {}) {
  if (d.drugs() != model.b.drugs()) throw DimensionError("conditions and target map disagree on drug count");
  Matrix out(d.conditions(), model.size());
  for (Index k = 0; k < d.conditions(); ++k) {
    const auto ss = steady_state(model, d.values().row(k).transpose(), opt);
    if (!ss.converged)
      throw ConvergenceError("steady state not reached for condition " + std::to_string(k + 1) + " within t_max");
    out.row(k) = ss.state.transpose();
  }
  return {out, ModelTag::causal_ode};
}

}  // namespace causalpred

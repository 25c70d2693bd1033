#pragma once

// Generic Hamiltonian / Langevin updates over flat parameter vectors.
// A gradient is any callable VectorX<Scalar>(const VectorX<Scalar>&); an
// energy is any callable Scalar(const VectorX<Scalar>&).

#include "drophmc/errors.hpp"
#include "drophmc/model.hpp"
#include "drophmc/rng.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <utility>

namespace drophmc {

/// Diagonal positive-definite mass matrix M.
template <typename Scalar>
class DiagonalMass {
 public:
  explicit DiagonalMass(VectorX<Scalar> diagonal) : diagonal_(std::move(diagonal)) {
    if (diagonal_.size() == 0 || !(diagonal_.array() > 0).all() || !diagonal_.allFinite()) {
      throw DimensionError("mass entries must be positive and finite");
    }
    inverse_ = diagonal_.cwiseInverse();
  }
  static DiagonalMass identity(Index size) { return DiagonalMass(VectorX<Scalar>::Ones(size)); }
  static DiagonalMass uniform(Index size, Scalar value) {
    return DiagonalMass(VectorX<Scalar>::Constant(size, value));
  }

  Index size() const { return diagonal_.size(); }
  const VectorX<Scalar>& diagonal() const { return diagonal_; }
  const VectorX<Scalar>& inverse() const { return inverse_; }

  // K(r) = r^T M^-1 r / 2
  Scalar kinetic(const VectorX<Scalar>& momentum) const {
    return Scalar(0.5) * momentum.cwiseAbs2().dot(inverse_);
  }

  // r ~ N(0, M)
  template <typename Generator>
  VectorX<Scalar> sample_momentum(Generator& gen) const {
    VectorX<Scalar> r(diagonal_.size());
    fill_normal(r, Scalar(1), gen);
    return r.cwiseProduct(diagonal_.cwiseSqrt());
  }

 private:
  VectorX<Scalar> diagonal_;
  VectorX<Scalar> inverse_;
};

template <typename Scalar>
struct PhaseState {
  VectorX<Scalar> position;
  VectorX<Scalar> momentum;
};

namespace detail {

template <typename Scalar>
void require_finite(const VectorX<Scalar>& v, const char* what) {
  if (!v.allFinite()) throw NonFiniteError(std::string(what) + " became non-finite");
}

}  // namespace detail

/// `steps` leapfrog updates: half kick, drift by eps * M^-1 r, half kick.
/// Consecutive half kicks are fused, so each step costs one gradient.
template <typename Scalar, typename Gradient>
PhaseState<Scalar> leapfrog(PhaseState<Scalar> state, Scalar eps, int steps, Gradient&& grad,
                            const DiagonalMass<Scalar>& mass) {
  if (!(eps > 0)) throw DimensionError("leapfrog step size must be positive");
  if (steps < 1) throw DimensionError("leapfrog needs at least one step");
  if (state.position.size() != state.momentum.size() || state.position.size() != mass.size()) {
    throw DimensionError("position, momentum and mass sizes differ");
  }
  const Scalar half = eps / 2;
  state.momentum -= half * grad(state.position);
  for (int i = 0; i < steps; ++i) {
    state.position += eps * state.momentum.cwiseProduct(mass.inverse());
    const VectorX<Scalar> g = grad(state.position);
    state.momentum -= (i + 1 == steps ? half : eps) * g;
    detail::require_finite(state.position, "leapfrog position");
    detail::require_finite(state.momentum, "leapfrog momentum");
  }
  return state;
}

struct HmcTransition {
  bool accepted = false;
  double delta_h = 0.0;  // H(proposal) - H(current)
  double accept_prob = 0.0;
};

/// One Metropolis-corrected HMC transition on `position` (updated in place
/// on acceptance). A non-finite trajectory or energy counts as a rejection.
template <typename Scalar, typename Energy, typename Gradient, typename Generator>
HmcTransition hmc_transition(VectorX<Scalar>& position, Energy&& energy, Gradient&& grad,
                             Scalar eps, int steps, const DiagonalMass<Scalar>& mass,
                             Generator& gen) {
  PhaseState<Scalar> start{position, mass.sample_momentum(gen)};
  const Scalar h0 = energy(start.position) + mass.kinetic(start.momentum);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(gen);

  HmcTransition out;
  try {
    PhaseState<Scalar> end = leapfrog(start, eps, steps, grad, mass);
    const Scalar h1 = energy(end.position) + mass.kinetic(end.momentum);
    out.delta_h = static_cast<double>(h1 - h0);
    if (!std::isfinite(out.delta_h)) return HmcTransition{false, out.delta_h, 0.0};
    out.accept_prob = out.delta_h <= 0 ? 1.0 : std::exp(-out.delta_h);
    out.accepted = u < out.accept_prob;
    if (out.accepted) position = std::move(end.position);
  } catch (const NonFiniteError&) {
    out = HmcTransition{false, std::numeric_limits<double>::infinity(), 0.0};
  }
  return out;
}

/// theta' = theta - (eps/2) grad U(theta) + N(0, eps I)
template <typename Scalar, typename Gradient, typename Generator>
void langevin_update(VectorX<Scalar>& position, Gradient&& grad, Scalar eps, Generator& gen) {
  if (!(eps > 0)) throw DimensionError("SGLD step size must be positive");
  const VectorX<Scalar> g = grad(position);
  VectorX<Scalar> noise(position.size());
  fill_normal(noise, std::sqrt(eps), gen);
  position += noise - (eps / 2) * g;
  detail::require_finite(position, "SGLD position");
}

/// Position first, then velocity with the gradient at the new position:
///   theta' = theta + nu
///   nu'    = (1 - friction) nu - eps grad U(theta') + N(0, 2 (friction - noise_discount) eps)
template <typename Scalar, typename Gradient, typename Generator>
void sghmc_update(VectorX<Scalar>& position, VectorX<Scalar>& velocity, Gradient&& grad,
                  Scalar eps, Scalar friction, Scalar noise_discount, Generator& gen) {
  if (position.size() != velocity.size()) throw DimensionError("velocity shape mismatch");
  const Scalar noise_var = 2 * (friction - noise_discount) * eps;
  if (!(noise_var >= 0)) throw DimensionError("SGHMC noise variance 2(friction - beta) eps is negative");
  position += velocity;
  detail::require_finite(position, "SGHMC position");
  velocity = (1 - friction) * velocity - eps * grad(position);
  if (noise_var > 0) {
    VectorX<Scalar> noise(position.size());
    fill_normal(noise, std::sqrt(noise_var), gen);
    velocity += noise;
  }
  detail::require_finite(velocity, "SGHMC velocity");
}

}  // namespace drophmc

#include "drophmc/diagnostics.hpp"

#include "drophmc/errors.hpp"
#include "drophmc/rng.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

namespace drophmc {

namespace {

using Eigen::VectorXd;

double hamiltonian(const SmoothTarget& target, const PhaseState<double>& s) {
  return target.energy(s.position) + 0.5 * s.momentum.squaredNorm();
}

PhaseState<double> euler_step(const SmoothTarget& target, PhaseState<double> s, double eps) {
  const VectorXd g = target.gradient(s.position);
  s.position += eps * s.momentum;
  s.momentum -= eps * g;
  return s;
}

PhaseState<double> one_step(const SmoothTarget& target, const PhaseState<double>& s, double eps,
                            Integrator integrator) {
  if (integrator == Integrator::euler) return euler_step(target, s, eps);
  return leapfrog(s, eps, 1, target.gradient, DiagonalMass<double>::identity(target.dimension));
}

void check_start(const SmoothTarget& target, const PhaseState<double>& s) {
  if (s.position.size() != target.dimension || s.momentum.size() != target.dimension) {
    throw DimensionError("phase state does not match target dimension");
  }
}

}  // namespace

SmoothTarget quadratic_target(const Eigen::VectorXd& precision) {
  SmoothTarget t;
  t.name = "quadratic";
  t.dimension = precision.size();
  t.energy = [precision](const VectorXd& q) { return 0.5 * q.cwiseAbs2().dot(precision); };
  t.gradient = [precision](const VectorXd& q) -> VectorXd { return q.cwiseProduct(precision); };
  return t;
}

SmoothTarget gaussian_target(const Eigen::MatrixXd& covariance) {
  const Eigen::MatrixXd prec = covariance.inverse();
  SmoothTarget t;
  t.name = "gaussian";
  t.dimension = covariance.rows();
  t.energy = [prec](const VectorXd& q) { return 0.5 * q.dot(prec * q); };
  t.gradient = [prec](const VectorXd& q) -> VectorXd { return prec * q; };
  return t;
}

SmoothTarget free_particle(Index dimension) {
  SmoothTarget t;
  t.name = "free";
  t.dimension = dimension;
  t.energy = [](const VectorXd&) { return 0.0; };
  t.gradient = [dimension](const VectorXd&) -> VectorXd { return VectorXd::Zero(dimension); };
  return t;
}

SmoothTarget softmax_target(Batch<double> batch, Index classes, PriorConfig<double> prior,
                            std::optional<DropMask<double>> frozen_mask) {
  const Index features = batch.features.cols();
  SmoothTarget t;
  t.name = frozen_mask ? "masked-softmax" : "softmax";
  t.masked = frozen_mask.has_value();
  t.dimension = classes * features + classes;
  auto shared = std::make_shared<std::pair<Batch<double>, std::optional<DropMask<double>>>>(
      std::move(batch), std::move(frozen_mask));
  t.energy = [shared, classes, features, prior](const VectorXd& q) {
    const auto* mask = shared->second ? &*shared->second : nullptr;
    return stochastic_energy(Theta<double>::from_flat(classes, features, q), shared->first, prior, mask);
  };
  t.gradient = [shared, classes, features, prior](const VectorXd& q) -> VectorXd {
    const auto* mask = shared->second ? &*shared->second : nullptr;
    return grad_stochastic_energy(Theta<double>::from_flat(classes, features, q), shared->first,
                                  prior, mask)
        .flat();
  };
  return t;
}

Batch<double> toy_batch(Index examples, Index classes, Index features, std::uint64_t seed) {
  Rng rng(seed);
  Batch<double> b;
  b.features.resize(examples, features);
  fill_normal(b.features, 1.0, rng);
  b.labels.resize(examples);
  for (Index i = 0; i < examples; ++i) b.labels(i) = static_cast<int>(i % classes);
  b.dataset_size = examples;
  return b;
}

double check_reversibility(const SmoothTarget& target, const PhaseState<double>& start,
                           double eps, int steps) {
  check_start(target, start);
  const auto mass = DiagonalMass<double>::identity(target.dimension);
  PhaseState<double> s = leapfrog(start, eps, steps, target.gradient, mass);
  s.momentum = -s.momentum;
  s = leapfrog(std::move(s), eps, steps, target.gradient, mass);
  s.momentum = -s.momentum;
  return std::max((s.position - start.position).lpNorm<Eigen::Infinity>(),
                  (s.momentum - start.momentum).lpNorm<Eigen::Infinity>());
}

double check_volume(const SmoothTarget& target, const PhaseState<double>& state, double eps,
                    Integrator integrator) {
  check_start(target, state);
  if (target.dimension > kMaxVolumeDimension) {
    throw DimensionError("volume check supports at most " + std::to_string(kMaxVolumeDimension) +
                         " position dimensions");
  }
  const Index d = target.dimension;
  auto flow = [&](const VectorXd& z) {
    const PhaseState<double> s{z.head(d), z.tail(d)};
    const PhaseState<double> e = one_step(target, s, eps, integrator);
    VectorXd out(2 * d);
    out << e.position, e.momentum;
    return out;
  };
  VectorXd z(2 * d);
  z << state.position, state.momentum;
  Eigen::MatrixXd jac(2 * d, 2 * d);
  for (Index j = 0; j < 2 * d; ++j) {
    VectorXd up = z;
    VectorXd down = z;
    up(j) += kJacobianStep;
    down(j) -= kJacobianStep;
    jac.col(j) = (flow(up) - flow(down)) / (2 * kJacobianStep);
  }
  return jac.fullPivLu().determinant();
}

double check_energy_drift(const SmoothTarget& target, const PhaseState<double>& start, double eps,
                          int steps) {
  check_start(target, start);
  if (steps < 1) throw DimensionError("energy drift needs at least one step");
  const double h0 = hamiltonian(target, start);
  double worst = 0.0;
  PhaseState<double> s = start;
  for (int i = 0; i < steps; ++i) {
    s = one_step(target, s, eps, Integrator::leapfrog);
    const double h = hamiltonian(target, s);
    if (!std::isfinite(h)) throw NonFiniteError("energy became non-finite along the trajectory");
    worst = std::max(worst, std::abs(h - h0));
  }
  return worst;
}

IntegratorReport integrator_report(const SmoothTarget& target, const PhaseState<double>& start,
                                   double eps, int steps) {
  IntegratorReport r;
  r.step_size = eps;
  r.steps = steps;
  r.max_energy_error = check_energy_drift(target, start, eps, steps);
  r.half_step_energy_error = check_energy_drift(target, start, eps / 2, steps);
  r.halving_ratio = r.half_step_energy_error > 0 ? r.max_energy_error / r.half_step_energy_error : 0.0;
  r.reversibility_residual = check_reversibility(target, start, eps, steps);
  if (target.dimension <= kMaxVolumeDimension) {
    r.volume_determinant = check_volume(target, start, eps, Integrator::leapfrog);
    r.euler_volume_determinant = check_volume(target, start, eps, Integrator::euler);
  }
  return r;
}

ChainHealth chain_health(const PosteriorSamples& samples) {
  ChainHealth h;
  h.algorithm = std::string(to_string(samples.settings.algorithm));
  h.iterations_planned = samples.stats.iterations_planned;
  h.iterations_run = samples.stats.iterations_run;
  h.retained = samples.size();
  if (samples.stats.proposals > 0) {
    h.acceptance_rate = double(samples.stats.accepted) / double(samples.stats.proposals);
    h.mean_accept_prob = samples.stats.mean_accept_prob;
  }
  h.diverged = samples.stats.diverged;
  h.message = samples.stats.divergence_message;
  return h;
}

std::string describe(const ChainHealth& h) {
  std::ostringstream out;
  out << "algorithm=" << h.algorithm << " iterations=" << h.iterations_run << "/"
      << h.iterations_planned << " retained=" << h.retained;
  if (h.acceptance_rate) out << " acceptance=" << *h.acceptance_rate;
  out << " status=" << (h.diverged ? "DIVERGED" : "ok");
  if (h.diverged) out << " (" << h.message << ")";
  return out.str();
}

}  // namespace drophmc

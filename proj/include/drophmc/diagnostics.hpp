#pragma once

// Integrator property checks (reversibility, volume preservation, energy
// drift) and chain health summaries.
//
// The checks assume a smooth energy. A dropout-masked energy is smooth only
// while its mask is frozen; across mask resampling the Hamiltonian jumps and
// neither volume preservation nor reversibility of the composite dynamics is
// guaranteed. For masked targets the numbers are reported for information,
// never asserted.

#include "drophmc/integrators.hpp"
#include "drophmc/model.hpp"
#include "drophmc/samplers.hpp"

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <string>

namespace drophmc {

struct SmoothTarget {
  std::string name;
  Index dimension = 0;
  std::function<double(const Eigen::VectorXd&)> energy;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> gradient;
  bool masked = false;
};

/// U(theta) = sum_i precision_i * theta_i^2 / 2
SmoothTarget quadratic_target(const Eigen::VectorXd& precision);
/// U(theta) = theta^T Sigma^-1 theta / 2
SmoothTarget gaussian_target(const Eigen::MatrixXd& covariance);
SmoothTarget free_particle(Index dimension);
/// Mini-batch softmax energy over a fixed batch, optionally under a frozen mask.
SmoothTarget softmax_target(Batch<double> batch, Index classes, PriorConfig<double> prior,
                            std::optional<DropMask<double>> frozen_mask = std::nullopt);
/// Small deterministic classification batch (Gaussian features) for checks.
Batch<double> toy_batch(Index examples, Index classes, Index features, std::uint64_t seed);

enum class Integrator { leapfrog, euler };

/// ||state after (forward, flip momentum, forward, flip) - start||_inf
double check_reversibility(const SmoothTarget& target, const PhaseState<double>& start,
                           double eps, int steps);

inline constexpr Index kMaxVolumeDimension = 4;
inline constexpr double kJacobianStep = 1e-6;

/// Determinant of the central-difference Jacobian of one integrator step
/// over the 2*dimension phase space. dimension must be <= 4.
double check_volume(const SmoothTarget& target, const PhaseState<double>& state, double eps,
                    Integrator integrator = Integrator::leapfrog);

/// max_t |H(t) - H(0)| along `steps` leapfrog steps (identity mass).
double check_energy_drift(const SmoothTarget& target, const PhaseState<double>& start, double eps,
                          int steps);

struct IntegratorReport {
  double step_size = 0.0;
  int steps = 0;
  double max_energy_error = 0.0;
  double reversibility_residual = 0.0;
  double volume_determinant = 0.0;
  double euler_volume_determinant = 0.0;
  // max |dH| at eps / 2 and the ratio max|dH|(eps) / max|dH|(eps/2).
  double half_step_energy_error = 0.0;
  double halving_ratio = 0.0;
};

IntegratorReport integrator_report(const SmoothTarget& target, const PhaseState<double>& start,
                                   double eps, int steps);

struct ChainHealth {
  std::string algorithm;
  std::int64_t iterations_planned = 0;
  std::int64_t iterations_run = 0;
  Index retained = 0;
  std::optional<double> acceptance_rate;  // HMC only
  std::optional<double> mean_accept_prob;
  bool diverged = false;
  std::string message;
};

ChainHealth chain_health(const PosteriorSamples& samples);
std::string describe(const ChainHealth& health);

}  // namespace drophmc

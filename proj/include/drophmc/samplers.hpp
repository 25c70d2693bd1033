#pragma once

#include "drophmc/data.hpp"
#include "drophmc/integrators.hpp"
#include "drophmc/model.hpp"
#include "drophmc/rng.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace drophmc {

enum class Algorithm { hmc, sgld, sghmc, dsghmc };
enum class MaskTarget { none, inputs, weights };

std::string_view to_string(Algorithm algorithm);
std::string_view to_string(MaskTarget target);
Algorithm parse_algorithm(std::string_view text);
MaskTarget parse_mask_target(std::string_view text);

struct HmcConfig {
  double step_size = 1e-4;
  int leapfrog_steps = 10;
  double mass = 1.0;  // uniform diagonal mass

  void validate() const;
};

/// Stochastic-gradient settings shared by SGLD, SGHMC and D-SGHMC.
struct SgConfig {
  double step_size = 1e-4;
  double friction = 1.0;        // alpha
  double noise_discount = 0.0;  // beta, 0 <= beta < alpha
  int inner_steps = 1;          // L
  Index batch_size = 100;
  std::optional<double> keep_prob;
  MaskTarget mask_target = MaskTarget::none;
  double mass = 1.0;  // initial velocity nu_0 ~ N(0, mass I)

  void validate(Algorithm algorithm) const;
};

struct ChainConfig {
  int warmup = 500;
  int epochs = 100;
  std::uint64_t seed = 0;
  int thinning = 1;
  // Retain only the most recent keep_last draws (0 keeps all).
  int keep_last = 0;
  bool whiten = true;

  void validate() const;
};

struct SamplerSettings {
  Algorithm algorithm = Algorithm::sghmc;
  HmcConfig hmc;
  SgConfig sg;
  PriorConfig<double> prior;
  ChainConfig chain;
};

struct ChainStats {
  std::int64_t iterations_planned = 0;
  std::int64_t iterations_run = 0;
  std::int64_t proposals = 0;  // HMC only
  std::int64_t accepted = 0;   // HMC only
  double mean_accept_prob = 0.0;
  bool diverged = false;
  std::string divergence_message;
};

/// Post-warmup draws of one chain plus the settings that produced them.
struct PosteriorSamples {
  Index classes = 0;
  Index features = 0;
  SamplerSettings settings;
  std::vector<std::int64_t> iterations;
  std::vector<Eigen::VectorXd> draws;  // flat Theta layout
  ChainStats stats;

  Index size() const { return static_cast<Index>(draws.size()); }
  bool valid() const { return !stats.diverged; }
  Theta<double> theta(Index i) const {
    return Theta<double>::from_flat(classes, features, draws.at(static_cast<std::size_t>(i)));
  }
};

/// warmup + epochs * ceil(N / batch); HMC uses the full data, one batch per epoch.
std::int64_t total_iterations(const SamplerSettings& settings, Index dataset_size);

// Model-level single steps. All throw NonFiniteError on divergence.

HmcTransition hmc_step(Theta<double>& theta, const Batch<double>& data, const HmcConfig& cfg,
                       const PriorConfig<double>& prior, Rng& rng);

void sgld_step(Theta<double>& theta, const Batch<double>& batch, double step_size,
               const PriorConfig<double>& prior, Rng& rng);

/// One SGHMC update (position first, gradient at the new position).
void sghmc_step(Theta<double>& theta, Eigen::VectorXd& velocity, const Batch<double>& batch,
                const SgConfig& cfg, const PriorConfig<double>& prior, Rng& rng);

/// One D-SGHMC outer iteration: samples one mask from `mask_rng`, applies it
/// to the batch inputs or the weights, then runs cfg.inner_steps SGHMC
/// updates against the masked energy using `noise_rng`.
DropMask<double> dsghmc_step(Theta<double>& theta, Eigen::VectorXd& velocity,
                             const Batch<double>& batch, const SgConfig& cfg,
                             const PriorConfig<double>& prior, Rng& mask_rng, Rng& noise_rng);

/// Same as dsghmc_step with a caller-supplied mask.
void dsghmc_step_with_mask(Theta<double>& theta, Eigen::VectorXd& velocity,
                           const Batch<double>& batch, const SgConfig& cfg,
                           const PriorConfig<double>& prior, const DropMask<double>& mask,
                           Rng& noise_rng);

/// Runs one chain from theta = 0. Divergence stops the chain early and is
/// reported through stats rather than thrown.
PosteriorSamples run_chain(const Dataset& data, const SamplerSettings& settings);

/// Runs `count` chains with seeds settings.chain.seed + i, up to `jobs` at once.
std::vector<PosteriorSamples> run_chains(const Dataset& data, const SamplerSettings& settings,
                                         int count, int jobs = 1);

}  // namespace drophmc

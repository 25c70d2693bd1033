#include "drophmc/samplers.hpp"

#include "drophmc/errors.hpp"

#include <algorithm>
#include <atomic>
#include <deque>
#include <exception>
#include <mutex>
#include <thread>

namespace drophmc {

std::string_view to_string(Algorithm algorithm) {
  switch (algorithm) {
    case Algorithm::hmc: return "hmc";
    case Algorithm::sgld: return "sgld";
    case Algorithm::sghmc: return "sghmc";
    case Algorithm::dsghmc: return "dsghmc";
  }
  return "unknown";
}

std::string_view to_string(MaskTarget target) {
  switch (target) {
    case MaskTarget::none: return "none";
    case MaskTarget::inputs: return "inputs";
    case MaskTarget::weights: return "weights";
  }
  return "unknown";
}

Algorithm parse_algorithm(std::string_view text) {
  if (text == "hmc") return Algorithm::hmc;
  if (text == "sgld") return Algorithm::sgld;
  if (text == "sghmc") return Algorithm::sghmc;
  if (text == "dsghmc") return Algorithm::dsghmc;
  throw ConfigError("unknown algorithm '" + std::string(text) + "' (expected hmc, sgld, sghmc or dsghmc)");
}

MaskTarget parse_mask_target(std::string_view text) {
  if (text == "none") return MaskTarget::none;
  if (text == "inputs") return MaskTarget::inputs;
  if (text == "weights") return MaskTarget::weights;
  throw ConfigError("unknown mask target '" + std::string(text) + "' (expected inputs or weights)");
}

void HmcConfig::validate() const {
  if (!(step_size > 0)) throw ConfigError("HMC step size must be positive");
  if (leapfrog_steps < 1) throw ConfigError("HMC needs at least one leapfrog step");
  if (!(mass > 0)) throw ConfigError("mass must be positive");
}

void SgConfig::validate(Algorithm algorithm) const {
  if (!(step_size > 0)) throw ConfigError("step size must be positive");
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  if (algorithm == Algorithm::sghmc || algorithm == Algorithm::dsghmc) {
    if (!(friction > 0 && friction <= 1)) throw ConfigError("friction must lie in (0, 1]");
    if (!(noise_discount >= 0 && noise_discount < friction)) {
      throw ConfigError("beta must satisfy 0 <= beta < friction");
    }
    if (inner_steps < 1) throw ConfigError("inner steps must be at least 1");
    if (!(mass > 0)) throw ConfigError("mass must be positive");
  }
  if (algorithm == Algorithm::dsghmc) {
    if (!keep_prob) throw ConfigError("dsghmc requires keep_prob");
    if (!(*keep_prob > 0 && *keep_prob <= 1)) throw ConfigError("keep_prob must lie in (0, 1]");
    if (mask_target == MaskTarget::none) throw ConfigError("dsghmc requires a mask target");
  }
}

void ChainConfig::validate() const {
  if (warmup < 0) throw ConfigError("warmup must be non-negative");
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (thinning < 1) throw ConfigError("thinning must be positive");
  if (keep_last < 0) throw ConfigError("keep_last must be non-negative");
}

std::int64_t total_iterations(const SamplerSettings& settings, Index dataset_size) {
  const Index batches = settings.algorithm == Algorithm::hmc
                            ? 1
                            : batch_count(dataset_size, settings.sg.batch_size);
  return std::int64_t{settings.chain.epochs} * batches + settings.chain.warmup;
}

HmcTransition hmc_step(Theta<double>& theta, const Batch<double>& data, const HmcConfig& cfg,
                       const PriorConfig<double>& prior, Rng& rng) {
  cfg.validate();
  const Index k = theta.classes();
  const Index d = theta.features();
  auto energy = [&](const Eigen::VectorXd& p) {
    return stochastic_energy(Theta<double>::from_flat(k, d, p), data, prior);
  };
  auto grad = [&](const Eigen::VectorXd& p) -> Eigen::VectorXd {
    return std::move(grad_stochastic_energy(Theta<double>::from_flat(k, d, p), data, prior).flat());
  };
  const auto mass = DiagonalMass<double>::uniform(theta.size(), cfg.mass);
  return hmc_transition(theta.flat(), energy, grad, cfg.step_size, cfg.leapfrog_steps, mass, rng);
}

void sgld_step(Theta<double>& theta, const Batch<double>& batch, double step_size,
               const PriorConfig<double>& prior, Rng& rng) {
  // The update is applied to theta.flat() in place, so the gradient reads theta.
  auto grad = [&](const Eigen::VectorXd&) -> Eigen::VectorXd {
    return std::move(grad_stochastic_energy(theta, batch, prior).flat());
  };
  langevin_update(theta.flat(), grad, step_size, rng);
}

namespace {

void sghmc_inner(Theta<double>& theta, Eigen::VectorXd& velocity, const Batch<double>& batch,
                 const SgConfig& cfg, const PriorConfig<double>& prior,
                 const DropMask<double>* weight_mask, Rng& rng) {
  if (velocity.size() != theta.size()) throw DimensionError("velocity does not match theta");
  auto grad = [&](const Eigen::VectorXd&) -> Eigen::VectorXd {
    return std::move(grad_stochastic_energy(theta, batch, prior, weight_mask).flat());
  };
  sghmc_update(theta.flat(), velocity, grad, cfg.step_size, cfg.friction, cfg.noise_discount, rng);
}

}  // namespace

void sghmc_step(Theta<double>& theta, Eigen::VectorXd& velocity, const Batch<double>& batch,
                const SgConfig& cfg, const PriorConfig<double>& prior, Rng& rng) {
  sghmc_inner(theta, velocity, batch, cfg, prior, nullptr, rng);
}

void dsghmc_step_with_mask(Theta<double>& theta, Eigen::VectorXd& velocity,
                           const Batch<double>& batch, const SgConfig& cfg,
                           const PriorConfig<double>& prior, const DropMask<double>& mask,
                           Rng& noise_rng) {
  if (cfg.mask_target == MaskTarget::inputs) {
    const Batch<double> masked = apply_dropout(batch, mask);
    for (int i = 0; i < cfg.inner_steps; ++i) {
      sghmc_inner(theta, velocity, masked, cfg, prior, nullptr, noise_rng);
    }
  } else if (cfg.mask_target == MaskTarget::weights) {
    if (mask.size() != theta.classes() * theta.features()) {
      throw DimensionError("dropconnect mask must have K*D entries");
    }
    for (int i = 0; i < cfg.inner_steps; ++i) {
      sghmc_inner(theta, velocity, batch, cfg, prior, &mask, noise_rng);
    }
  } else {
    throw ConfigError("dsghmc requires a mask target");
  }
}

DropMask<double> dsghmc_step(Theta<double>& theta, Eigen::VectorXd& velocity,
                             const Batch<double>& batch, const SgConfig& cfg,
                             const PriorConfig<double>& prior, Rng& mask_rng, Rng& noise_rng) {
  if (!cfg.keep_prob) throw ConfigError("dsghmc requires keep_prob");
  const Index length = cfg.mask_target == MaskTarget::weights ? theta.classes() * theta.features()
                                                              : theta.features();
  DropMask<double> mask = sample_mask(length, *cfg.keep_prob, mask_rng);
  dsghmc_step_with_mask(theta, velocity, batch, cfg, prior, mask, noise_rng);
  return mask;
}

PosteriorSamples run_chain(const Dataset& data, const SamplerSettings& settings) {
  const Algorithm algorithm = settings.algorithm;
  settings.chain.validate();
  settings.prior.validate();
  if (algorithm == Algorithm::hmc) {
    settings.hmc.validate();
  } else {
    settings.sg.validate(algorithm);
    if (settings.sg.batch_size > data.size()) {
      throw ConfigError("batch size " + std::to_string(settings.sg.batch_size) +
                        " exceeds dataset size " + std::to_string(data.size()));
    }
  }

  PosteriorSamples out;
  out.classes = data.classes;
  out.features = data.dimension();
  out.settings = settings;

  const ChainConfig& chain = settings.chain;
  ChainStreams streams(chain.seed);
  Theta<double> theta(data.classes, data.dimension());
  Eigen::VectorXd velocity;
  if (algorithm == Algorithm::sghmc || algorithm == Algorithm::dsghmc) {
    velocity = DiagonalMass<double>::uniform(theta.size(), settings.sg.mass)
                   .sample_momentum(streams.momentum);
  }

  Batch<double> full;
  if (algorithm == Algorithm::hmc) {
    full.features = chain.whiten ? whiten_batch(data.features) : Eigen::MatrixXd(data.features);
    full.labels = data.labels;
    full.dataset_size = data.size();
  }

  const Index batches = algorithm == Algorithm::hmc ? 1 : batch_count(data.size(), settings.sg.batch_size);
  const std::int64_t total = total_iterations(settings, data.size());
  out.stats.iterations_planned = total;

  std::deque<std::pair<std::int64_t, Eigen::VectorXd>> kept;
  BatchPlan plan;
  double accept_sum = 0.0;
  for (std::int64_t it = 0; it < total; ++it) {
    try {
      if (algorithm == Algorithm::hmc) {
        const HmcTransition t = hmc_step(theta, full, settings.hmc, settings.prior, streams.momentum);
        ++out.stats.proposals;
        out.stats.accepted += t.accepted ? 1 : 0;
        accept_sum += t.accept_prob;
      } else {
        const Index b = static_cast<Index>(it % batches);
        if (b == 0) plan = make_batches(data.size(), settings.sg.batch_size, streams.shuffle);
        const Batch<double> batch = gather_batch(data, plan, b, chain.whiten);
        switch (algorithm) {
          case Algorithm::sgld:
            sgld_step(theta, batch, settings.sg.step_size, settings.prior, streams.momentum);
            break;
          case Algorithm::sghmc:
            for (int i = 0; i < settings.sg.inner_steps; ++i) {
              sghmc_step(theta, velocity, batch, settings.sg, settings.prior, streams.momentum);
            }
            break;
          case Algorithm::dsghmc:
            dsghmc_step(theta, velocity, batch, settings.sg, settings.prior, streams.mask,
                        streams.momentum);
            break;
          case Algorithm::hmc: break;
        }
      }
    } catch (const NonFiniteError& e) {
      out.stats.diverged = true;
      out.stats.divergence_message = "iteration " + std::to_string(it) + ": " + e.what();
      break;
    }
    ++out.stats.iterations_run;
    if (it >= chain.warmup && (it - chain.warmup) % chain.thinning == 0) {
      kept.emplace_back(it, theta.flat());
      if (chain.keep_last > 0 && kept.size() > static_cast<std::size_t>(chain.keep_last)) kept.pop_front();
    }
  }
  if (out.stats.proposals > 0) out.stats.mean_accept_prob = accept_sum / double(out.stats.proposals);

  out.iterations.reserve(kept.size());
  out.draws.reserve(kept.size());
  for (auto& [it, draw] : kept) {
    out.iterations.push_back(it);
    out.draws.push_back(std::move(draw));
  }
  return out;
}

std::vector<PosteriorSamples> run_chains(const Dataset& data, const SamplerSettings& settings,
                                         int count, int jobs) {
  if (count < 1) throw ConfigError("chain count must be positive");
  std::vector<PosteriorSamples> results(static_cast<std::size_t>(count));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(count));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next++; i < count; i = next++) {
      try {
        SamplerSettings s = settings;
        s.chain.seed = settings.chain.seed + static_cast<std::uint64_t>(i);
        results[static_cast<std::size_t>(i)] = run_chain(data, s);
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
  };
  const int threads = std::clamp(jobs, 1, count);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

}  // namespace drophmc

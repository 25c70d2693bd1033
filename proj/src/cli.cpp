#include "drophmc/cli.hpp"

#include "drophmc/commands.hpp"
#include "drophmc/errors.hpp"
#include "drophmc/sample_io.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <deque>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace drophmc {

namespace fs = std::filesystem;

namespace {

struct FlagSpec {
  const char* flag;
  const char* key;
  const char* help;
};

// Flags shared by train, evaluate and sweep. Values go through the same
// setters as configuration files.
constexpr FlagSpec kRunFlags[] = {
    {"--algorithm", "run.algorithm", "hmc, sgld, sghmc or dsghmc"},
    {"--keep-prob", "sampler.keep_prob", "dropout rate p (used as the keep probability)"},
    {"--mask-target", "sampler.mask_target", "inputs (dropout) or weights (dropconnect)"},
    {"--step-size", "sampler.step_size", "step size epsilon"},
    {"--friction", "sampler.friction", "friction alpha"},
    {"--beta", "sampler.beta", "noise estimate beta"},
    {"--inner-steps", "sampler.inner_steps", "inner updates L per mask"},
    {"--leapfrog-steps", "sampler.leapfrog_steps", "HMC leapfrog steps"},
    {"--prior-variance", "model.prior_variance", "prior variance"},
    {"--epochs", "chain.epochs", "epochs"},
    {"--warmup", "chain.warmup", "warmup iterations"},
    {"--keep-last", "chain.keep_last", "retain only the last N draws (0 keeps all)"},
    {"--batch-size", "sampler.batch_size", "mini-batch size"},
    {"--chains", "run.chains", "number of chains"},
    {"--seed", "run.seed", "master seed (chain i uses seed + i)"},
    {"--samples", "predict.samples", "prediction draws S"},
    {"--test-whitening", "predict.test_whitening", "batch, train or none"},
    {"--jobs", "run.jobs", "chains run concurrently"},
    {"--keep-probs", "sweep.keep_probs", "comma-separated sweep grid"},
};

constexpr FlagSpec kDiagnoseFlags[] = {
    {"--target", "diagnose.target", "quadratic, gaussian, softmax or masked-softmax"},
    {"--step-size", "diagnose.step_size", "integrator step size"},
    {"--steps", "diagnose.steps", "leapfrog steps"},
    {"--keep-prob", "diagnose.keep_prob", "keep probability of the frozen mask"},
    {"--seed", "run.seed", "seed for the toy data and start state"},
};

struct Invocation {
  std::optional<std::string> config_path;
  std::optional<std::string> out;
  std::vector<std::string> assignments;
  std::deque<std::pair<const FlagSpec*, std::optional<std::string>>> flags;
  std::vector<std::string> sample_files;
  bool print_config = false;
};

template <std::size_t N>
void add_common(CLI::App& cmd, Invocation& inv, const FlagSpec (&specs)[N]) {
  cmd.add_option("--config", inv.config_path, "INI configuration file");
  cmd.add_option("--out", inv.out, "output directory (default: $DROPHMC_OUT, then run.out)");
  cmd.add_option("--set", inv.assignments, "override section.key=value (repeatable)")
      ->allow_extra_args(false);
  cmd.add_flag("--print-config", inv.print_config, "print the resolved configuration and exit");
  for (const auto& spec : specs) {
    inv.flags.emplace_back(&spec, std::nullopt);
    cmd.add_option(spec.flag, inv.flags.back().second, spec.help);
  }
}

// Precedence: flag > DROPHMC_OUT > configuration file > default.
RunConfig resolve(const Invocation& inv, const std::optional<RunConfig>& base) {
  RunConfig config = base.value_or(RunConfig{});
  if (inv.config_path) config = load_config(*inv.config_path);
  for (const auto& a : inv.assignments) apply_assignment(config, a);
  for (const auto& [spec, value] : inv.flags) {
    if (value) set_value(config, spec->key, *value);
  }
  if (inv.out) {
    config.out = *inv.out;
  } else if (const char* env = std::getenv("DROPHMC_OUT"); env != nullptr && *env != '\0') {
    const bool set_explicitly = std::any_of(inv.assignments.begin(), inv.assignments.end(),
                                            [](const std::string& a) { return a.rfind("run.out=", 0) == 0; });
    if (!set_explicitly) config.out = env;
  }
  return config;
}

std::vector<fs::path> discover_samples(const fs::path& dir) {
  std::vector<fs::path> files;
  if (!fs::is_directory(dir)) return files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.rfind("chain_", 0) == 0 && entry.path().extension() == ".samples") files.push_back(entry.path());
  }
  // chain_10 sorts after chain_9
  std::sort(files.begin(), files.end(), [](const fs::path& a, const fs::path& b) {
    const auto sa = a.stem().string();
    const auto sb = b.stem().string();
    return sa.size() != sb.size() ? sa.size() < sb.size() : sa < sb;
  });
  return files;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hamiltonian and stochastic-gradient samplers for Bayesian softmax classification"};
  app.require_subcommand(1);
  Invocation train_inv, eval_inv, sweep_inv, diag_inv;

  auto* train = app.add_subcommand("train", "run chains and write sample files");
  add_common(*train, train_inv, kRunFlags);
  auto* evaluate = app.add_subcommand("evaluate", "posterior-predictive evaluation of sample files");
  add_common(*evaluate, eval_inv, kRunFlags);
  evaluate->add_option("files", eval_inv.sample_files,
                       "sample files (default: chain_*.samples in the output directory)");
  auto* sweep = app.add_subcommand("sweep", "keep-probability sensitivity sweep");
  add_common(*sweep, sweep_inv, kRunFlags);
  auto* diagnose = app.add_subcommand("diagnose", "integrator property checks");
  add_common(*diagnose, diag_inv, kDiagnoseFlags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    auto finish = [&](const Invocation& inv, const RunConfig& config, auto&& run) -> int {
      if (inv.print_config) {
        out << to_ini(config);
        return kExitOk;
      }
      return run(config);
    };
    if (*train) {
      return finish(train_inv, resolve(train_inv, std::nullopt),
                    [&](const RunConfig& c) { return cmd_train(c, out); });
    }
    if (*sweep) {
      return finish(sweep_inv, resolve(sweep_inv, std::nullopt),
                    [&](const RunConfig& c) { return cmd_sweep(c, out); });
    }
    if (*diagnose) {
      return finish(diag_inv, resolve(diag_inv, std::nullopt),
                    [&](const RunConfig& c) { return cmd_diagnose(c, out); });
    }
    // evaluate: without --config the first sample file's embedded settings
    // supply the data paths and prediction options.
    std::vector<fs::path> files(eval_inv.sample_files.begin(), eval_inv.sample_files.end());
    if (files.empty()) files = discover_samples(resolve(eval_inv, std::nullopt).out);
    if (files.empty()) throw ConfigError("no sample files given and none found in the output directory");
    std::optional<RunConfig> base;
    if (!eval_inv.config_path) base = parse_config(read_samples(files.front()).config_echo);
    return finish(eval_inv, resolve(eval_inv, base),
                  [&](const RunConfig& c) { return cmd_evaluate(c, files, out); });
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
}

}  // namespace drophmc

#include "drophmc/commands.hpp"

#include "drophmc/diagnostics.hpp"
#include "drophmc/errors.hpp"
#include "drophmc/predict.hpp"
#include "drophmc/sample_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <locale>
#include <fstream>
#include <ostream>
#include <sstream>

namespace drophmc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Shortest text that parses back to the same double.
class ShortestDouble : public std::num_put<char> {
 protected:
  iter_type do_put(iter_type out, std::ios_base&, char, double v) const override {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::copy(buf, res.ptr, out);
  }
};

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.imbue(std::locale(out.getloc(), new ShortestDouble));
  return out;
}

// Delimited tables carry the configuration as leading '#' comment lines.
std::ofstream open_table(const fs::path& path, const std::string& echo) {
  std::ofstream out = open_output(path);
  std::istringstream lines(echo);
  std::string line;
  while (std::getline(lines, line)) out << "# " << line << '\n';
  return out;
}

std::string format_number(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

void write_json(const fs::path& path, const json& doc) {
  std::ofstream out = open_output(path);
  out << doc.dump(2) << '\n';
}

void write_matrix(const fs::path& path, const std::string& echo, const Eigen::MatrixXd& m,
                  const char* row_label) {
  std::ofstream out = open_table(path, echo);
  out << row_label;
  for (Index j = 0; j < m.cols(); ++j) out << ",class_" << j;
  out << '\n';
  for (Index i = 0; i < m.rows(); ++i) {
    out << "class_" << i;
    for (Index j = 0; j < m.cols(); ++j) out << ',' << m(i, j);
    out << '\n';
  }
}

std::vector<double> to_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

void require(const fs::path& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string("data.") + what + " is not set");
  if (!fs::exists(path)) throw DataError(std::string(what) + " file not found: " + path.string());
}

PredictOptions predict_options(const RunConfig& config) {
  PredictOptions opt;
  opt.draws = config.predict.samples;
  opt.selection = config.predict.selection;
  opt.stride = config.predict.stride;
  opt.mask_at_prediction = config.predict.mask_at_prediction;
  opt.keep_prob = config.sampler.sg.keep_prob.value_or(1.0);
  opt.seed = config.sampler.chain.seed;
  return opt;
}

json health_json(const ChainHealth& h) {
  json j{{"algorithm", h.algorithm},
         {"iterations_planned", h.iterations_planned},
         {"iterations_run", h.iterations_run},
         {"retained", h.retained},
         {"diverged", h.diverged}};
  if (h.acceptance_rate) j["acceptance_rate"] = *h.acceptance_rate;
  if (h.mean_accept_prob) j["mean_accept_prob"] = *h.mean_accept_prob;
  if (h.diverged) j["message"] = h.message;
  return j;
}

}  // namespace

int exit_code_for(const std::exception& error) {
  if (dynamic_cast<const NonFiniteError*>(&error)) return kExitDivergence;
  if (dynamic_cast<const ConfigError*>(&error)) return kExitUsage;
  return kExitData;
}

Dataset load_train_data(const DataConfig& config) {
  Dataset data;
  if (config.format == "idx") {
    require(config.train_images, "train_images");
    require(config.train_labels, "train_labels");
    data = load_mnist(config.train_images, config.train_labels, config.classes > 0 ? config.classes : 10);
  } else {
    require(config.train_table, "train_table");
    data = load_feature_table(config.train_table, config.delimiter, config.classes);
  }
  return head(data, config.train_limit);
}

Dataset load_test_data(const DataConfig& config) {
  Dataset data;
  if (config.format == "idx") {
    require(config.test_images, "test_images");
    require(config.test_labels, "test_labels");
    data = load_mnist(config.test_images, config.test_labels, config.classes > 0 ? config.classes : 10);
  } else {
    require(config.test_table, "test_table");
    data = load_feature_table(config.test_table, config.delimiter, config.classes);
  }
  return head(data, config.test_limit);
}

fs::path sample_path(const fs::path& out, int chain) {
  return out / ("chain_" + std::to_string(chain) + ".samples");
}

int cmd_train(const RunConfig& config, std::ostream& log) {
  config.validate();
  const Dataset train = load_train_data(config.data);
  const SamplerSettings settings = config.resolved_sampler();
  const std::string echo = to_ini(config, false);

  log << "training " << config.chains << " " << to_string(settings.algorithm) << " chain(s) on "
      << train.size() << " examples, " << total_iterations(settings, train.size())
      << " iterations each\n";
  const auto chains = run_chains(train, settings, config.chains, config.jobs);

  fs::create_directories(config.out);
  json summary{{"command", "train"}, {"config", echo}, {"chains", json::array()}};
  std::ofstream health = open_table(config.out / "health.csv", echo);
  health << "chain,seed,iterations_planned,iterations_run,retained,acceptance_rate,diverged,file\n";
  bool diverged = false;
  for (int i = 0; i < config.chains; ++i) {
    const auto& samples = chains[static_cast<std::size_t>(i)];
    const fs::path file = sample_path(config.out, i);
    write_samples(file, samples, echo);
    const ChainHealth h = chain_health(samples);
    log << "chain " << i << ": " << describe(h) << '\n';
    diverged = diverged || h.diverged;
    health << i << ',' << samples.settings.chain.seed << ',' << h.iterations_planned << ','
           << h.iterations_run << ',' << h.retained << ','
           << (h.acceptance_rate ? format_number(*h.acceptance_rate) : std::string()) << ','
           << (h.diverged ? 1 : 0) << ',' << file.filename().string() << '\n';
    json entry = health_json(h);
    entry["chain"] = i;
    entry["seed"] = samples.settings.chain.seed;
    entry["file"] = file.filename().string();
    summary["chains"].push_back(entry);
  }
  summary["diverged"] = diverged;
  write_json(config.out / "train_summary.json", summary);
  return diverged ? kExitDivergence : kExitOk;
}

int cmd_evaluate(const RunConfig& config, const std::vector<fs::path>& sample_files,
                 std::ostream& log) {
  config.validate();
  if (sample_files.empty()) throw ConfigError("evaluate needs at least one sample file");
  const Dataset test = load_test_data(config.data);
  std::optional<Dataset> train;
  if (config.predict.test_whitening == TestWhitening::train_stats) train = load_train_data(config.data);
  const TestSet test_set = prepare_test_set(test, config.predict.test_whitening,
                                            config.sampler.sg.batch_size, train ? &*train : nullptr);
  const std::string echo = to_ini(config, false);
  fs::create_directories(config.out);

  std::vector<EvalReport> reports;
  json summary{{"command", "evaluate"}, {"config", echo}, {"chains", json::array()}};
  std::ofstream table = open_table(config.out / "aggregate.csv", echo);
  table << "chain,file,accuracy,mean_entropy,entropy_correct,entropy_incorrect,draws\n";
  bool skipped = false;
  for (std::size_t c = 0; c < sample_files.size(); ++c) {
    const SampleFile file = read_samples(sample_files[c]);
    const PosteriorSamples& samples = file.samples;
    if (samples.classes != test_set.classes || samples.features != test_set.features.cols()) {
      throw DimensionError(sample_files[c].string() + " holds a " + std::to_string(samples.classes) +
                           "x" + std::to_string(samples.features) +
                           " model but the test data is " + std::to_string(test_set.classes) + "x" +
                           std::to_string(test_set.features.cols()));
    }
    if (!samples.valid()) {
      log << "skipping " << sample_files[c].string() << ": chain diverged ("
          << samples.stats.divergence_message << ")\n";
      skipped = true;
      continue;
    }
    PredictOptions options = predict_options(config);
    options.seed = samples.settings.chain.seed;
    const auto pred = predictive_distribution(samples, test_set.features, options);
    EvalReport report = evaluate(pred, test_set.labels);
    const std::string prefix = "chain_" + std::to_string(c);
    log << prefix << ": accuracy " << report.total_accuracy << ", entropy correct "
        << report.mean_entropy_correct << " / misclassified " << report.mean_entropy_incorrect << '\n';

    write_matrix(config.out / (prefix + "_confusion.csv"), echo, report.confusion, "true_class");
    write_matrix(config.out / (prefix + "_probability_matrix.csv"), echo, report.probability_matrix,
                 "true_class");
    {
      std::ofstream out = open_table(config.out / (prefix + "_per_class.csv"), echo);
      out << "class,count,accuracy\n";
      for (Index k = 0; k < report.per_class_accuracy.size(); ++k) {
        out << k << ',' << report.class_counts(k) << ',' << report.per_class_accuracy(k) << '\n';
      }
    }
    {
      std::ofstream out = open_table(config.out / (prefix + "_examples.csv"), echo);
      out << "index,label,predicted,correct,confidence,entropy";
      for (Index k = 0; k < report.probabilities.cols(); ++k) out << ",p_" << k;
      out << '\n';
      for (Index i = 0; i < report.labels.size(); ++i) {
        out << i << ',' << report.labels(i) << ',' << report.predicted(i) << ','
            << (report.labels(i) == report.predicted(i) ? 1 : 0) << ',' << report.confidence(i) << ','
            << report.entropy(i);
        for (Index k = 0; k < report.probabilities.cols(); ++k) out << ',' << report.probabilities(i, k);
        out << '\n';
      }
    }
    if (!config.predict.examples.empty()) {
      const auto rows = per_example_report(pred, test_set.labels, config.predict.examples);
      std::ofstream out = open_table(config.out / (prefix + "_example_bars.csv"), echo);
      out << "index,label,predicted,draws";
      for (Index k = 0; k < pred.mean.cols(); ++k) out << ",p_" << k;
      for (Index k = 0; k < pred.mean.cols(); ++k) out << ",sd_" << k;
      out << '\n';
      for (const auto& r : rows) {
        out << r.index << ',' << r.label << ',' << r.predicted << ',' << r.draws;
        for (Index k = 0; k < r.probabilities.size(); ++k) out << ',' << r.probabilities(k);
        for (Index k = 0; k < r.stddev.size(); ++k) out << ',' << r.stddev(k);
        out << '\n';
      }
    }

    table << c << ',' << sample_files[c].filename().string() << ',' << report.total_accuracy << ','
          << report.mean_entropy << ',' << report.mean_entropy_correct << ','
          << report.mean_entropy_incorrect << ',' << pred.draws << '\n';
    summary["chains"].push_back({{"chain", c},
                                 {"file", sample_files[c].string()},
                                 {"algorithm", to_string(samples.settings.algorithm)},
                                 {"accuracy", report.total_accuracy},
                                 {"mean_entropy", report.mean_entropy},
                                 {"entropy_correct", report.mean_entropy_correct},
                                 {"entropy_incorrect", report.mean_entropy_incorrect},
                                 {"per_class_accuracy", to_vector(report.per_class_accuracy)}});
    reports.push_back(std::move(report));
  }
  if (reports.empty()) throw NonFiniteError("every chain diverged; nothing to evaluate");
  const ChainAggregate agg = aggregate_chains(reports);
  log << "aggregate over " << agg.count << " chain(s): " << 100 * agg.mean << " +/- " << 100 * agg.stddev
      << " %\n";
  summary["aggregate"] = {{"mean", agg.mean}, {"stddev", agg.stddev}, {"count", agg.count},
                          {"accuracies", agg.accuracies}};
  summary["skipped_diverged"] = skipped;
  write_json(config.out / "evaluate_summary.json", summary);
  return skipped ? kExitDivergence : kExitOk;
}

int cmd_sweep(const RunConfig& config, std::ostream& log) {
  if (config.sampler.algorithm != Algorithm::dsghmc) {
    throw ConfigError("sweep requires algorithm dsghmc");
  }
  {
    // The grid supplies the keep probability.
    RunConfig check = config;
    if (!check.sampler.sg.keep_prob && !check.sweep.keep_probs.empty()) {
      check.sampler.sg.keep_prob = check.sweep.keep_probs.front();
    }
    check.validate();
  }
  const Dataset train = load_train_data(config.data);
  const Dataset test = load_test_data(config.data);
  const TestSet test_set = prepare_test_set(test, config.predict.test_whitening,
                                            config.sampler.sg.batch_size, &train);
  const std::string echo = to_ini(config, false);
  log << "sweeping " << config.sweep.keep_probs.size() << " keep probabilities, " << config.chains
      << " chain(s) each\n";
  const auto points = sensitivity_sweep(config.resolved_sampler(), config.sweep.keep_probs,
                                        config.chains, train, test_set, predict_options(config),
                                        config.jobs);

  fs::create_directories(config.out);
  std::ofstream table = open_table(config.out / "sweep.csv", echo);
  table << "keep_prob,mean_accuracy,stddev,chains,failed_chains\n";
  json summary{{"command", "sweep"}, {"config", echo}, {"points", json::array()}};
  bool failed = false;
  for (const auto& p : points) {
    failed = failed || p.failed_chains > 0;
    table << p.keep_prob << ',';
    if (p.aggregate.count > 0) table << p.aggregate.mean << ',' << p.aggregate.stddev;
    else table << ',';
    table << ',' << p.aggregate.count << ',' << p.failed_chains << '\n';
    log << "q=" << p.keep_prob << ": ";
    if (p.aggregate.count > 0) log << 100 * p.aggregate.mean << " +/- " << 100 * p.aggregate.stddev << " %";
    if (p.failed_chains > 0) log << " (" << p.failed_chains << " failed: " << p.error << ")";
    log << '\n';
    json point{{"keep_prob", p.keep_prob}, {"chains", p.aggregate.count},
               {"failed_chains", p.failed_chains}, {"accuracies", p.aggregate.accuracies}};
    if (p.aggregate.count > 0) {
      point["mean"] = p.aggregate.mean;
      point["stddev"] = p.aggregate.stddev;
    }
    if (!p.error.empty()) point["error"] = p.error;
    summary["points"].push_back(point);
  }
  write_json(config.out / "sweep_summary.json", summary);
  return failed ? kExitDivergence : kExitOk;
}

int cmd_diagnose(const RunConfig& config, std::ostream& log) {
  const DiagnoseConfig& d = config.diagnose;
  if (d.step_size <= 0 || d.steps < 1) throw ConfigError("diagnose needs a positive step size and steps");

  SmoothTarget target;
  PhaseState<double> start;
  double reversibility_tol = 1e-10;
  double volume_tol = 1e-6;
  if (d.target == "quadratic") {
    target = quadratic_target(Eigen::VectorXd::Ones(1));
    start = {Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd::Constant(1, 0.5)};
  } else if (d.target == "gaussian") {
    Eigen::Matrix2d cov;
    cov << 1.0, 0.5, 0.5, 1.0;
    target = gaussian_target(cov);
    start = {Eigen::Vector2d(1.0, -0.5), Eigen::Vector2d(0.3, 0.2)};
  } else if (d.target == "softmax" || d.target == "masked-softmax") {
    // K = 2, D = 1 keeps the phase space small enough for the Jacobian check.
    Batch<double> batch = toy_batch(5, 2, 1, config.sampler.chain.seed);
    std::optional<DropMask<double>> mask;
    if (d.target == "masked-softmax") {
      check_keep_prob(d.keep_prob);
      Rng rng = make_stream(config.sampler.chain.seed, Stream::mask);
      // Redraw until one feature survives so the frozen mask is not trivial.
      do {
        mask = sample_mask<double>(1, d.keep_prob, rng);
      } while (mask->mask.sum() == 0 && d.keep_prob < 1);
    }
    target = softmax_target(std::move(batch), 2, config.sampler.prior, mask);
    Rng rng(config.sampler.chain.seed);
    start.position.resize(target.dimension);
    start.momentum.resize(target.dimension);
    fill_normal(start.position, 0.5, rng);
    fill_normal(start.momentum, 1.0, rng);
    reversibility_tol = 1e-8;
    volume_tol = 1e-4;
  } else {
    throw ConfigError("unknown diagnose target '" + d.target +
                      "' (expected quadratic, gaussian, softmax or masked-softmax)");
  }

  const IntegratorReport r = integrator_report(target, start, d.step_size, d.steps);
  const bool informational = target.masked;
  auto status = [&](bool ok) -> std::string {
    if (informational) return "informational";
    return ok ? "pass" : "FAIL";
  };
  const bool rev_ok = r.reversibility_residual < reversibility_tol;
  const bool vol_ok = std::abs(r.volume_determinant - 1.0) <= volume_tol;
  const bool ratio_ok = r.halving_ratio >= 3.5 && r.halving_ratio <= 4.5;

  log << "target: " << target.name << " (dimension " << target.dimension << ")\n"
      << "step size: " << d.step_size << ", steps: " << d.steps << '\n'
      << "reversibility residual: " << r.reversibility_residual << "  [< " << reversibility_tol << "] "
      << status(rev_ok) << '\n'
      << "volume determinant: " << r.volume_determinant << "  [1 +/- " << volume_tol << "] "
      << status(vol_ok) << '\n'
      << "euler volume determinant (reference): " << r.euler_volume_determinant << '\n'
      << "max energy error: " << r.max_energy_error << '\n'
      << "max energy error at half step: " << r.half_step_energy_error << '\n'
      << "halving ratio: " << r.halving_ratio << "  [3.5, 4.5] " << status(ratio_ok) << '\n';

  fs::create_directories(config.out);
  write_json(config.out / "diagnose.json",
             {{"command", "diagnose"},
              {"config", to_ini(config, false)},
              {"target", target.name},
              {"dimension", target.dimension},
              {"step_size", r.step_size},
              {"steps", r.steps},
              {"informational", informational},
              {"reversibility_residual", r.reversibility_residual},
              {"reversibility_pass", rev_ok},
              {"volume_determinant", r.volume_determinant},
              {"volume_pass", vol_ok},
              {"euler_volume_determinant", r.euler_volume_determinant},
              {"max_energy_error", r.max_energy_error},
              {"half_step_energy_error", r.half_step_energy_error},
              {"halving_ratio", r.halving_ratio},
              {"halving_ratio_pass", ratio_ok}});
  return kExitOk;
}

}  // namespace drophmc

#include "drophmc/predict.hpp"

#include "drophmc/errors.hpp"
#include "drophmc/rng.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace drophmc {

std::string_view to_string(TestWhitening mode) {
  switch (mode) {
    case TestWhitening::none: return "none";
    case TestWhitening::per_batch: return "batch";
    case TestWhitening::train_stats: return "train";
  }
  return "unknown";
}

TestWhitening parse_test_whitening(std::string_view text) {
  if (text == "none") return TestWhitening::none;
  if (text == "batch") return TestWhitening::per_batch;
  if (text == "train") return TestWhitening::train_stats;
  throw ConfigError("unknown test whitening '" + std::string(text) + "' (expected batch, train or none)");
}

std::string_view to_string(DrawSelection selection) {
  return selection == DrawSelection::last ? "last" : "strided";
}

DrawSelection parse_draw_selection(std::string_view text) {
  if (text == "last") return DrawSelection::last;
  if (text == "strided") return DrawSelection::strided;
  throw ConfigError("unknown draw selection '" + std::string(text) + "' (expected last or strided)");
}

TestSet prepare_test_set(const Dataset& test, TestWhitening mode, Index block_size,
                         const Dataset* train) {
  TestSet out;
  out.labels = test.labels;
  out.classes = test.classes;
  switch (mode) {
    case TestWhitening::none: out.features = test.features; break;
    case TestWhitening::per_batch: out.features = whiten_in_blocks(test.features, block_size); break;
    case TestWhitening::train_stats:
      if (train == nullptr) throw ConfigError("train-statistics whitening needs the training set");
      if (train->dimension() != test.dimension()) throw DimensionError("train/test feature widths differ");
      out.features = standardize(test.features, compute_feature_stats(train->features));
      break;
  }
  return out;
}

std::vector<Index> select_draws(Index available, const PredictOptions& options) {
  if (options.draws < 1) throw ConfigError("prediction needs at least one draw");
  const Index stride = options.selection == DrawSelection::last ? 1 : options.stride;
  if (stride < 1) throw ConfigError("draw stride must be positive");
  const Index span = (options.draws - 1) * stride + 1;
  if (span > available) {
    throw ConfigError("requested " + std::to_string(options.draws) + " draws (stride " +
                      std::to_string(stride) + ") but only " + std::to_string(available) +
                      " are available");
  }
  std::vector<Index> out;
  for (Index j = options.draws - 1; j >= 0; --j) out.push_back(available - 1 - j * stride);
  return out;
}

PredictiveDistribution predictive_distribution(const PosteriorSamples& samples,
                                               const Eigen::MatrixXd& features,
                                               const PredictOptions& options) {
  if (features.cols() != samples.features) {
    throw DimensionError("test features have " + std::to_string(features.cols()) +
                         " columns, samples expect " + std::to_string(samples.features));
  }
  const auto chosen = select_draws(samples.size(), options);
  if (options.mask_at_prediction) check_keep_prob(options.keep_prob);

  const Index n = features.rows();
  const Index k = samples.classes;
  // Welford running moments: stable, and exactly zero spread for equal draws.
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(n, k);
  Eigen::MatrixXd m2 = Eigen::MatrixXd::Zero(n, k);
  double count = 0;
  Rng rng = make_stream(options.seed, Stream::prediction);
  std::bernoulli_distribution keep(options.mask_at_prediction ? options.keep_prob : 1.0);
  for (const Index i : chosen) {
    const Theta<double> theta = samples.theta(i);
    Eigen::MatrixXd probs;
    if (options.mask_at_prediction && options.keep_prob < 1.0) {
      Eigen::MatrixXd masked = features;
      for (Index c = 0; c < masked.cols(); ++c) {
        for (Index r = 0; r < masked.rows(); ++r) masked(r, c) *= keep(rng) ? 1.0 / options.keep_prob : 0.0;
      }
      probs = softmax_probs_rows(theta, masked);
    } else {
      probs = softmax_probs_rows(theta, features);
    }
    count += 1;
    const Eigen::MatrixXd delta = probs - mean;
    mean += delta / count;
    m2 += delta.cwiseProduct(probs - mean);
  }
  PredictiveDistribution out;
  out.draws = static_cast<Index>(chosen.size());
  out.mean = std::move(mean);
  out.stddev = (m2 / count).cwiseSqrt();
  return out;
}

double entropy(const Eigen::VectorXd& probabilities) {
  double h = 0.0;
  for (Index j = 0; j < probabilities.size(); ++j) {
    const double p = probabilities(j);
    if (p > 0) h -= p * std::log(p);
  }
  return h;
}

EvalReport evaluate(const PredictiveDistribution& pred, const Eigen::VectorXi& labels) {
  const Index n = pred.mean.rows();
  const Index k = pred.mean.cols();
  if (labels.size() != n) throw DimensionError("label count does not match predictions");
  if (n == 0) throw DimensionError("nothing to evaluate");

  EvalReport r;
  r.labels = labels;
  r.probabilities = pred.mean;
  r.predicted.resize(n);
  r.entropy.resize(n);
  r.confidence.resize(n);
  r.class_counts = Eigen::VectorXi::Zero(k);
  r.confusion = Eigen::MatrixXd::Zero(k, k);
  r.probability_matrix = Eigen::MatrixXd::Zero(k, k);

  double h_correct = 0.0;
  double h_wrong = 0.0;
  for (Index i = 0; i < n; ++i) {
    const int y = labels(i);
    if (y < 0 || y >= k) throw DimensionError("label outside [0, K)");
    Index arg = 0;
    r.confidence(i) = pred.mean.row(i).maxCoeff(&arg);  // first maximum wins ties
    r.predicted(i) = static_cast<int>(arg);
    r.entropy(i) = entropy(pred.mean.row(i).transpose());
    r.class_counts(y) += 1;
    r.confusion(y, arg) += 1.0;
    r.probability_matrix.row(y) += pred.mean.row(i);
    if (arg == y) {
      ++r.correct;
      h_correct += r.entropy(i);
    } else {
      h_wrong += r.entropy(i);
    }
  }
  r.total_accuracy = double(r.correct) / double(n);
  r.mean_entropy = r.entropy.mean();
  r.mean_entropy_correct = r.correct > 0 ? h_correct / double(r.correct) : 0.0;
  r.mean_entropy_incorrect = r.correct < n ? h_wrong / double(n - r.correct) : 0.0;
  r.per_class_accuracy = Eigen::VectorXd::Zero(k);
  for (Index c = 0; c < k; ++c) {
    if (r.class_counts(c) == 0) continue;
    r.per_class_accuracy(c) = r.confusion(c, c) / r.class_counts(c);
    r.confusion.row(c) /= r.class_counts(c);
    r.probability_matrix.row(c) /= r.class_counts(c);
  }
  return r;
}

ChainAggregate aggregate_accuracies(const std::vector<double>& accuracies) {
  if (accuracies.empty()) throw ConfigError("cannot aggregate zero chains");
  ChainAggregate a;
  a.accuracies = accuracies;
  a.count = static_cast<Index>(accuracies.size());
  const Eigen::Map<const Eigen::VectorXd> v(accuracies.data(), a.count);
  a.mean = v.mean();
  a.stddev = a.count > 1 ? std::sqrt((v.array() - a.mean).square().mean()) : 0.0;
  return a;
}

ChainAggregate aggregate_chains(const std::vector<EvalReport>& reports) {
  std::vector<double> acc;
  acc.reserve(reports.size());
  for (const auto& r : reports) acc.push_back(r.total_accuracy);
  return aggregate_accuracies(acc);
}

std::vector<SweepPoint> sensitivity_sweep(const SamplerSettings& base,
                                          const std::vector<double>& keep_probs, int chains,
                                          const Dataset& train, const TestSet& test,
                                          const PredictOptions& options, int jobs) {
  if (chains < 1) throw ConfigError("sweep needs at least one chain per point");
  std::vector<SweepPoint> points;
  for (const double q : keep_probs) {
    check_keep_prob(q);
    SweepPoint point;
    point.keep_prob = q;
    SamplerSettings s = base;
    s.algorithm = Algorithm::dsghmc;
    s.sg.keep_prob = q;
    if (s.sg.mask_target == MaskTarget::none) s.sg.mask_target = MaskTarget::inputs;
    std::vector<double> accuracies;
    try {
      for (const auto& samples : run_chains(train, s, chains, jobs)) {
        if (!samples.valid()) {
          ++point.failed_chains;
          point.error = samples.stats.divergence_message;
          continue;
        }
        const auto pred = predictive_distribution(samples, test.features, options);
        accuracies.push_back(evaluate(pred, test.labels).total_accuracy);
      }
    } catch (const Error& e) {
      point.failed_chains = chains;
      point.error = e.what();
    }
    if (!accuracies.empty()) point.aggregate = aggregate_accuracies(accuracies);
    points.push_back(std::move(point));
  }
  return points;
}

std::vector<ExampleRow> per_example_report(const PredictiveDistribution& pred,
                                           const Eigen::VectorXi& labels,
                                           const std::vector<Index>& indices) {
  if (labels.size() != pred.mean.rows()) throw DimensionError("label count does not match predictions");
  std::vector<ExampleRow> rows;
  rows.reserve(indices.size());
  for (const Index i : indices) {
    if (i < 0 || i >= pred.mean.rows()) {
      throw DimensionError("example index " + std::to_string(i) + " out of range");
    }
    ExampleRow row;
    row.index = i;
    row.label = labels(i);
    Index arg = 0;
    pred.mean.row(i).maxCoeff(&arg);
    row.predicted = static_cast<int>(arg);
    row.probabilities = pred.mean.row(i).transpose();
    row.stddev = pred.stddev.row(i).transpose();
    row.draws = pred.draws;
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace drophmc

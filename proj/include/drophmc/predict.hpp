#pragma once

// Monte Carlo posterior predictive distributions and the evaluation
// artifacts built on them: accuracy, confusion matrices, entropies,
// multi-chain aggregates and keep-probability sweeps.

#include "drophmc/data.hpp"
#include "drophmc/samplers.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace drophmc {

enum class TestWhitening {
  none,
  per_batch,    // each consecutive test block uses its own statistics
  train_stats,  // global statistics of the training features
};

enum class DrawSelection { last, strided };

std::string_view to_string(TestWhitening mode);
TestWhitening parse_test_whitening(std::string_view text);
std::string_view to_string(DrawSelection selection);
DrawSelection parse_draw_selection(std::string_view text);

/// Test features after the configured whitening, with their labels.
struct TestSet {
  Eigen::MatrixXd features;
  Eigen::VectorXi labels;
  int classes = 0;

  Index size() const { return features.rows(); }
};

TestSet prepare_test_set(const Dataset& test, TestWhitening mode, Index block_size,
                         const Dataset* train = nullptr);

struct PredictOptions {
  Index draws = 30;  // S
  DrawSelection selection = DrawSelection::last;
  Index stride = 1;  // spacing between selected draws when strided
  // Optional MC-dropout at prediction time (off by default).
  bool mask_at_prediction = false;
  double keep_prob = 1.0;
  std::uint64_t seed = 0;
};

/// Indices (into samples.draws) used for prediction, oldest first.
std::vector<Index> select_draws(Index available, const PredictOptions& options);

struct PredictiveDistribution {
  Eigen::MatrixXd mean;    // N x K, each row sums to 1
  Eigen::MatrixXd stddev;  // N x K, across draws
  Index draws = 0;
};

PredictiveDistribution predictive_distribution(const PosteriorSamples& samples,
                                               const Eigen::MatrixXd& features,
                                               const PredictOptions& options);

struct EvalReport {
  double total_accuracy = 0.0;
  Eigen::VectorXd per_class_accuracy;  // 0 for classes absent from the test set
  Eigen::VectorXi class_counts;
  // confusion(i, j): fraction of true-class-i examples predicted as j.
  Eigen::MatrixXd confusion;
  // probability_matrix(i, j): mean predicted probability of j over true class i.
  Eigen::MatrixXd probability_matrix;
  double mean_entropy = 0.0;  // nats
  double mean_entropy_correct = 0.0;
  double mean_entropy_incorrect = 0.0;
  Index correct = 0;

  // Per-example records.
  Eigen::VectorXi labels;
  Eigen::VectorXi predicted;
  Eigen::VectorXd entropy;
  Eigen::VectorXd confidence;  // max mean probability
  Eigen::MatrixXd probabilities;
};

/// Argmax prediction (lowest index wins ties) and derived statistics.
EvalReport evaluate(const PredictiveDistribution& pred, const Eigen::VectorXi& labels);

double entropy(const Eigen::VectorXd& probabilities);

struct ChainAggregate {
  std::vector<double> accuracies;
  double mean = 0.0;
  double stddev = 0.0;  // population
  Index count = 0;
};

ChainAggregate aggregate_chains(const std::vector<EvalReport>& reports);
ChainAggregate aggregate_accuracies(const std::vector<double>& accuracies);

struct SweepPoint {
  double keep_prob = 1.0;
  ChainAggregate aggregate;
  int failed_chains = 0;
  std::string error;
};

/// Runs `chains` D-SGHMC chains per keep probability (seeds seed + i at
/// every point) and aggregates their test accuracies. Chain failures are
/// recorded per point and the sweep continues.
std::vector<SweepPoint> sensitivity_sweep(const SamplerSettings& base,
                                          const std::vector<double>& keep_probs, int chains,
                                          const Dataset& train, const TestSet& test,
                                          const PredictOptions& options, int jobs = 1);

struct ExampleRow {
  Index index = 0;
  int label = 0;
  int predicted = 0;
  Eigen::VectorXd probabilities;
  Eigen::VectorXd stddev;
  Index draws = 0;
};

std::vector<ExampleRow> per_example_report(const PredictiveDistribution& pred,
                                           const Eigen::VectorXi& labels,
                                           const std::vector<Index>& indices);

}  // namespace drophmc

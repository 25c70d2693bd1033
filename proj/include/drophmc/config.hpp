#pragma once

// Run configuration: an INI document with sections [run], [data], [model],
// [sampler], [chain], [predict], [sweep] and [diagnose]. Unknown sections or
// keys are rejected. to_ini() writes the canonical form that is embedded in
// every output file; parsing it back reproduces the same RunConfig.

#include "drophmc/predict.hpp"
#include "drophmc/samplers.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace drophmc {

struct DataConfig {
  std::string format = "idx";  // idx or table
  std::filesystem::path train_images;
  std::filesystem::path train_labels;
  std::filesystem::path test_images;
  std::filesystem::path test_labels;
  std::filesystem::path train_table;
  std::filesystem::path test_table;
  char delimiter = ',';
  int classes = 0;  // 0: 10 for idx, inferred for tables
  Index train_limit = 0;
  Index test_limit = 0;
};

struct PredictConfig {
  int samples = 30;
  DrawSelection selection = DrawSelection::last;
  Index stride = 1;
  bool mask_at_prediction = false;
  TestWhitening test_whitening = TestWhitening::per_batch;
  std::vector<Index> examples;  // test indices for the per-example table
};

struct SweepConfig {
  std::vector<double> keep_probs{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
};

struct DiagnoseConfig {
  std::string target = "quadratic";  // quadratic, gaussian, softmax, masked-softmax
  double step_size = 0.1;
  int steps = 100;
  double keep_prob = 0.5;  // masked-softmax only
};

struct RunConfig {
  int chains = 5;
  int jobs = 1;
  std::filesystem::path out = "runs";
  DataConfig data;
  SamplerSettings sampler;
  PredictConfig predict;
  SweepConfig sweep;
  DiagnoseConfig diagnose;

  RunConfig();

  /// Cross-field checks; throws ConfigError.
  void validate() const;
  /// Sampler settings for chain runs (fills the dsghmc mask target default).
  SamplerSettings resolved_sampler() const;
};

/// Sets `section.key` from text. Throws ConfigError for unknown keys or bad values.
void set_value(RunConfig& config, const std::string& dotted_key, const std::string& value);
/// Applies "section.key=value".
void apply_assignment(RunConfig& config, const std::string& assignment);

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
/// Canonical INI text. Without runtime keys (run.out, run.jobs) the text
/// depends only on settings that change results.
std::string to_ini(const RunConfig& config, bool include_runtime = true);

std::vector<std::string> config_keys();

}  // namespace drophmc

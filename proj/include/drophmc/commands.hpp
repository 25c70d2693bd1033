#pragma once

// The four CLI commands as library calls. Each returns a process exit code
// (kExitOk or kExitDivergence) and throws drophmc::Error subclasses for
// configuration and data problems; exit_code_for() maps those.

#include "drophmc/config.hpp"
#include "drophmc/data.hpp"

#include <filesystem>
#include <iosfwd>
#include <vector>

namespace drophmc {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitDivergence = 3;

int exit_code_for(const std::exception& error);

Dataset load_train_data(const DataConfig& config);
Dataset load_test_data(const DataConfig& config);

/// Writes chain_<i>.samples, health.csv and train_summary.json under config.out.
int cmd_train(const RunConfig& config, std::ostream& log);

/// Writes per-chain report tables, aggregate.csv and evaluate_summary.json.
int cmd_evaluate(const RunConfig& config, const std::vector<std::filesystem::path>& sample_files,
                 std::ostream& log);

/// Writes sweep.csv and sweep_summary.json.
int cmd_sweep(const RunConfig& config, std::ostream& log);

/// Prints the integrator checks and writes diagnose.json.
int cmd_diagnose(const RunConfig& config, std::ostream& log);

std::filesystem::path sample_path(const std::filesystem::path& out, int chain);

}  // namespace drophmc

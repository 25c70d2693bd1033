#pragma once

// Shared fixtures for the unit tests.

#include "drophmc/data.hpp"
#include "drophmc/rng.hpp"

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

namespace drophmc::testing {

struct TempDir {
  std::filesystem::path path;

  TempDir() {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("drophmc_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

inline std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

// Gaussian clusters: centres N(0, spread^2), unit noise, labels cycle 0..K-1.
inline Dataset blobs(Index n, int classes, Index d, std::uint64_t seed, double spread = 2.0) {
  Rng rng(seed);
  Eigen::MatrixXd centres(classes, d);
  fill_normal(centres, spread, rng);
  FeatureMatrix x(n, d);
  Eigen::VectorXi y(n);
  Eigen::VectorXd noise(d);
  for (Index i = 0; i < n; ++i) {
    y(i) = static_cast<int>(i % classes);
    fill_normal(noise, 1.0, rng);
    x.row(i) = centres.row(y(i)) + noise.transpose();
  }
  return make_dataset(std::move(x), std::move(y), classes, "blobs");
}

}  // namespace drophmc::testing

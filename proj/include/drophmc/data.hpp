#pragma once

#include "drophmc/model.hpp"
#include "drophmc/rng.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace drophmc {

// Row-major so that gathering a mini-batch copies contiguous rows.
using FeatureMatrix = RowMatrixX<double>;

/// Immutable labelled dataset: N x D features, N labels in [0, classes).
struct Dataset {
  FeatureMatrix features;
  Eigen::VectorXi labels;
  int classes = 0;
  std::string name;

  Index size() const { return features.rows(); }
  Index dimension() const { return features.cols(); }
};

/// Validates shapes and label range; throws DataError on violation.
Dataset make_dataset(FeatureMatrix features, Eigen::VectorXi labels, int classes,
                     std::string name = {});

// Keeps only the first `count` examples (count == 0 keeps everything).
Dataset head(const Dataset& data, Index count);

// IDX (MNIST) files: big-endian header, unsigned byte payload.
inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// N x (rows*cols) matrix of pixel bytes divided by 255.
FeatureMatrix load_idx_images(const std::filesystem::path& path);
Eigen::VectorXi load_idx_labels(const std::filesystem::path& path);

/// Writes pixels (values in [0,1], rounded to bytes) as an IDX3 file.
void write_idx_images(const std::filesystem::path& path, const FeatureMatrix& pixels,
                      std::uint32_t rows, std::uint32_t cols);
void write_idx_labels(const std::filesystem::path& path, const Eigen::VectorXi& labels);

Dataset load_mnist(const std::filesystem::path& images, const std::filesystem::path& labels,
                   int classes = 10);

/// Delimited text, one example per line: D numeric columns then an integer
/// label. classes <= 0 infers max(label) + 1.
Dataset load_feature_table(const std::filesystem::path& path, char delimiter = ',',
                           int classes = 0);
void write_feature_table(const std::filesystem::path& path, const Dataset& data,
                         char delimiter = ',');

inline constexpr double kDegenerateStddev = 1e-8;

/// Per-column z-scoring within the batch (population standard deviation).
/// Columns whose standard deviation is below 1e-8 are only centred.
Eigen::MatrixXd whiten_batch(const Eigen::MatrixXd& features);

struct FeatureStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd stddev;
};

FeatureStats compute_feature_stats(const Eigen::MatrixXd& features);
Eigen::MatrixXd standardize(const Eigen::MatrixXd& features, const FeatureStats& stats);

/// Whitens consecutive row blocks of `block_size` independently.
Eigen::MatrixXd whiten_in_blocks(const Eigen::MatrixXd& features, Index block_size);

/// A shuffled partition of [0, N) into consecutive ranges of batch_size
/// (the last one may be shorter).
struct BatchPlan {
  Index batch_size = 0;
  std::vector<Index> permutation;
  std::vector<std::pair<Index, Index>> ranges;  // [begin, end) into permutation

  Index batch_count() const { return static_cast<Index>(ranges.size()); }
  std::vector<Index> indices(Index batch) const;
};

BatchPlan make_batches(Index dataset_size, Index batch_size, Rng& rng);
inline BatchPlan make_batches(const Dataset& data, Index batch_size, Rng& rng) {
  return make_batches(data.size(), batch_size, rng);
}
Index batch_count(Index dataset_size, Index batch_size);

/// Gathers one batch, optionally whitened, carrying N = data.size().
Batch<double> gather_batch(const Dataset& data, const BatchPlan& plan, Index batch, bool whiten);

}  // namespace drophmc

#include "drophmc/data.hpp"

#include "drophmc/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <string_view>

namespace drophmc {

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return bytes;
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void put_be32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b, 4);
}

// Parses the IDX header and returns the declared dimensions.
std::vector<std::uint32_t> idx_header(const std::vector<unsigned char>& bytes,
                                      std::uint32_t expected_magic,
                                      const std::filesystem::path& path) {
  if (bytes.size() < 4) throw DataError(path.string() + ": truncated IDX header");
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != expected_magic) {
    std::ostringstream msg;
    msg << path.string() << ": bad IDX magic 0x" << std::hex << magic << ", expected 0x"
        << expected_magic;
    throw DataError(msg.str());
  }
  const std::size_t ndims = magic & 0xffu;
  if (bytes.size() < 4 + 4 * ndims) throw DataError(path.string() + ": truncated IDX header");
  std::vector<std::uint32_t> dims(ndims);
  std::uint64_t payload = 1;
  for (std::size_t i = 0; i < ndims; ++i) {
    dims[i] = read_be32(bytes, 4 + 4 * i);
    payload *= dims[i];
    if (payload > (std::uint64_t{1} << 40)) throw DataError(path.string() + ": IDX dimensions overflow");
  }
  if (bytes.size() - (4 + 4 * ndims) < payload) {
    throw DataError(path.string() + ": truncated IDX payload");
  }
  return dims;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

Dataset make_dataset(FeatureMatrix features, Eigen::VectorXi labels, int classes,
                     std::string name) {
  if (features.rows() != labels.size()) {
    throw DataError("dataset has " + std::to_string(features.rows()) + " feature rows but " +
                    std::to_string(labels.size()) + " labels");
  }
  if (features.rows() == 0 || features.cols() == 0) throw DataError("dataset is empty");
  if (classes < 2) throw DataError("dataset needs at least 2 classes");
  if (!features.allFinite()) throw DataError("dataset features contain NaN or Inf");
  for (Index i = 0; i < labels.size(); ++i) {
    if (labels(i) < 0 || labels(i) >= classes) {
      throw DataError("label " + std::to_string(labels(i)) + " at row " + std::to_string(i) +
                      " outside [0, " + std::to_string(classes) + ")");
    }
  }
  return Dataset{std::move(features), std::move(labels), classes, std::move(name)};
}

Dataset head(const Dataset& data, Index count) {
  if (count <= 0 || count >= data.size()) return data;
  return Dataset{data.features.topRows(count), data.labels.head(count), data.classes, data.name};
}

FeatureMatrix load_idx_images(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const auto dims = idx_header(bytes, kIdxImagesMagic, path);
  const Index n = dims[0];
  const Index d = Index{dims[1]} * Index{dims[2]};
  const std::size_t offset = 16;
  FeatureMatrix out(n, d);
  for (Index i = 0; i < n; ++i) {
    const unsigned char* row = bytes.data() + offset + static_cast<std::size_t>(i * d);
    for (Index j = 0; j < d; ++j) out(i, j) = row[j] / 255.0;
  }
  return out;
}

Eigen::VectorXi load_idx_labels(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const auto dims = idx_header(bytes, kIdxLabelsMagic, path);
  Eigen::VectorXi out(static_cast<Index>(dims[0]));
  for (Index i = 0; i < out.size(); ++i) out(i) = bytes[8 + static_cast<std::size_t>(i)];
  return out;
}

void write_idx_images(const std::filesystem::path& path, const FeatureMatrix& pixels,
                      std::uint32_t rows, std::uint32_t cols) {
  if (pixels.cols() != Index{rows} * Index{cols}) {
    throw DimensionError("pixel matrix width does not equal rows*cols");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  put_be32(out, kIdxImagesMagic);
  put_be32(out, static_cast<std::uint32_t>(pixels.rows()));
  put_be32(out, rows);
  put_be32(out, cols);
  std::vector<char> row(static_cast<std::size_t>(pixels.cols()));
  for (Index i = 0; i < pixels.rows(); ++i) {
    for (Index j = 0; j < pixels.cols(); ++j) {
      const double v = std::clamp(pixels(i, j), 0.0, 1.0);
      row[static_cast<std::size_t>(j)] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
    }
    out.write(row.data(), static_cast<std::streamsize>(row.size()));
  }
}

void write_idx_labels(const std::filesystem::path& path, const Eigen::VectorXi& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  put_be32(out, kIdxLabelsMagic);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  for (Index i = 0; i < labels.size(); ++i) {
    if (labels(i) < 0 || labels(i) > 255) throw DataError("IDX labels must fit in a byte");
    out.put(static_cast<char>(labels(i)));
  }
}

Dataset load_mnist(const std::filesystem::path& images, const std::filesystem::path& labels,
                   int classes) {
  return make_dataset(load_idx_images(images), load_idx_labels(labels), classes,
                      images.filename().string());
}

Dataset load_feature_table(const std::filesystem::path& path, char delimiter, int classes) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<double> values;
  std::vector<int> labels;
  Index width = -1;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::vector<std::string_view> cells;
    std::string_view rest(line);
    for (;;) {
      const auto pos = rest.find(delimiter);
      cells.push_back(trim(rest.substr(0, pos)));
      if (pos == std::string_view::npos) break;
      rest.remove_prefix(pos + 1);
    }
    const auto where = path.string() + ":" + std::to_string(line_no);
    if (cells.size() < 2) throw DataError(where + ": need at least one feature and a label");
    if (width < 0) width = static_cast<Index>(cells.size());
    if (static_cast<Index>(cells.size()) != width) throw DataError(where + ": ragged row");
    for (std::size_t c = 0; c + 1 < cells.size(); ++c) {
      double v = 0;
      const auto cell = cells[c];
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v)) {
        throw DataError(where + ": non-numeric cell '" + std::string(cell) + "'");
      }
      values.push_back(v);
    }
    int label = 0;
    const auto cell = cells.back();
    const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), label);
    if (ec != std::errc() || ptr != cell.data() + cell.size()) {
      throw DataError(where + ": label '" + std::string(cell) + "' is not an integer");
    }
    if (label < 0) throw DataError(where + ": negative label");
    labels.push_back(label);
  }
  if (labels.empty()) throw DataError(path.string() + ": empty feature table");

  const Index n = static_cast<Index>(labels.size());
  const Index d = width - 1;
  FeatureMatrix features = Eigen::Map<const FeatureMatrix>(values.data(), n, d);
  const Eigen::VectorXi y = Eigen::Map<const Eigen::VectorXi>(labels.data(), n);
  const int inferred = y.maxCoeff() + 1;
  if (classes > 0 && classes < inferred) {
    throw DataError(path.string() + ": label " + std::to_string(inferred - 1) +
                    " exceeds the configured class count");
  }
  return make_dataset(std::move(features), y, classes > 0 ? classes : std::max(inferred, 2),
                      path.filename().string());
}

void write_feature_table(const std::filesystem::path& path, const Dataset& data, char delimiter) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  for (Index i = 0; i < data.size(); ++i) {
    for (Index j = 0; j < data.dimension(); ++j) out << data.features(i, j) << delimiter;
    out << data.labels(i) << '\n';
  }
}

FeatureStats compute_feature_stats(const Eigen::MatrixXd& features) {
  if (features.rows() < 1) throw DimensionError("cannot compute statistics of an empty block");
  FeatureStats stats;
  stats.mean = features.colwise().mean().transpose();
  stats.stddev =
      ((features.rowwise() - stats.mean.transpose()).colwise().squaredNorm() / double(features.rows()))
          .cwiseSqrt()
          .transpose();
  return stats;
}

Eigen::MatrixXd standardize(const Eigen::MatrixXd& features, const FeatureStats& stats) {
  if (features.cols() != stats.mean.size()) throw DimensionError("statistics width mismatch");
  const Eigen::VectorXd inv =
      stats.stddev.unaryExpr([](double s) { return s < kDegenerateStddev ? 1.0 : 1.0 / s; });
  return (features.rowwise() - stats.mean.transpose()) * inv.asDiagonal();
}

Eigen::MatrixXd whiten_batch(const Eigen::MatrixXd& features) {
  return standardize(features, compute_feature_stats(features));
}

Eigen::MatrixXd whiten_in_blocks(const Eigen::MatrixXd& features, Index block_size) {
  if (block_size < 1) throw DimensionError("block size must be positive");
  Eigen::MatrixXd out(features.rows(), features.cols());
  for (Index begin = 0; begin < features.rows(); begin += block_size) {
    const Index len = std::min(block_size, features.rows() - begin);
    out.middleRows(begin, len) = whiten_batch(features.middleRows(begin, len));
  }
  return out;
}

Index batch_count(Index dataset_size, Index batch_size) {
  return (dataset_size + batch_size - 1) / batch_size;
}

std::vector<Index> BatchPlan::indices(Index batch) const {
  const auto [begin, end] = ranges.at(static_cast<std::size_t>(batch));
  return {permutation.begin() + begin, permutation.begin() + end};
}

BatchPlan make_batches(Index dataset_size, Index batch_size, Rng& rng) {
  if (batch_size < 1) throw DimensionError("batch size must be positive");
  if (batch_size > dataset_size) {
    throw DimensionError("batch size " + std::to_string(batch_size) + " exceeds dataset size " +
                         std::to_string(dataset_size));
  }
  BatchPlan plan;
  plan.batch_size = batch_size;
  plan.permutation.resize(static_cast<std::size_t>(dataset_size));
  std::iota(plan.permutation.begin(), plan.permutation.end(), Index{0});
  std::shuffle(plan.permutation.begin(), plan.permutation.end(), rng);
  for (Index begin = 0; begin < dataset_size; begin += batch_size) {
    plan.ranges.emplace_back(begin, std::min(begin + batch_size, dataset_size));
  }
  return plan;
}

Batch<double> gather_batch(const Dataset& data, const BatchPlan& plan, Index batch, bool whiten) {
  const auto idx = plan.indices(batch);
  Batch<double> out;
  out.features = data.features(idx, Eigen::all);
  out.labels = data.labels(idx);
  out.dataset_size = data.size();
  if (whiten) out.features = whiten_batch(out.features);
  return out;
}

}  // namespace drophmc

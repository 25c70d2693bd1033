#pragma once

// Bayesian softmax classifier: categorical likelihood, isotropic Gaussian
// prior, full and mini-batch potential energies with analytic gradients,
// and the Dropout / DropConnect transforms used by the dropout sampler.

#include "drophmc/errors.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <string>
#include <utility>

namespace drophmc {

using Eigen::Index;

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RowMatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Classifier parameters: a K x D weight matrix and K biases, stored as one
/// flat vector (weights row-major, then biases) so samplers can treat it as
/// a point in R^(K*D+K).
template <typename Scalar>
class Theta {
 public:
  using WeightMap = Eigen::Map<RowMatrixX<Scalar>>;
  using ConstWeightMap = Eigen::Map<const RowMatrixX<Scalar>>;

  Theta(Index classes, Index features) : classes_(classes), features_(features) {
    if (classes < 2 || features < 1) {
      throw DimensionError("Theta requires at least 2 classes and 1 feature, got K=" +
                           std::to_string(classes) + ", D=" + std::to_string(features));
    }
    params_ = VectorX<Scalar>::Zero(classes * features + classes);
  }

  static Theta from_flat(Index classes, Index features, VectorX<Scalar> params) {
    Theta theta(classes, features);
    if (params.size() != theta.size()) {
      throw DimensionError("flat parameter vector has " + std::to_string(params.size()) +
                           " entries, expected " + std::to_string(theta.size()));
    }
    theta.params_ = std::move(params);
    return theta;
  }

  Index classes() const { return classes_; }
  Index features() const { return features_; }
  Index size() const { return params_.size(); }

  WeightMap weights() { return WeightMap(params_.data(), classes_, features_); }
  ConstWeightMap weights() const { return ConstWeightMap(params_.data(), classes_, features_); }
  auto biases() { return params_.tail(classes_); }
  auto biases() const { return params_.tail(classes_); }

  VectorX<Scalar>& flat() { return params_; }
  const VectorX<Scalar>& flat() const { return params_; }

  bool all_finite() const { return params_.allFinite(); }
  bool same_shape(const Theta& other) const {
    return classes_ == other.classes_ && features_ == other.features_;
  }

 private:
  Index classes_;
  Index features_;
  VectorX<Scalar> params_;
};

template <typename Scalar>
struct LabeledExample {
  VectorX<Scalar> features;
  int label = 0;
};

/// A mini-batch: n rows of features, their labels, and the size N of the
/// dataset it was drawn from (the likelihood is rescaled by N/n).
template <typename Scalar>
struct Batch {
  MatrixX<Scalar> features;  // n x D
  Eigen::VectorXi labels;    // n
  Index dataset_size = 0;    // N

  Index size() const { return features.rows(); }
};

/// Gaussian prior N(0, variance * I) on every parameter.
template <typename Scalar>
struct PriorConfig {
  Scalar variance = 1;

  void validate() const {
    if (!(variance > 0) || !std::isfinite(variance)) {
      throw DimensionError("prior variance must be positive and finite");
    }
  }
  // -log p(theta) without the normalising constant.
  Scalar neg_log_density(const VectorX<Scalar>& params) const {
    return params.squaredNorm() / (2 * variance);
  }
};

/// Binary mask with its keep probability. Length D masks the inputs
/// (Dropout); length K*D masks the weights row-major (DropConnect).
template <typename Scalar>
struct DropMask {
  VectorX<Scalar> mask;
  Scalar keep_prob = 1;

  Index size() const { return mask.size(); }
  // Survivors scaled by 1/keep_prob, so E[scaled()] is all ones.
  VectorX<Scalar> scaled() const { return mask / keep_prob; }
};

inline void check_keep_prob(double keep_prob) {
  if (!(keep_prob > 0.0 && keep_prob <= 1.0)) {
    throw DimensionError("keep_prob must lie in (0, 1], got " + std::to_string(keep_prob));
  }
}

/// Draws each entry independently as 1 with probability keep_prob.
/// keep_prob == 1 yields all ones without touching the generator.
template <typename Scalar, typename Generator>
DropMask<Scalar> sample_mask(Index length, Scalar keep_prob, Generator& gen) {
  check_keep_prob(static_cast<double>(keep_prob));
  if (length < 1) throw DimensionError("mask length must be positive");
  DropMask<Scalar> out{VectorX<Scalar>::Ones(length), keep_prob};
  if (keep_prob < 1) {
    std::bernoulli_distribution keep(static_cast<double>(keep_prob));
    for (Index i = 0; i < length; ++i) out.mask(i) = keep(gen) ? Scalar(1) : Scalar(0);
  }
  return out;
}

template <typename Scalar>
VectorX<Scalar> apply_dropout(const VectorX<Scalar>& x, const DropMask<Scalar>& mask) {
  if (x.size() != mask.size()) {
    throw DimensionError("dropout mask length " + std::to_string(mask.size()) +
                         " does not match feature length " + std::to_string(x.size()));
  }
  return x.cwiseProduct(mask.scaled());
}

template <typename Scalar>
Theta<Scalar> apply_dropconnect(const Theta<Scalar>& theta, const DropMask<Scalar>& mask) {
  if (mask.size() != theta.classes() * theta.features()) {
    throw DimensionError("dropconnect mask length " + std::to_string(mask.size()) +
                         " does not match K*D = " +
                         std::to_string(theta.classes() * theta.features()));
  }
  Theta<Scalar> out = theta;
  out.flat().head(mask.size()).array() *= mask.scaled().array();
  return out;
}

namespace detail {

template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& v) {
  const auto top = v.maxCoeff();
  return top + std::log((v.array() - top).exp().sum());
}

template <typename Scalar>
void check_finite_theta(const Theta<Scalar>& theta) {
  if (!theta.all_finite()) throw NonFiniteError("parameters contain NaN or Inf");
}

template <typename Scalar>
void check_example(const Theta<Scalar>& theta, const VectorX<Scalar>& x) {
  if (x.size() != theta.features()) {
    throw DimensionError("feature vector has length " + std::to_string(x.size()) +
                         ", model expects " + std::to_string(theta.features()));
  }
  if (!x.allFinite()) throw NonFiniteError("feature vector contains NaN or Inf");
  check_finite_theta(theta);
}

template <typename Scalar>
void check_labels(const Eigen::VectorXi& labels, Index classes) {
  for (Index i = 0; i < labels.size(); ++i) {
    if (labels(i) < 0 || labels(i) >= classes) {
      throw DimensionError("label " + std::to_string(labels(i)) + " outside [0, " +
                           std::to_string(classes) + ")");
    }
  }
}

enum class MaskKind { none, inputs, weights };

template <typename Scalar>
MaskKind classify_mask(const Theta<Scalar>& theta, const DropMask<Scalar>* mask) {
  if (mask == nullptr) return MaskKind::none;
  check_keep_prob(static_cast<double>(mask->keep_prob));
  if (mask->size() == theta.features()) return MaskKind::inputs;
  if (mask->size() == theta.classes() * theta.features()) return MaskKind::weights;
  throw DimensionError("mask length " + std::to_string(mask->size()) +
                       " matches neither D nor K*D");
}

// Shared kernel: returns scale * (-sum log p(y|x)) + prior term, and fills
// `grad` (same layout as theta) when non-null.
template <typename Scalar>
Scalar energy_kernel(const Theta<Scalar>& theta, const MatrixX<Scalar>& features,
                     const Eigen::VectorXi& labels, Scalar scale,
                     const PriorConfig<Scalar>& prior, const DropMask<Scalar>* mask,
                     Theta<Scalar>* grad) {
  if (features.rows() == 0) throw DimensionError("energy needs at least one example");
  if (features.cols() != theta.features()) {
    throw DimensionError("features have " + std::to_string(features.cols()) +
                         " columns, model expects " + std::to_string(theta.features()));
  }
  if (labels.size() != features.rows()) {
    throw DimensionError("label count does not match feature rows");
  }
  check_labels<Scalar>(labels, theta.classes());
  prior.validate();
  check_finite_theta(theta);
  const MaskKind kind = classify_mask(theta, mask);

  MatrixX<Scalar> masked_inputs;
  RowMatrixX<Scalar> masked_weights;
  if (kind == MaskKind::inputs) {
    masked_inputs = features * mask->scaled().asDiagonal();
  }
  if (kind == MaskKind::weights) {
    const VectorX<Scalar> scaled = mask->scaled();
    masked_weights = theta.weights().cwiseProduct(
        Eigen::Map<const RowMatrixX<Scalar>>(scaled.data(), theta.classes(), theta.features()));
  }
  const MatrixX<Scalar>& x = kind == MaskKind::inputs ? masked_inputs : features;

  MatrixX<Scalar> logits = kind == MaskKind::weights ? MatrixX<Scalar>(x * masked_weights.transpose())
                                                     : MatrixX<Scalar>(x * theta.weights().transpose());
  logits.rowwise() += theta.biases().transpose();
  const VectorX<Scalar> row_max = logits.rowwise().maxCoeff();
  logits.colwise() -= row_max;
  MatrixX<Scalar> expd = logits.array().exp();
  const VectorX<Scalar> sums = expd.rowwise().sum();

  Scalar log_lik = 0;
  for (Index i = 0; i < logits.rows(); ++i) log_lik += logits(i, labels(i)) - std::log(sums(i));
  const Scalar energy = -scale * log_lik + prior.neg_log_density(theta.flat());
  if (!std::isfinite(energy)) throw NonFiniteError("energy is not finite");

  if (grad != nullptr) {
    // expd becomes P - Y, the derivative of -log p w.r.t. the logits.
    expd.array().colwise() /= sums.array();
    for (Index i = 0; i < expd.rows(); ++i) expd(i, labels(i)) -= 1;
    Theta<Scalar> g(theta.classes(), theta.features());
    g.weights() = scale * (expd.transpose() * x);
    if (kind == MaskKind::weights) {
      const VectorX<Scalar> scaled = mask->scaled();
      g.flat().head(scaled.size()).array() *= scaled.array();
    }
    g.biases() = scale * expd.colwise().sum().transpose();
    g.flat() += theta.flat() / prior.variance;
    if (!g.all_finite()) throw NonFiniteError("energy gradient is not finite");
    *grad = std::move(g);
  }
  return energy;
}

template <typename Scalar>
void check_batch(const Batch<Scalar>& batch) {
  if (batch.size() == 0) throw DimensionError("batch is empty");
  if (batch.dataset_size < batch.size()) {
    throw DimensionError("batch dataset_size N must be at least the batch size n");
  }
}

}  // namespace detail

/// Class probabilities phi(theta, x), computed with max-logit subtraction.
template <typename Scalar>
VectorX<Scalar> softmax_probs(const Theta<Scalar>& theta, const VectorX<Scalar>& x) {
  detail::check_example(theta, x);
  VectorX<Scalar> logits = theta.weights() * x + theta.biases();
  logits.array() -= logits.maxCoeff();
  logits = logits.array().exp();
  return logits / logits.sum();
}

/// Row-wise class probabilities for an n x D feature block (n x K result).
template <typename Scalar>
MatrixX<Scalar> softmax_probs_rows(const Theta<Scalar>& theta, const MatrixX<Scalar>& features) {
  if (features.cols() != theta.features()) {
    throw DimensionError("features have " + std::to_string(features.cols()) +
                         " columns, model expects " + std::to_string(theta.features()));
  }
  detail::check_finite_theta(theta);
  MatrixX<Scalar> logits = features * theta.weights().transpose();
  logits.rowwise() += theta.biases().transpose();
  logits.colwise() -= logits.rowwise().maxCoeff();
  logits = logits.array().exp();
  logits.array().colwise() /= logits.rowwise().sum().array();
  return logits;
}

/// log phi_y(theta, x) via log-sum-exp.
template <typename Scalar>
Scalar log_likelihood(const Theta<Scalar>& theta, const LabeledExample<Scalar>& example) {
  detail::check_example(theta, example.features);
  if (example.label < 0 || example.label >= theta.classes()) {
    throw DimensionError("label outside [0, K)");
  }
  const VectorX<Scalar> logits = theta.weights() * example.features + theta.biases();
  return logits(example.label) - detail::log_sum_exp(logits);
}

/// U(theta) = -sum_d log p(d|theta) + |theta|^2 / (2 variance) over a full
/// dataset (constants independent of theta dropped).
template <typename Scalar>
Scalar potential_energy(const Theta<Scalar>& theta, const MatrixX<Scalar>& features,
                        const Eigen::VectorXi& labels, const PriorConfig<Scalar>& prior) {
  return detail::energy_kernel<Scalar>(theta, features, labels, Scalar(1), prior, nullptr, nullptr);
}

template <typename Scalar>
Theta<Scalar> grad_potential_energy(const Theta<Scalar>& theta, const MatrixX<Scalar>& features,
                                    const Eigen::VectorXi& labels,
                                    const PriorConfig<Scalar>& prior) {
  Theta<Scalar> grad(theta.classes(), theta.features());
  detail::energy_kernel<Scalar>(theta, features, labels, Scalar(1), prior, nullptr, &grad);
  return grad;
}

/// Mini-batch estimate of U: the batch log-likelihood is rescaled by N/n.
/// An optional mask is applied to the inputs (length D) or the weights
/// (length K*D) before the likelihood is evaluated.
template <typename Scalar>
Scalar stochastic_energy(const Theta<Scalar>& theta, const Batch<Scalar>& batch,
                         const PriorConfig<Scalar>& prior,
                         const DropMask<Scalar>* mask = nullptr) {
  detail::check_batch(batch);
  const Scalar scale = static_cast<Scalar>(batch.dataset_size) / static_cast<Scalar>(batch.size());
  return detail::energy_kernel<Scalar>(theta, batch.features, batch.labels, scale, prior, mask,
                                       nullptr);
}

template <typename Scalar>
Theta<Scalar> grad_stochastic_energy(const Theta<Scalar>& theta, const Batch<Scalar>& batch,
                                     const PriorConfig<Scalar>& prior,
                                     const DropMask<Scalar>* mask = nullptr) {
  detail::check_batch(batch);
  const Scalar scale = static_cast<Scalar>(batch.dataset_size) / static_cast<Scalar>(batch.size());
  Theta<Scalar> grad(theta.classes(), theta.features());
  detail::energy_kernel<Scalar>(theta, batch.features, batch.labels, scale, prior, mask, &grad);
  return grad;
}

/// Applies inverted dropout to every row of a batch.
template <typename Scalar>
Batch<Scalar> apply_dropout(const Batch<Scalar>& batch, const DropMask<Scalar>& mask) {
  if (batch.features.cols() != mask.size()) {
    throw DimensionError("dropout mask length does not match batch feature count");
  }
  Batch<Scalar> out{batch.features * mask.scaled().asDiagonal(), batch.labels, batch.dataset_size};
  return out;
}

}  // namespace drophmc

#include "drophmc/errors.hpp"
#include "drophmc/model.hpp"
#include "drophmc/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <optional>

using namespace drophmc;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using Eigen::VectorXi;

namespace {

Theta<double> two_class_theta() {
  Theta<double> t(2, 2);
  t.weights() << 1, 0, 0, 0;
  return t;
}

Theta<double> random_theta(Index k, Index d, Rng& rng, double scale = 0.5) {
  Theta<double> t(k, d);
  fill_normal(t.flat(), scale, rng);
  return t;
}

Batch<double> random_batch(Index n, Index k, Index d, Index dataset_size, Rng& rng) {
  Batch<double> b;
  b.features.resize(n, d);
  fill_normal(b.features, 1.0, rng);
  b.labels.resize(n);
  std::uniform_int_distribution<int> label(0, static_cast<int>(k) - 1);
  for (Index i = 0; i < n; ++i) b.labels(i) = label(rng);
  b.dataset_size = dataset_size;
  return b;
}

// Central differences of the stochastic energy, one coordinate at a time.
VectorXd numeric_gradient(const Theta<double>& theta, const Batch<double>& batch,
                          const PriorConfig<double>& prior, const DropMask<double>* mask,
                          double h = 1e-5) {
  VectorXd out(theta.size());
  for (Index i = 0; i < theta.size(); ++i) {
    Theta<double> up = theta;
    Theta<double> down = theta;
    up.flat()(i) += h;
    down.flat()(i) -= h;
    out(i) = (stochastic_energy(up, batch, prior, mask) - stochastic_energy(down, batch, prior, mask)) /
             (2 * h);
  }
  return out;
}

}  // namespace

TEST_CASE("theta shape") {
  CHECK_THROWS_AS(Theta<double>(1, 3), DimensionError);
  CHECK_THROWS_AS(Theta<double>(3, 0), DimensionError);
  Theta<double> t(3, 4);
  CHECK(t.size() == 15);
  t.weights()(1, 2) = 7;
  CHECK(t.flat()(1 * 4 + 2) == 7);
  t.biases()(2) = -1;
  CHECK(t.flat()(14) == -1);
  CHECK_THROWS_AS(Theta<double>::from_flat(3, 4, VectorXd::Zero(14)), DimensionError);
}

TEST_CASE("softmax of zero parameters is uniform") {
  Theta<double> t(10, 5);
  const VectorXd p = softmax_probs(t, VectorXd::LinSpaced(5, -3, 3).eval());
  for (Index k = 0; k < 10; ++k) CHECK(p(k) == doctest::Approx(0.1).epsilon(1e-15));
}

TEST_CASE("softmax two-class closed form") {
  const VectorXd p = softmax_probs(two_class_theta(), VectorXd::Ones(2).eval());
  const double e = std::exp(1.0);
  CHECK(std::abs(p(0) - e / (1 + e)) < 1e-15);
  CHECK(std::abs(p(1) - 1 / (1 + e)) < 1e-15);
  CHECK(std::abs(p(0) - 0.731059) < 1e-6);
  CHECK(std::abs(p(1) - 0.268941) < 1e-6);
}

TEST_CASE("softmax is shift invariant and normalized") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Theta<double> t = random_theta(6, 4, rng, 3.0);
    VectorXd x(4);
    fill_normal(x, 2.0, rng);
    const VectorXd p = softmax_probs(t, x);
    CHECK(std::abs(p.sum() - 1) < 1e-12);
    CHECK((p.array() >= 0).all());
    Theta<double> shifted = t;
    shifted.biases().array() += 5;
    const VectorXd q = softmax_probs(shifted, x);
    CHECK((p - q).lpNorm<Eigen::Infinity>() < 1e-14);
    Index a = 0, b = 0;
    p.maxCoeff(&a);
    q.maxCoeff(&b);
    CHECK(a == b);
  }
}

TEST_CASE("softmax input validation") {
  Theta<double> t(3, 2);
  CHECK_THROWS_AS(softmax_probs(t, VectorXd::Ones(3).eval()), DimensionError);
  VectorXd x = VectorXd::Ones(2);
  x(1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(softmax_probs(t, x), NonFiniteError);
  t.flat()(0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(softmax_probs(t, VectorXd::Ones(2).eval()), NonFiniteError);
}

TEST_CASE("softmax works in single precision") {
  Theta<float> t(2, 2);
  t.weights() << 1, 0, 0, 0;
  const Eigen::VectorXf p = softmax_probs(t, Eigen::VectorXf::Ones(2).eval());
  CHECK(p(0) == doctest::Approx(0.731059).epsilon(1e-6));
}

TEST_CASE("log likelihood") {
  SUBCASE("uniform") {
    Theta<double> t(10, 3);
    CHECK(log_likelihood(t, {VectorXd::Ones(3), 4}) == doctest::Approx(std::log(0.1)).epsilon(1e-15));
    CHECK(std::abs(log_likelihood(t, {VectorXd::Ones(3), 4}) + 2.302585) < 1e-6);
  }
  SUBCASE("closed form") {
    const double ll = log_likelihood(two_class_theta(), {VectorXd::Ones(2), 0});
    CHECK(std::abs(ll + std::log1p(std::exp(-1.0))) < 1e-15);
    CHECK(std::abs(ll + 0.313262) < 1e-6);
  }
  SUBCASE("matches softmax") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
      Theta<double> t = random_theta(4, 3, rng, 2.0);
      VectorXd x(3);
      fill_normal(x, 1.0, rng);
      const int y = trial % 4;
      CHECK(std::abs(std::exp(log_likelihood(t, {x, y})) - softmax_probs(t, x)(y)) < 1e-12);
      CHECK(log_likelihood(t, {x, y}) <= 0);
    }
  }
  SUBCASE("stable for large logits") {
    Theta<double> t(3, 1);
    t.weights() << 1000, -1000, 0;
    for (double x : {1.0, -1.0}) {
      for (int y = 0; y < 3; ++y) {
        const double ll = log_likelihood(t, {VectorXd::Constant(1, x), y});
        CHECK(std::isfinite(ll));
        CHECK(ll <= 0);
      }
    }
    CHECK(std::abs(log_likelihood(t, {VectorXd::Constant(1, 1.0), 1}) + 2000) < 1e-9);
  }
  SUBCASE("label out of range") {
    CHECK_THROWS_AS(log_likelihood(Theta<double>(3, 1), {VectorXd::Ones(1), 3}), DimensionError);
  }
}

TEST_CASE("potential energy") {
  const PriorConfig<double> prior{1.0};
  SUBCASE("zero parameters give N log K") {
    Rng rng(3);
    MatrixXd x(7, 4);
    fill_normal(x, 1.0, rng);
    VectorXi y(7);
    y << 0, 1, 2, 3, 4, 0, 1;
    CHECK(potential_energy(Theta<double>(5, 4), x, y, prior) == doctest::Approx(7 * std::log(5.0)));
  }
  SUBCASE("duplicating the data doubles the likelihood term") {
    Rng rng(4);
    const Theta<double> t = random_theta(3, 2, rng);
    MatrixXd x(5, 2);
    fill_normal(x, 1.0, rng);
    VectorXi y(5);
    y << 0, 1, 2, 1, 0;
    MatrixXd x2(10, 2);
    x2 << x, x;
    VectorXi y2(10);
    y2 << y, y;
    const double p = prior.neg_log_density(t.flat());
    const double single = potential_energy(t, x, y, prior) - p;
    CHECK((potential_energy(t, x2, y2, prior) - p) == doctest::Approx(2 * single).epsilon(1e-14));
  }
  SUBCASE("closed form") {
    MatrixXd x = MatrixXd::Ones(1, 2);
    VectorXi y = VectorXi::Zero(1);
    // -log(e / (1 + e)) + |theta|^2 / 2 with |theta|^2 = 1
    const double expected = std::log1p(std::exp(-1.0)) + 0.5;
    const double u = potential_energy(two_class_theta(), x, y, prior);
    CHECK(std::abs(u - expected) < 1e-15);
    CHECK(std::abs(u - 0.813262) < 1e-6);
  }
  SUBCASE("empty data") {
    CHECK_THROWS_AS(potential_energy(Theta<double>(2, 2), MatrixXd(0, 2), VectorXi(0), prior),
                    DimensionError);
  }
}

TEST_CASE("stochastic energy") {
  const PriorConfig<double> prior{2.0};
  Rng rng(8);
  const Theta<double> t = random_theta(3, 4, rng);
  SUBCASE("full batch equals potential energy") {
    Batch<double> b = random_batch(12, 3, 4, 12, rng);
    const double u = potential_energy(t, b.features, b.labels, prior);
    CHECK(std::abs(stochastic_energy(t, b, prior) - u) <= 1e-10 * std::abs(u));
  }
  SUBCASE("identity mask changes nothing") {
    Batch<double> b = random_batch(6, 3, 4, 60, rng);
    const DropMask<double> ones{VectorXd::Ones(4), 1.0};
    CHECK(stochastic_energy(t, b, prior, &ones) == stochastic_energy(t, b, prior));
  }
  SUBCASE("single example is rescaled by N") {
    Batch<double> b = random_batch(1, 3, 4, 10, rng);
    const double ll = log_likelihood(t, {b.features.row(0).transpose(), b.labels(0)});
    const double expected = -10 * ll + prior.neg_log_density(t.flat());
    CHECK(stochastic_energy(t, b, prior) == doctest::Approx(expected).epsilon(1e-13));
  }
  SUBCASE("mask dimension mismatch") {
    Batch<double> b = random_batch(4, 3, 4, 10, rng);
    const DropMask<double> bad{VectorXd::Ones(5), 0.5};
    CHECK_THROWS_AS(stochastic_energy(t, b, prior, &bad), DimensionError);
  }
  SUBCASE("batch larger than dataset") {
    Batch<double> b = random_batch(4, 3, 4, 3, rng);
    CHECK_THROWS_AS(stochastic_energy(t, b, prior), DimensionError);
  }
}

TEST_CASE("gradient matches finite differences") {
  const PriorConfig<double> prior{1.5};
  Rng rng(2024);
  int checked = 0;
  for (Index k : {2, 3, 10}) {
    for (Index d : {1, 4, 20}) {
      for (int variant = 0; variant < 3; ++variant) {
        CAPTURE(k);
        CAPTURE(d);
        CAPTURE(variant);
        const Theta<double> t = random_theta(k, d, rng);
        const Batch<double> b = random_batch(5, k, d, 40, rng);
        std::optional<DropMask<double>> mask;
        if (variant == 1) {
          mask = sample_mask<double>(d, 0.6, rng);
        } else if (variant == 2) {
          mask = sample_mask<double>(k * d, 0.7, rng);
        }
        const DropMask<double>* m = mask ? &*mask : nullptr;
        const VectorXd analytic = grad_stochastic_energy(t, b, prior, m).flat();
        const VectorXd numeric = numeric_gradient(t, b, prior, m);
        const double rel = (analytic - numeric).norm() / numeric.norm();
        CHECK(rel < 1e-6);
        ++checked;
      }
    }
  }
  CHECK(checked == 27);
}

TEST_CASE("bias gradient at zero parameters") {
  // theta = 0 makes the prior term vanish for any variance.
  const PriorConfig<double> prior{1e12};
  Batch<double> b;
  b.features = MatrixXd::Random(6, 3);
  b.labels.resize(6);
  b.labels << 0, 1, 2, 0, 1, 2;
  b.dataset_size = 30;
  const Theta<double> g = grad_stochastic_energy(Theta<double>(3, 3), b, prior);
  // -(N/n) sum_d (1[y = k] - 1/K) = -5 * (2 - 6/3) = 0 for a balanced batch
  for (Index k = 0; k < 3; ++k) CHECK(std::abs(g.biases()(k)) < 1e-12);

  b.labels << 0, 0, 0, 0, 1, 2;
  const Theta<double> g2 = grad_stochastic_energy(Theta<double>(3, 3), b, prior);
  CHECK(g2.biases()(0) == doctest::Approx(-5.0 * (4 - 2.0)));
  CHECK(g2.biases()(1) == doctest::Approx(-5.0 * (1 - 2.0)));
  CHECK(g2.biases()(2) == doctest::Approx(-5.0 * (1 - 2.0)));
}

TEST_CASE("dropped inputs leave only the prior in their weight column") {
  const PriorConfig<double> prior{0.5};
  Rng rng(17);
  const Theta<double> t = random_theta(4, 5, rng);
  const Batch<double> b = random_batch(8, 4, 5, 80, rng);
  DropMask<double> mask{VectorXd::Ones(5), 0.5};
  mask.mask(1) = 0;
  mask.mask(3) = 0;
  const Theta<double> g = grad_stochastic_energy(t, b, prior, &mask);
  for (Index j : {1, 3}) {
    for (Index k = 0; k < 4; ++k) CHECK(g.weights()(k, j) == t.weights()(k, j) / prior.variance);
  }
  // Without the prior the column is exactly zero.
  Theta<double> zero_w = t;
  zero_w.weights().col(1).setZero();
  const Theta<double> g0 = grad_stochastic_energy(zero_w, b, prior, &mask);
  CHECK(g0.weights().col(1).isZero(0));
}

TEST_CASE("sample mask") {
  Rng rng(1);
  SUBCASE("keep everything") {
    Rng before = rng;
    const auto m = sample_mask<double>(50, 1.0, rng);
    CHECK(m.mask.isOnes());
    CHECK(rng == before);
  }
  SUBCASE("fraction of ones") {
    const auto m = sample_mask<double>(100000, 0.5, rng);
    const double frac = m.mask.mean();
    CHECK(frac >= 0.49);
    CHECK(frac <= 0.51);
    CHECK(((m.mask.array() == 0) || (m.mask.array() == 1)).all());
  }
  SUBCASE("deterministic") {
    Rng a(99), b(99);
    CHECK(sample_mask<double>(1000, 0.3, a).mask == sample_mask<double>(1000, 0.3, b).mask);
  }
  SUBCASE("invalid keep probability") {
    CHECK_THROWS_AS(sample_mask<double>(5, 0.0, rng), DimensionError);
    CHECK_THROWS_AS(sample_mask<double>(5, 1.5, rng), DimensionError);
    CHECK_THROWS_AS(sample_mask<double>(5, -0.1, rng), DimensionError);
  }
}

TEST_CASE("apply dropout") {
  VectorXd x(2);
  x << 2, 4;
  CHECK(apply_dropout(x, DropMask<double>{VectorXd::Ones(2), 1.0}) == x);
  DropMask<double> m{VectorXd::Zero(2), 0.5};
  m.mask(0) = 1;
  const VectorXd out = apply_dropout(x, m);
  CHECK(out(0) == 4.0);
  CHECK(out(1) == 0.0);
  CHECK_THROWS_AS(apply_dropout(VectorXd::Ones(3).eval(), m), DimensionError);
}

TEST_CASE("inverted dropout is unbiased") {
  VectorXd x(3);
  x << 1.5, -2.0, 0.25;
  Rng rng(77);
  const int draws = 400000;
  for (double q : {0.2, 0.5, 0.9}) {
    VectorXd sum = VectorXd::Zero(3);
    for (int i = 0; i < draws; ++i) sum += apply_dropout(x, sample_mask<double>(3, q, rng));
    const VectorXd mean = sum / draws;
    for (Index j = 0; j < 3; ++j) {
      CAPTURE(q);
      CHECK(std::abs(mean(j) - x(j)) <= 0.01 * std::abs(x(j)));
    }
  }
}

TEST_CASE("apply dropconnect") {
  Theta<double> t(2, 2);
  t.weights() << 3, 1, -2, 5;
  t.biases() << 0.5, -0.5;
  CHECK(apply_dropconnect(t, DropMask<double>{VectorXd::Ones(4), 1.0}).flat() == t.flat());

  const Theta<double> zeroed = apply_dropconnect(t, DropMask<double>{VectorXd::Zero(4), 0.5});
  CHECK(zeroed.weights().isZero(0));
  CHECK(zeroed.biases() == t.biases());
  VectorXd x(2);
  x << 10, -7;
  Theta<double> bias_only(2, 2);
  bias_only.biases() = t.biases();
  CHECK((softmax_probs(zeroed, x) - softmax_probs(bias_only, x)).norm() < 1e-15);

  DropMask<double> m{VectorXd::Ones(4), 0.75};
  CHECK(apply_dropconnect(t, m).weights()(0, 0) == doctest::Approx(4.0).epsilon(1e-15));
  CHECK_THROWS_AS(apply_dropconnect(t, DropMask<double>{VectorXd::Ones(2), 1.0}), DimensionError);
}

#include "drophmc/errors.hpp"
#include "drophmc/predict.hpp"
#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace drophmc;
using drophmc::testing::blobs;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using Eigen::VectorXi;

namespace {

PosteriorSamples samples_from(Index k, Index d, const std::vector<VectorXd>& draws) {
  PosteriorSamples s;
  s.classes = k;
  s.features = d;
  s.draws = draws;
  for (std::size_t i = 0; i < draws.size(); ++i) s.iterations.push_back(static_cast<std::int64_t>(i));
  return s;
}

VectorXd bias_draw(double b0, double b1) {
  Theta<double> t(2, 1);
  t.biases() << b0, b1;
  return t.flat();
}

PosteriorSamples random_samples(Index k, Index d, int count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<VectorXd> draws;
  for (int i = 0; i < count; ++i) {
    VectorXd v(k * d + k);
    fill_normal(v, 1.0, rng);
    draws.push_back(v);
  }
  return samples_from(k, d, draws);
}

PredictOptions last(Index s) {
  PredictOptions o;
  o.draws = s;
  return o;
}

}  // namespace

TEST_CASE("draw selection") {
  CHECK(select_draws(100, last(30)).front() == 70);
  CHECK(select_draws(100, last(30)).back() == 99);
  CHECK(select_draws(100, last(30)).size() == 30);
  PredictOptions strided = last(4);
  strided.selection = DrawSelection::strided;
  strided.stride = 10;
  CHECK(select_draws(100, strided) == std::vector<Index>{69, 79, 89, 99});
  CHECK_THROWS_AS(select_draws(29, last(30)), ConfigError);
  CHECK(select_draws(31, strided).front() == 0);
  CHECK_THROWS_AS(select_draws(30, strided), ConfigError);
  CHECK_THROWS_AS(select_draws(10, last(0)), ConfigError);
}

TEST_CASE("predictive distribution") {
  SUBCASE("one draw equals its softmax") {
    const PosteriorSamples s = random_samples(3, 2, 5, 1);
    MatrixXd x = MatrixXd::Random(4, 2);
    const auto pred = predictive_distribution(s, x, last(1));
    CHECK((pred.mean - softmax_probs_rows(s.theta(4), x)).norm() == 0.0);
    CHECK(pred.draws == 1);
    CHECK(pred.stddev.isZero(0));
  }
  SUBCASE("identical draws") {
    const PosteriorSamples one = random_samples(4, 3, 1, 2);
    const PosteriorSamples many = samples_from(4, 3, std::vector<VectorXd>(6, one.draws[0]));
    MatrixXd x = MatrixXd::Random(5, 3);
    const auto pred = predictive_distribution(many, x, last(6));
    CHECK((pred.mean - softmax_probs_rows(one.theta(0), x)).norm() < 1e-15);
  }
  SUBCASE("opposite confident draws average to one half") {
    const PosteriorSamples s = samples_from(2, 1, {bias_draw(1000, 0), bias_draw(0, 1000)});
    const auto pred = predictive_distribution(s, MatrixXd::Ones(1, 1), last(2));
    CHECK(pred.mean(0, 0) == 0.5);
    CHECK(pred.mean(0, 1) == 0.5);
    CHECK(pred.stddev(0, 0) == doctest::Approx(0.5));
  }
  SUBCASE("rows are distributions") {
    const PosteriorSamples s = random_samples(10, 5, 30, 3);
    MatrixXd x(50, 5);
    Rng rng(4);
    fill_normal(x, 3.0, rng);
    const auto pred = predictive_distribution(s, x, last(30));
    CHECK((pred.mean.rowwise().sum().array() - 1).abs().maxCoeff() < 1e-10);
  }
  SUBCASE("shape and draw errors") {
    const PosteriorSamples s = random_samples(3, 2, 5, 1);
    CHECK_THROWS_AS(predictive_distribution(s, MatrixXd::Ones(2, 3), last(1)), DimensionError);
    CHECK_THROWS_AS(predictive_distribution(s, MatrixXd::Ones(2, 2), last(6)), ConfigError);
  }
  SUBCASE("optional masks at prediction") {
    const PosteriorSamples s = random_samples(3, 4, 10, 5);
    MatrixXd x = MatrixXd::Random(20, 4);
    PredictOptions o = last(10);
    o.mask_at_prediction = true;
    o.keep_prob = 0.5;
    const auto a = predictive_distribution(s, x, o);
    const auto b = predictive_distribution(s, x, o);
    CHECK(a.mean == b.mean);
    CHECK((a.mean - predictive_distribution(s, x, last(10)).mean).norm() > 1e-6);
    CHECK((a.mean.rowwise().sum().array() - 1).abs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("evaluate") {
  SUBCASE("perfect predictor") {
    PredictiveDistribution pred;
    pred.mean = MatrixXd::Zero(6, 3);
    VectorXi y(6);
    y << 0, 1, 2, 2, 1, 0;
    for (Index i = 0; i < 6; ++i) pred.mean(i, y(i)) = 1.0;
    pred.stddev = MatrixXd::Zero(6, 3);
    pred.draws = 1;
    const EvalReport r = evaluate(pred, y);
    CHECK(r.total_accuracy == 1.0);
    CHECK(r.confusion.isIdentity(0));
    CHECK(r.mean_entropy == 0.0);
    CHECK(r.per_class_accuracy.isOnes());
  }
  SUBCASE("uniform predictor") {
    PredictiveDistribution pred;
    pred.mean = MatrixXd::Constant(20, 10, 0.1);
    VectorXi y(20);
    for (Index i = 0; i < 20; ++i) y(i) = static_cast<int>(i % 10 == 0 ? 0 : i % 7);
    const EvalReport r = evaluate(pred, y);
    CHECK(std::abs(r.mean_entropy - std::log(10.0)) < 1e-12);
    CHECK(std::abs(r.mean_entropy - 2.302585) < 1e-6);
    const double freq0 = double((y.array() == 0).count()) / 20.0;
    CHECK(r.total_accuracy == doctest::Approx(freq0));
    CHECK((r.predicted.array() == 0).all());
  }
  SUBCASE("confusion, probability matrix and entropies") {
    PredictiveDistribution pred;
    pred.mean.resize(4, 2);
    pred.mean << 0.9, 0.1, 0.4, 0.6, 0.2, 0.8, 0.3, 0.7;
    VectorXi y(4);
    y << 0, 0, 1, 1;
    const EvalReport r = evaluate(pred, y);
    CHECK(r.total_accuracy == 0.75);
    CHECK(r.confusion(0, 0) == 0.5);
    CHECK(r.confusion(0, 1) == 0.5);
    CHECK(r.confusion(1, 1) == 1.0);
    CHECK(r.probability_matrix(0, 0) == doctest::Approx(0.65));
    CHECK(r.probability_matrix(1, 1) == doctest::Approx(0.75));
    CHECK(r.mean_entropy_incorrect == doctest::Approx(entropy((VectorXd(2) << 0.4, 0.6).finished())));
    CHECK(r.correct == 3);
  }
  SUBCASE("invariants on random predictions") {
    const PosteriorSamples s = random_samples(5, 3, 30, 8);
    MatrixXd x = MatrixXd::Random(200, 3) * 2;
    VectorXi y(200);
    for (Index i = 0; i < 200; ++i) y(i) = static_cast<int>((i * 7) % 5);
    const auto pred = predictive_distribution(s, x, last(30));
    const EvalReport r = evaluate(pred, y);
    CHECK((r.confusion.rowwise().sum().array() - 1).abs().maxCoeff() < 1e-10);
    CHECK((r.probability_matrix.rowwise().sum().array() - 1).abs().maxCoeff() < 1e-10);
    double weighted = 0;
    for (Index k = 0; k < 5; ++k) weighted += r.confusion(k, k) * r.class_counts(k) / 200.0;
    CHECK(std::abs(weighted - r.total_accuracy) < 1e-12);
    CHECK(r.total_accuracy >= 0);
    CHECK(r.total_accuracy <= 1);
    CHECK((r.entropy.array() >= 0).all());
    CHECK((r.entropy.array() <= std::log(5.0) + 1e-12).all());
  }
  SUBCASE("ties go to the lowest index") {
    PredictiveDistribution pred;
    pred.mean.resize(1, 3);
    pred.mean << 0.2, 0.4, 0.4;
    CHECK(evaluate(pred, VectorXi::Constant(1, 2)).predicted(0) == 1);
  }
  SUBCASE("errors") {
    PredictiveDistribution pred;
    pred.mean = MatrixXd::Constant(2, 2, 0.5);
    CHECK_THROWS_AS(evaluate(pred, VectorXi::Zero(3)), DimensionError);
    CHECK_THROWS_AS(evaluate(pred, VectorXi::Constant(2, 2)), DimensionError);
  }
}

TEST_CASE("chain aggregates") {
  const ChainAggregate a = aggregate_accuracies({0.90, 0.92});
  CHECK(a.mean == doctest::Approx(0.91));
  CHECK(a.stddev == doctest::Approx(0.01));
  CHECK(a.count == 2);
  CHECK(aggregate_accuracies({0.8, 0.8, 0.8}).stddev < 1e-15);
  CHECK(aggregate_accuracies({0.7}).stddev == 0.0);
  CHECK_THROWS_AS(aggregate_accuracies({}), ConfigError);
  std::vector<double> v{0.91, 0.88, 0.95, 0.90, 0.93};
  const ChainAggregate base = aggregate_accuracies(v);
  std::sort(v.begin(), v.end());
  do {
    const ChainAggregate p = aggregate_accuracies(v);
    CHECK(p.mean == doctest::Approx(base.mean).epsilon(1e-15));
    CHECK(p.stddev == doctest::Approx(base.stddev).epsilon(1e-12));
  } while (std::next_permutation(v.begin(), v.end()));

  EvalReport r1, r2;
  r1.total_accuracy = 0.5;
  r2.total_accuracy = 0.7;
  CHECK(aggregate_chains({r1, r2}).mean == doctest::Approx(0.6));
}

TEST_CASE("per-example report") {
  const PosteriorSamples s = random_samples(3, 2, 8, 9);
  MatrixXd x = MatrixXd::Random(10, 2);
  VectorXi y = VectorXi::LinSpaced(10, 0, 9).unaryExpr([](int i) { return i % 3; });
  const auto pred = predictive_distribution(s, x, last(8));
  const EvalReport r = evaluate(pred, y);
  std::vector<Index> all(10);
  for (Index i = 0; i < 10; ++i) all[i] = i;
  const auto rows = per_example_report(pred, y, all);
  REQUIRE(rows.size() == 10);
  for (Index i = 0; i < 10; ++i) {
    CHECK(rows[i].label == r.labels(i));
    CHECK(rows[i].predicted == r.predicted(i));
    CHECK(rows[i].probabilities == r.probabilities.row(i).transpose());
    CHECK(rows[i].draws == 8);
    if (rows[i].predicted == rows[i].label) {
      CHECK(rows[i].probabilities(rows[i].label) == rows[i].probabilities.maxCoeff());
    }
  }
  CHECK_THROWS_AS(per_example_report(pred, y, {10}), DimensionError);
}

TEST_CASE("test whitening modes") {
  const Dataset train = blobs(50, 2, 3, 1);
  const Dataset test = blobs(30, 2, 3, 2);
  const TestSet none = prepare_test_set(test, TestWhitening::none, 10);
  CHECK(none.features == MatrixXd(test.features));
  const TestSet batch = prepare_test_set(test, TestWhitening::per_batch, 10);
  CHECK((batch.features.topRows(10) - whiten_batch(MatrixXd(test.features).topRows(10))).norm() < 1e-14);
  const TestSet global = prepare_test_set(test, TestWhitening::train_stats, 10, &train);
  CHECK((global.features - standardize(test.features, compute_feature_stats(train.features))).norm() == 0);
  CHECK_THROWS_AS(prepare_test_set(test, TestWhitening::train_stats, 10), ConfigError);
  CHECK(parse_test_whitening("batch") == TestWhitening::per_batch);
  CHECK_THROWS_AS(parse_test_whitening("zca"), ConfigError);
}

TEST_CASE("sensitivity sweep") {
  const Dataset train = blobs(60, 3, 2, 3);
  const TestSet test = prepare_test_set(blobs(30, 3, 2, 4), TestWhitening::per_batch, 10);
  SamplerSettings base;
  base.algorithm = Algorithm::sghmc;
  base.sg.batch_size = 10;
  base.sg.step_size = 1e-3;
  base.chain.warmup = 10;
  base.chain.epochs = 10;
  base.chain.seed = 5;
  PredictOptions opt = last(10);

  SUBCASE("q = 1 reduces to plain SGHMC") {
    const auto points = sensitivity_sweep(base, {1.0}, 2, train, test, opt);
    REQUIRE(points.size() == 1);
    std::vector<double> acc;
    for (const auto& s : run_chains(train, base, 2)) {
      acc.push_back(evaluate(predictive_distribution(s, test.features, opt), test.labels).total_accuracy);
    }
    CHECK(points[0].aggregate.accuracies == acc);
  }
  SUBCASE("deterministic table") {
    const auto a = sensitivity_sweep(base, {0.3, 0.7}, 1, train, test, opt);
    const auto b = sensitivity_sweep(base, {0.3, 0.7}, 1, train, test, opt);
    REQUIRE(a.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(a[i].keep_prob == b[i].keep_prob);
      CHECK(a[i].aggregate.accuracies == b[i].aggregate.accuracies);
      CHECK(a[i].aggregate.count == 1);
      CHECK(a[i].aggregate.stddev == 0.0);
    }
  }
  SUBCASE("failures are recorded and the sweep continues") {
    SamplerSettings wild = base;
    wild.sg.step_size = 1e3;
    wild.sg.friction = 0.01;
    const auto points = sensitivity_sweep(wild, {0.5, 1.0}, 1, train, test, opt);
    REQUIRE(points.size() == 2);
    for (const auto& p : points) {
      CHECK(p.failed_chains == 1);
      CHECK(p.aggregate.count == 0);
      CHECK(!p.error.empty());
    }
  }
  SUBCASE("invalid keep probability") {
    CHECK_THROWS(sensitivity_sweep(base, {0.0}, 1, train, test, opt));
  }
}

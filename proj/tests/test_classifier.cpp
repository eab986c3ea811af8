#include <catch_amalgamated.hpp>

#include <random>

#include "introspect/classifier.hpp"

using namespace introspect;

TEST_CASE("l2_normalize basics") {
  REQUIRE(l2_normalize({3.0, 4.0}) == std::vector<double>{0.6, 0.8});
  const std::vector<double> unit{0.0, 1.0};
  REQUIRE(l2_normalize(unit) == unit);
  const std::vector<double> zero{0.0, 0.0, 0.0};
  REQUIRE(l2_normalize(zero) == zero);
}

TEST_CASE("concat_normalized normalizes each part") {
  const auto v = concat_normalized({1.0, 0.0}, {0.0, 2.0});
  REQUIRE(v == std::vector<double>{1.0, 0.0, 0.0, 1.0});

  const auto z = concat_normalized({0.0, 0.0}, {0.0, 3.0});
  REQUIRE(z == std::vector<double>{0.0, 0.0, 0.0, 1.0});

  double norm = 0.0;
  for (double x : v) norm += x * x;
  REQUIRE(std::sqrt(norm) == Catch::Approx(std::sqrt(2.0)).margin(1e-12));
}

TEST_CASE("softmax values and invariances") {
  const auto sym = softmax({0.0, 0.0});
  REQUIRE(sym[0] == Catch::Approx(0.5).margin(1e-12));

  const auto two = softmax({1.0, 0.0});
  REQUIRE(two[0] == Catch::Approx(0.73106).margin(1e-5));
  REQUIRE(two[1] == Catch::Approx(0.26894).margin(1e-5));

  const auto a = softmax({0.3, -1.2, 2.0});
  const auto b = softmax({0.3 + 7.5, -1.2 + 7.5, 2.0 + 7.5});
  double sum = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i] == Catch::Approx(b[i]).margin(1e-12));
    sum += a[i];
  }
  REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));
}

namespace {

LinearClassifier identity_classifier(int c) {
  LinearClassifier clf;
  clf.num_classes = c;
  clf.feature_dim = c;
  clf.weights.assign(static_cast<size_t>(c) * c, 0.0);
  for (int i = 0; i < c; ++i) clf.weights[static_cast<size_t>(i) * c + i] = 1.0;
  clf.biases.assign(c, 0.0);
  clf.normalize_input = false;
  for (int i = 0; i < c; ++i) clf.class_names.push_back("c" + std::to_string(i));
  return clf;
}

}  // namespace

TEST_CASE("score with identity rows picks the hot coordinate") {
  const LinearClassifier clf = identity_classifier(4);
  std::vector<double> feat(4, 0.0);
  feat[2] = 1.0;
  REQUIRE(score(clf, feat).predicted == 2);
}

TEST_CASE("all-zero classifier ties break to class 0") {
  LinearClassifier clf = identity_classifier(3);
  std::fill(clf.weights.begin(), clf.weights.end(), 0.0);
  const ScoreVector sv = score(clf, {0.4, 0.1, -0.2});
  REQUIRE(sv.predicted == 0);
  for (double s : sv.scores) REQUIRE(s == 0.0);
}

TEST_CASE("score matches the brute-force dot product") {
  std::mt19937_64 rng(5);
  auto u = [&] { return (rng() >> 11) * (1.0 / 9007199254740992.0) * 2.0 - 1.0; };
  LinearClassifier clf;
  clf.num_classes = 5;
  clf.feature_dim = 9;
  clf.normalize_input = false;
  clf.weights.resize(45);
  clf.biases.resize(5);
  for (double& w : clf.weights) w = u();
  for (double& b : clf.biases) b = u();
  std::vector<double> feat(9);
  for (double& f : feat) f = u();
  const ScoreVector sv = score(clf, feat);
  for (int c = 0; c < 5; ++c) {
    double expect = clf.biases[c];
    for (int j = 0; j < 9; ++j) expect += clf.weights[c * 9 + j] * feat[j];
    REQUIRE(sv.scores[c] == Catch::Approx(expect).margin(1e-12));
  }
}

TEST_CASE("score dimension mismatch throws") {
  const LinearClassifier clf = identity_classifier(3);
  REQUIRE_THROWS_AS(score(clf, {1.0, 2.0}), ClassifierError);
}

TEST_CASE("normalized scoring is scale invariant") {
  LinearClassifier clf = identity_classifier(3);
  clf.normalize_input = true;
  const std::vector<double> v{0.2, -0.6, 0.9};
  std::vector<double> scaled = v;
  for (double& x : scaled) x *= 17.5;
  const ScoreVector a = score(clf, v);
  const ScoreVector b = score(clf, scaled);
  for (int c = 0; c < 3; ++c)
    REQUIRE(a.scores[c] == Catch::Approx(b.scores[c]).margin(1e-12));
}

namespace {

struct Toy {
  std::vector<std::vector<double>> xs;
  std::vector<int> ys;
};

// class 0 clustered at (-1, 0), class 1 at (+1, 0), +-0.1 jitter
Toy separable_toy() {
  Toy toy;
  std::mt19937_64 rng(3);
  auto jitter = [&] {
    return ((rng() >> 11) * (1.0 / 9007199254740992.0) * 2.0 - 1.0) * 0.1;
  };
  for (int i = 0; i < 10; ++i) {
    toy.xs.push_back({-1.0 + jitter(), jitter()});
    toy.ys.push_back(0);
    toy.xs.push_back({1.0 + jitter(), jitter()});
    toy.ys.push_back(1);
  }
  return toy;
}

int training_accuracy(const LinearClassifier& clf, const Toy& toy) {
  int correct = 0;
  for (size_t i = 0; i < toy.xs.size(); ++i)
    if (score(clf, toy.xs[i]).predicted == toy.ys[i]) ++correct;
  return correct;
}

}  // namespace

TEST_CASE("svm separates the 2d toy set") {
  const Toy toy = separable_toy();
  SvmConfig cfg;
  cfg.seed = 11;
  const LinearClassifier clf = train_svm(toy.xs, toy.ys, 2, cfg);
  REQUIRE(training_accuracy(clf, toy) == static_cast<int>(toy.xs.size()));

  // objective no worse than the zero solution, per class
  for (int c = 0; c < 2; ++c) {
    std::vector<int> ys(toy.ys.size());
    for (size_t i = 0; i < ys.size(); ++i) ys[i] = toy.ys[i] == c ? 1 : -1;
    std::vector<std::vector<double>> xs;
    for (const auto& x : toy.xs) xs.push_back(l2_normalize(x));
    const double j = detail::hinge_objective(clf.weight_row(c), clf.biases[c],
                                             cfg.lambda, xs, ys);
    REQUIRE(j <= 1.0 + 1e-12);
  }
}

TEST_CASE("svm training is bit deterministic") {
  const Toy toy = separable_toy();
  SvmConfig cfg;
  cfg.seed = 11;
  const LinearClassifier a = train_svm(toy.xs, toy.ys, 2, cfg);
  const LinearClassifier b = train_svm(toy.xs, toy.ys, 2, cfg);
  REQUIRE(a.weights == b.weights);
  REQUIRE(a.biases == b.biases);
}

TEST_CASE("single sample per class trains and classifies") {
  const std::vector<std::vector<double>> xs{{1.0, 0.0}, {0.0, 1.0}};
  const std::vector<int> ys{0, 1};
  SvmConfig cfg;
  cfg.seed = 2;
  const LinearClassifier clf = train_svm(xs, ys, 2, cfg);
  REQUIRE(score(clf, xs[0]).predicted == 0);
  REQUIRE(score(clf, xs[1]).predicted == 1);
}

TEST_CASE("svm rejects bad inputs") {
  SvmConfig cfg;
  REQUIRE_THROWS_AS(train_svm({{1.0}}, {0}, 2, cfg), ClassifierError);  // class 1 missing
  REQUIRE_THROWS_AS(
      train_svm({{std::numeric_limits<double>::quiet_NaN()}, {1.0}}, {0, 1}, 2, cfg),
      ClassifierError);
}

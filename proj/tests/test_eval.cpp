#include <catch_amalgamated.hpp>

#include <filesystem>

#include "introspect/eval.hpp"

using namespace introspect;

TEST_CASE("iou basics") {
  const Window a{0, 0, 2, 2};
  REQUIRE(iou(a, a) == 1.0);
  REQUIRE(iou(a, Window{10, 10, 2, 2}) == 0.0);
  REQUIRE(iou(a, Window{1, 1, 2, 2}) == Catch::Approx(1.0 / 7.0).margin(1e-12));
  REQUIRE(iou(Window{1, 1, 2, 2}, a) == Catch::Approx(1.0 / 7.0).margin(1e-12));
}

TEST_CASE("iou stays in range on fuzzed windows") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 300; ++i) {
    const Window a{static_cast<int>(rng() % 50), static_cast<int>(rng() % 50),
                   1 + static_cast<int>(rng() % 50),
                   1 + static_cast<int>(rng() % 50)};
    const Window b{static_cast<int>(rng() % 50), static_cast<int>(rng() % 50),
                   1 + static_cast<int>(rng() % 50),
                   1 + static_cast<int>(rng() % 50)};
    const double v = iou(a, b);
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 1.0);
    REQUIRE(iou(a, b) == iou(b, a));
  }
}

TEST_CASE("per-class stats and f-measure deltas") {
  // 2 classes, 4 samples: perfect vs half-right predictions
  const std::vector<int> truth{0, 0, 1, 1};
  EvalReport report;
  report.class_names = {"a", "b"};
  report.per_class["first"] = per_class_stats(truth, {0, 1, 0, 1}, 2);
  report.per_class["second"] = per_class_stats(truth, {0, 0, 1, 1}, 2);

  // identical predictions -> zero delta
  const auto zero = f_measure_delta(report, "first", "first");
  for (double d : zero) REQUIRE(d == 0.0);

  // P=R=0.5 vs P=R=1 -> delta 0.5
  const auto delta = f_measure_delta(report, "first", "second");
  REQUIRE(delta[0] == Catch::Approx(0.5).margin(1e-12));
  REQUIRE(delta[1] == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("f1 is zero when precision and recall vanish") {
  const auto stats = per_class_stats({0, 0, 1}, {1, 1, 0}, 2);
  REQUIRE(stats[0].f1 == 0.0);
  REQUIRE(stats[1].f1 == 0.0);
}

namespace {

ClassifierStack tiny_stack(bool identical_rows) {
  ClassifierStack stack;
  stack.extractor = make_filter_bank();
  stack.config.input_side = 64;
  LinearClassifier clf;
  clf.num_classes = 2;
  clf.feature_dim = 32;
  clf.normalize_input = false;
  clf.weights.assign(64, 0.0);
  clf.weights[0] = 1.0;  // |odd 0deg| luminance
  if (identical_rows)
    clf.weights[32] = 1.0;
  else
    clf.weights[32 + 2] = 1.0;  // |odd 90deg| luminance
  clf.biases.assign(2, 0.0);
  clf.class_names = {"a", "b"};
  stack.per_iteration.push_back(clf);
  stack.early_fusion.push_back(clf);
  stack.class_names = clf.class_names;
  return stack;
}

}  // namespace

TEST_CASE("identical weight rows give consistency IoU of exactly 1") {
  const ClassifierStack stack = tiny_stack(true);
  std::mt19937_64 rng(4);
  std::vector<Image> images;
  std::vector<int> labels;
  for (int i = 0; i < 4; ++i) {
    Image img(64, 64, 3);
    for (double& v : img.data)
      v = (rng() >> 11) * (1.0 / 9007199254740992.0);
    images.push_back(std::move(img));
    labels.push_back(i % 2);
  }
  REQUIRE(cam_consistency(stack, images, labels) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("disjoint planted activations give low consistency") {
  // class-a texture top-left, class-b texture bottom-right, far apart
  const ClassifierStack stack = tiny_stack(false);
  Image img(64, 64, 3, 0.5);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      const double s = 0.4 * std::sin(2.0 * 3.14159265 * x / 4.0);
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = 0.5 + s;  // vertical stripes
    }
  for (int y = 56; y < 64; ++y)
    for (int x = 56; x < 64; ++x) {
      const double s = 0.4 * std::sin(2.0 * 3.14159265 * y / 4.0);
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = 0.5 + s;  // horizontal
    }
  const double v = cam_consistency(stack, {img}, {0});
  // windows proposed at opposite corners of a 64px image with side ~45
  REQUIRE(v < 0.5);
}

TEST_CASE("report serialization includes every variant") {
  EvalReport r;
  r.test_size = 10;
  r.class_names = {"a", "b"};
  r.accuracy["baseline"] = 0.8;
  r.accuracy["early-accum"] = 0.9;
  r.per_class["baseline"] = per_class_stats({0, 1}, {0, 1}, 2);
  r.per_class["early-accum"] = per_class_stats({0, 1}, {0, 1}, 2);
  const auto j = report_to_json(r);
  REQUIRE(j.at("accuracy").at("baseline") == 0.8);
  REQUIRE(j.at("per_class").at("early-accum").size() == 2);
  const std::string text = report_to_text(r);
  REQUIRE(text.find("early-accum") != std::string::npos);
}

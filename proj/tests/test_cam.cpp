#include <catch_amalgamated.hpp>

#include <random>

#include "introspect/cam.hpp"

using namespace introspect;

namespace {

FeatureMap random_map(int h, int w, int k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  FeatureMap fm(h, w, k, 8, 8);
  for (double& v : fm.values)
    v = (rng() >> 11) * (1.0 / 9007199254740992.0) * 2.0 - 1.0;
  return fm;
}

std::vector<double> random_weights(int k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> w(k);
  for (double& v : w)
    v = (rng() >> 11) * (1.0 / 9007199254740992.0) * 2.0 - 1.0;
  return w;
}

}  // namespace

TEST_CASE("cam of a planted two-channel map") {
  FeatureMap fm(2, 2, 2, 8, 8);
  fm.at(0, 0, 0) = 1.0;  // f_1 = [1,0;0,0]
  fm.at(1, 1, 1) = 1.0;  // f_2 = [0,0;0,1]
  const ClassActivationMap m = compute_cam(fm, {1.0, -1.0}, 0);
  REQUIRE(m.at(0, 0) == 1.0);
  REQUIRE(m.at(1, 0) == 0.0);
  REQUIRE(m.at(0, 1) == 0.0);
  REQUIRE(m.at(1, 1) == -1.0);
}

TEST_CASE("zero weights give a zero map") {
  const FeatureMap fm = random_map(3, 3, 4, 1);
  const ClassActivationMap m = compute_cam(fm, {0, 0, 0, 0}, 0);
  for (double v : m.values) REQUIRE(v == 0.0);
}

TEST_CASE("mean of cam equals weights dot gap") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const FeatureMap fm = random_map(5, 7, 12, seed);
    const auto w = random_weights(12, seed + 100);
    const ClassActivationMap m = compute_cam(fm, w, 0);
    const GapFeature g = gap(fm);
    double dot = 0.0;
    for (int k = 0; k < 12; ++k) dot += w[k] * g.values[k];
    REQUIRE(m.mean() == Catch::Approx(dot).margin(1e-12));
  }
}

TEST_CASE("cam linearity in weights") {
  const FeatureMap fm = random_map(4, 4, 6, 77);
  const auto w1 = random_weights(6, 1), w2 = random_weights(6, 2);
  const double a = 0.4, b = -2.5;
  std::vector<double> mix(6);
  for (int k = 0; k < 6; ++k) mix[k] = a * w1[k] + b * w2[k];
  const auto m1 = compute_cam(fm, w1, 0), m2 = compute_cam(fm, w2, 0);
  const auto mm = compute_cam(fm, mix, 0);
  for (size_t i = 0; i < mm.values.size(); ++i)
    REQUIRE(mm.values[i] ==
            Catch::Approx(a * m1.values[i] + b * m2.values[i]).margin(1e-12));
}

TEST_CASE("decomposition residual behavior") {
  const FeatureMap fm = random_map(3, 4, 5, 13);
  const auto w = random_weights(5, 14);
  const ClassActivationMap m = compute_cam(fm, w, 0);
  const GapFeature g = gap(fm);
  double dot = 0.0;
  for (int k = 0; k < 5; ++k) dot += w[k] * g.values[k];
  REQUIRE(decomposition_residual(m, dot) <= 1e-9);
  REQUIRE(decomposition_residual(m, dot + 1.0) == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("find_peak tie break and coordinates") {
  ClassActivationMap m;
  m.h = m.w = 1;
  m.values = {0.5};
  m.window = Window{0, 0, 8, 8};
  m.stride_x = m.stride_y = 8;
  REQUIRE(find_peak(m).grid_x == 0);

  ClassActivationMap tie;
  tie.h = tie.w = 2;
  tie.values = {1.0, 0.0, 0.0, 1.0};
  tie.window = Window{0, 0, 16, 16};
  tie.stride_x = tie.stride_y = 8;
  const Peak p = find_peak(tie);
  REQUIRE(p.grid_x == 0);
  REQUIRE(p.grid_y == 0);

  ClassActivationMap planted;
  planted.h = planted.w = 5;
  planted.values.assign(25, 0.0);
  planted.values[2 * 5 + 3] = 2.0;  // (x=3, y=2)
  planted.window = Window{10, 20, 40, 40};
  planted.stride_x = planted.stride_y = 8;
  const Peak q = find_peak(planted);
  REQUIRE(q.image_x == 38);
  REQUIRE(q.image_y == 40);
}

TEST_CASE("peak cell invariant under positive weight rescaling") {
  const FeatureMap fm = random_map(6, 6, 8, 3);
  auto w = random_weights(8, 4);
  ClassActivationMap m1 = compute_cam(fm, w, 0);
  for (double& v : w) v *= 3.25;
  ClassActivationMap m2 = compute_cam(fm, w, 0);
  m1.window = m2.window = Window{0, 0, 48, 48};
  const Peak p1 = find_peak(m1), p2 = find_peak(m2);
  REQUIRE(p1.grid_x == p2.grid_x);
  REQUIRE(p1.grid_y == p2.grid_y);
  for (size_t i = 0; i < m1.values.size(); ++i)
    REQUIRE(m2.values[i] == Catch::Approx(3.25 * m1.values[i]).margin(1e-12));
}

TEST_CASE("propose_subwindow geometric mean arithmetic") {
  Peak peak;
  peak.image_x = 224;
  peak.image_y = 112;
  const Window parent{0, 0, 448, 224};
  const Window w =
      propose_subwindow(parent, peak, 1.0 / std::sqrt(2.0), 448, 224);
  REQUIRE(w.w == 224);
  REQUIRE(w.h == 224);

  Peak center;
  center.image_x = center.image_y = 64;
  const Window sq = propose_subwindow(Window{0, 0, 128, 128}, center,
                                      1.0 / std::sqrt(2.0), 128, 128);
  REQUIRE(sq.w == 91);
  REQUIRE(sq.h == 91);
}

TEST_CASE("corner peak translates flush without shrinking") {
  Peak corner;
  corner.image_x = corner.image_y = 0;
  const Window w = propose_subwindow(Window{0, 0, 128, 128}, corner,
                                     1.0 / std::sqrt(2.0), 128, 128);
  REQUIRE(w.x0 == 0);
  REQUIRE(w.y0 == 0);
  REQUIRE(w.w == 91);
}

TEST_CASE("fuzzed proposals stay in bounds and square") {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 500; ++i) {
    const int img_w = 16 + static_cast<int>(rng() % 500);
    const int img_h = 16 + static_cast<int>(rng() % 500);
    const int pw = 8 + static_cast<int>(rng() % (img_w - 8));
    const int ph = 8 + static_cast<int>(rng() % (img_h - 8));
    const Window parent{static_cast<int>(rng() % (img_w - pw + 1)),
                        static_cast<int>(rng() % (img_h - ph + 1)), pw, ph};
    Peak p;
    p.image_x = parent.x0 + static_cast<int>(rng() % parent.w);
    p.image_y = parent.y0 + static_cast<int>(rng() % parent.h);
    const double zoom = 0.3 + (rng() % 60) / 100.0;
    const Window w = propose_subwindow(parent, p, zoom, img_w, img_h, 8);
    REQUIRE(w.inside(img_w, img_h));
    REQUIRE(w.w == w.h);
  }
}

TEST_CASE("constant map renders mid gray") {
  ClassActivationMap m;
  m.h = m.w = 2;
  m.values.assign(4, 3.7);
  m.window = Window{0, 0, 16, 16};
  m.stride_x = m.stride_y = 8;
  const Image heat = render_heatmap(m);
  for (double v : heat.data) REQUIRE(v == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("alpha zero overlay equals the crop") {
  std::mt19937_64 rng(23);
  Image img(32, 32, 3);
  for (double& v : img.data) v = (rng() >> 11) * (1.0 / 9007199254740992.0);
  ClassActivationMap m;
  m.h = m.w = 2;
  m.values = {0.0, 1.0, 2.0, 3.0};
  m.window = Window{8, 8, 16, 16};
  m.stride_x = m.stride_y = 8;
  const Image overlay = render_overlay(m, img, 0.0);
  const Image base = crop(img, m.window);
  for (size_t i = 0; i < base.data.size(); ++i)
    REQUIRE(overlay.data[i] == Catch::Approx(base.data[i]).margin(1e-12));
}

TEST_CASE("maximum cell is pure red before blending") {
  ClassActivationMap m;
  m.h = m.w = 2;
  m.values = {0.0, 0.25, 0.5, 1.0};
  m.window = Window{0, 0, 16, 16};
  m.stride_x = m.stride_y = 8;
  Image img(16, 16, 3, 0.0);
  const Image overlay = render_overlay(m, img, 1.0);
  // bottom-right cell center
  REQUIRE(overlay.at(13, 13, 0) == Catch::Approx(1.0).margin(1e-9));
  REQUIRE(overlay.at(13, 13, 1) == Catch::Approx(0.0).margin(1e-9));
  REQUIRE(overlay.at(13, 13, 2) == Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("cam_for_class keeps the identity under input normalization") {
  const FeatureMap fm = random_map(4, 5, 8, 55);
  LinearClassifier clf;
  clf.num_classes = 2;
  clf.feature_dim = 8;
  clf.normalize_input = true;
  clf.weights = random_weights(16, 56);
  clf.biases = {0.3, -0.1};
  const ClassActivationMap m = cam_for_class(fm, clf, 1);
  const ScoreVector sv = score(clf, gap(fm).values);
  REQUIRE(decomposition_residual(m, sv.scores[1] - clf.biases[1]) <= 1e-9);
}

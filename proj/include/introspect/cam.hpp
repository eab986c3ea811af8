#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "introspect/classifier.hpp"
#include "introspect/featurizer.hpp"
#include "introspect/raster.hpp"

namespace introspect {

struct CamError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Per-class activation grid over one image window. stride_x/stride_y are
// pixels per cell in the ORIGINAL image frame (they fold in any resize the
// featurizer input went through; both equal the extractor stride when the
// window was featurized at native resolution).
struct ClassActivationMap {
  int h = 0;
  int w = 0;
  int class_id = 0;
  std::vector<double> values;  // row-major
  Window window;
  double stride_x = 1.0;
  double stride_y = 1.0;

  double& at(int x, int y) { return values[static_cast<size_t>(y) * w + x]; }
  double at(int x, int y) const {
    return values[static_cast<size_t>(y) * w + x];
  }

  double mean() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s / values.size();
  }
};

struct Peak {
  int grid_x = 0;
  int grid_y = 0;
  int image_x = 0;  // original-image frame
  int image_y = 0;
  double value = 0.0;
};

// M_c(x,y) = sum_k w_k f_k(x,y); the map's mean over cells equals w . gap(fm).
inline ClassActivationMap compute_cam(const FeatureMap& fm,
                                      const std::vector<double>& weights,
                                      int class_id) {
  if (static_cast<int>(weights.size()) != fm.k)
    throw CamError("compute_cam: weight length " +
                   std::to_string(weights.size()) + " != feature channels " +
                   std::to_string(fm.k));
  ClassActivationMap cam;
  cam.h = fm.h;
  cam.w = fm.w;
  cam.class_id = class_id;
  cam.stride_x = cam.stride_y = fm.stride;
  cam.window = Window{0, 0, fm.w * fm.stride, fm.h * fm.stride};
  cam.values.assign(static_cast<size_t>(fm.h) * fm.w, 0.0);
  for (int y = 0; y < fm.h; ++y)
    for (int x = 0; x < fm.w; ++x) {
      double acc = 0.0;
      for (int k = 0; k < fm.k; ++k) acc += weights[k] * fm.at(x, y, k);
      cam.at(x, y) = acc;
    }
  return cam;
}

// |mean(M) - (S_c - b_c)|, the score-decomposition self check.
inline double decomposition_residual(const ClassActivationMap& cam,
                                     double score_minus_bias) {
  return std::fabs(cam.mean() - score_minus_bias);
}

// Global argmax cell, ties broken by smallest row-major index, mapped to
// original-image pixels through the map's window and stride.
inline Peak find_peak(const ClassActivationMap& cam) {
  if (cam.values.empty()) throw CamError("find_peak: empty map");
  size_t best = 0;
  for (size_t i = 1; i < cam.values.size(); ++i)
    if (cam.values[i] > cam.values[best]) best = i;
  Peak p;
  p.grid_x = static_cast<int>(best % cam.w);
  p.grid_y = static_cast<int>(best / cam.w);
  p.value = cam.values[best];
  p.image_x = cam.window.x0 +
              static_cast<int>(std::lround((p.grid_x + 0.5) * cam.stride_x));
  p.image_y = cam.window.y0 +
              static_cast<int>(std::lround((p.grid_y + 0.5) * cam.stride_y));
  return p;
}

// Square sub-window of side round(zoom * sqrt(parent area)) centered at the
// peak, translated (never shrunk) into image bounds, side clamped to
// [min_side, min(img_w, img_h)].
inline Window propose_subwindow(const Window& parent, const Peak& peak,
                                double zoom, int img_w, int img_h,
                                int min_side = 1) {
  if (zoom <= 0.0 || zoom >= 1.0)
    throw CamError("propose_subwindow: zoom must lie in (0,1)");
  int side = static_cast<int>(std::lround(
      zoom * std::sqrt(static_cast<double>(parent.w) * parent.h)));
  side = std::max(side, min_side);
  side = std::min(side, std::min(img_w, img_h));
  int x0 = peak.image_x - side / 2;
  int y0 = peak.image_y - side / 2;
  x0 = std::clamp(x0, 0, img_w - side);
  y0 = std::clamp(y0, 0, img_h - side);
  return Window{x0, y0, side, side};
}

namespace detail {

// 3-stop colormap: blue -> yellow -> red at normalized 0 / 0.5 / 1.
inline void colormap3(double t, double& r, double& g, double& b) {
  t = std::clamp(t, 0.0, 1.0);
  if (t < 0.5) {
    const double u = t * 2.0;
    r = u;
    g = u;
    b = 1.0 - u;
  } else {
    const double u = (t - 0.5) * 2.0;
    r = 1.0;
    g = 1.0 - u;
    b = 0.0;
  }
}

inline std::vector<double> normalized_grid(const ClassActivationMap& cam) {
  const auto [mn, mx] = std::minmax_element(cam.values.begin(), cam.values.end());
  std::vector<double> out(cam.values.size(), 0.5);
  if (*mx - *mn > 1e-15)
    for (size_t i = 0; i < out.size(); ++i)
      out[i] = (cam.values[i] - *mn) / (*mx - *mn);
  return out;
}

}  // namespace detail

// Min-max normalized map, bilinearly upsampled to the window size. A constant
// map renders as uniform mid-gray.
inline Image render_heatmap(const ClassActivationMap& cam) {
  Image grid(cam.w, cam.h, 1);
  grid.data = detail::normalized_grid(cam);
  return resize_bilinear(grid, cam.window.w, cam.window.h);
}

// Colormapped heatmap blended over the window crop with weight alpha.
inline Image render_overlay(const ClassActivationMap& cam, const Image& img,
                            double alpha = 0.5) {
  if (!cam.window.inside(img.width, img.height))
    throw CamError("render_overlay: image does not cover the map's window");
  const Image base = crop(img, cam.window);
  const Image heat = render_heatmap(cam);
  Image out(base.width, base.height, 3);
  for (int y = 0; y < base.height; ++y)
    for (int x = 0; x < base.width; ++x) {
      double r, g, b;
      detail::colormap3(heat.at(x, y, 0), r, g, b);
      const double br = base.channels == 3 ? base.at(x, y, 0) : base.at(x, y, 0);
      const double bg = base.channels == 3 ? base.at(x, y, 1) : base.at(x, y, 0);
      const double bb = base.channels == 3 ? base.at(x, y, 2) : base.at(x, y, 0);
      out.at(x, y, 0) = (1.0 - alpha) * br + alpha * r;
      out.at(x, y, 1) = (1.0 - alpha) * bg + alpha * g;
      out.at(x, y, 2) = (1.0 - alpha) * bb + alpha * b;
    }
  return out;
}

// CAM for a classifier class. When the classifier consumes l2-normalized
// features the map is computed on the identically rescaled tensor, so the
// mean-of-cells identity against S_c - b_c holds either way.
inline ClassActivationMap cam_for_class(const FeatureMap& fm,
                                        const LinearClassifier& clf,
                                        int class_id) {
  ClassActivationMap cam = compute_cam(fm, clf.weight_row(class_id), class_id);
  if (clf.normalize_input) {
    const GapFeature g = gap(fm);
    double sq = 0.0;
    for (double v : g.values) sq += v * v;
    const double norm = std::sqrt(sq);
    if (norm > 1e-12)
      for (double& v : cam.values) v /= norm;
  }
  return cam;
}

}  // namespace introspect

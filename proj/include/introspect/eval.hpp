#pragma once

#include <cmath>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "introspect/cam.hpp"
#include "introspect/explorer.hpp"
#include "introspect/parallel.hpp"
#include "introspect/trainkit.hpp"

namespace introspect {

struct EvalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline double iou(const Window& a, const Window& b) {
  const int x0 = std::max(a.x0, b.x0);
  const int y0 = std::max(a.y0, b.y0);
  const int x1 = std::min(a.x0 + a.w, b.x0 + b.w);
  const int y1 = std::min(a.y0 + a.h, b.y0 + b.h);
  const double inter = std::max(0, x1 - x0) * static_cast<double>(std::max(0, y1 - y0));
  const double uni = static_cast<double>(a.w) * a.h + static_cast<double>(b.w) * b.h - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

struct ClassStats {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int support = 0;
};

struct EvalReport {
  std::map<std::string, double> accuracy;  // variant -> overall accuracy
  std::map<std::string, std::vector<ClassStats>> per_class;
  std::vector<std::string> class_names;
  int test_size = 0;
  double localization_hit_rate = -1.0;          // all test images
  double localization_hit_rate_correct = -1.0;  // root-correct subset
  double cam_consistency_mean = -1.0;
  double random_window_iou_mean = -1.0;
};

inline std::vector<ClassStats> per_class_stats(const std::vector<int>& truth,
                                               const std::vector<int>& pred,
                                               int num_classes) {
  std::vector<int> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  for (size_t i = 0; i < truth.size(); ++i) {
    if (pred[i] == truth[i])
      tp[truth[i]]++;
    else {
      fp[pred[i]]++;
      fn[truth[i]]++;
    }
  }
  std::vector<ClassStats> out(num_classes);
  for (int c = 0; c < num_classes; ++c) {
    const double p = tp[c] + fp[c] > 0 ? static_cast<double>(tp[c]) / (tp[c] + fp[c]) : 0.0;
    const double r = tp[c] + fn[c] > 0 ? static_cast<double>(tp[c]) / (tp[c] + fn[c]) : 0.0;
    out[c].precision = p;
    out[c].recall = r;
    out[c].f1 = p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
    out[c].support = tp[c] + fn[c];
  }
  return out;
}

// Per-class F1(b) - F1(a) between two evaluated variants.
inline std::vector<double> f_measure_delta(const EvalReport& report,
                                           const std::string& variant_a,
                                           const std::string& variant_b) {
  const auto ia = report.per_class.find(variant_a);
  const auto ib = report.per_class.find(variant_b);
  if (ia == report.per_class.end() || ib == report.per_class.end())
    throw EvalError("f_measure_delta: variant not present in report");
  std::vector<double> out(ia->second.size());
  for (size_t c = 0; c < out.size(); ++c)
    out[c] = ib->second[c].f1 - ia->second[c].f1;
  return out;
}

namespace detail {

struct PerImageEval {
  int truth = 0;
  std::map<std::string, int> pred;   // variant -> predicted class
  Peak root_peak;                    // top-1 CAM peak, original frame
  double consistency_iou = -1.0;     // true vs top non-true CAM window
  double random_iou = -1.0;          // control with uniform random peaks
  std::string error;
};

}  // namespace detail

struct EvalOptions {
  int iterations = 0;        // 0 = stack config
  GuidePolicy policy = GuidePolicy::Cam;
  std::uint64_t seed = 0;    // random-policy exploration and IoU control
  bool with_consistency = true;
};

// Run every fusion variant over the test split of `manifest`.
inline EvalReport evaluate(const ClassifierStack& stack,
                           const DatasetManifest& manifest,
                           const EvalOptions& opt = {}) {
  const auto test = manifest.split("test");
  if (test.empty()) throw EvalError("evaluate: empty test split");
  const int num_classes = static_cast<int>(manifest.class_names.size());

  ExploreConfig cfg = stack.config;
  if (opt.iterations > 0) cfg.iterations = opt.iterations;
  cfg.policy = opt.policy;
  const int T = cfg.iterations;
  if (static_cast<int>(stack.per_iteration.size()) < T)
    throw EvalError("evaluate: stack too shallow for requested iterations");

  // same-classifier ablation: iteration-0 classifier reused at every depth
  std::vector<LinearClassifier> same_stack(T, stack.per_iteration[0]);

  std::vector<detail::PerImageEval> results(test.size());
  parallel_for(test.size(), [&](size_t i) {
    auto& r = results[i];
    try {
      r.truth = manifest.class_index(test[i]->label);
      const Image img = read_ppm(test[i]->path);
      ExploreConfig icfg = cfg;
      icfg.seed = cfg.seed ^ (opt.seed + 0x9e3779b97f4a7c15ull * (i + 1));
      const ExplorationTree tree =
          explore(img, stack.per_iteration, stack.extractor, icfg);
      const Route route = select_route(tree);
      r.pred["baseline"] = route.steps[0].scores.predicted;
      for (size_t t = 0; t < route.steps.size(); ++t)
        r.pred["iter-" + std::to_string(t)] = route.steps[t].scores.predicted;
      r.pred["late"] = fuse_late(route).predicted;
      r.pred["early"] =
          fuse_early(route, stack.early_fusion[route.length() - 1]).predicted;
      r.pred["early-accum"] = fuse_early_accum(route, stack.early_fusion).predicted;
      const ExplorationTree same_tree =
          explore(img, same_stack, stack.extractor, icfg);
      r.pred["same-classifier"] = fuse_late(select_route(same_tree)).predicted;

      // root-level introspection geometry for localization / consistency
      const Image resized =
          resize_smaller_side(img, cfg.input_side, cfg.preserve_aspect);
      const FeatureMap fm = extract(stack.extractor, resized);
      const LinearClassifier& e0 = stack.per_iteration[0];
      const ScoreVector root_scores = score(e0, gap(fm).values);
      const Window full{0, 0, img.width, img.height};
      auto peak_window = [&](int cls) {
        ClassActivationMap m = cam_for_class(fm, e0, cls);
        detail::rebase_map(m, full, resized.width, resized.height,
                           stack.extractor.stride_total);
        return std::pair<Peak, Window>(
            find_peak(m), propose_subwindow(full, find_peak(m), cfg.zoom,
                                            img.width, img.height, cfg.min_side));
      };
      r.root_peak = peak_window(root_scores.predicted).first;

      if (opt.with_consistency) {
        int top_other = -1;
        for (int c = 0; c < num_classes; ++c)
          if (c != r.truth &&
              (top_other < 0 ||
               root_scores.scores[c] > root_scores.scores[top_other]))
            top_other = c;
        const Window wt = peak_window(r.truth).second;
        const Window wo = peak_window(top_other).second;
        r.consistency_iou = iou(wt, wo);

        std::mt19937_64 rng(opt.seed + 0xda3e39cb94b95bdbull * (i + 1));
        auto random_window = [&] {
          Peak p;
          p.image_x = static_cast<int>(rng() % img.width);
          p.image_y = static_cast<int>(rng() % img.height);
          return propose_subwindow(full, p, cfg.zoom, img.width, img.height,
                                   cfg.min_side);
        };
        const Window ra = random_window();
        const Window rb = random_window();
        r.random_iou = iou(ra, rb);
      }
    } catch (const std::exception& e) {
      r.error = e.what();
    }
  });
  for (size_t i = 0; i < results.size(); ++i)
    if (!results[i].error.empty())
      throw EvalError("evaluate: " + test[i]->path + ": " + results[i].error);

  EvalReport report;
  report.class_names = manifest.class_names;
  report.test_size = static_cast<int>(test.size());
  std::vector<int> truth(test.size());
  for (size_t i = 0; i < test.size(); ++i) truth[i] = results[i].truth;
  std::vector<std::string> variants;
  for (const auto& [name, _] : results[0].pred) variants.push_back(name);
  for (const auto& v : variants) {
    std::vector<int> pred(test.size());
    int correct = 0;
    for (size_t i = 0; i < test.size(); ++i) {
      pred[i] = results[i].pred.at(v);
      if (pred[i] == truth[i]) ++correct;
    }
    report.accuracy[v] = static_cast<double>(correct) / test.size();
    report.per_class[v] = per_class_stats(truth, pred, num_classes);
  }
  if (opt.with_consistency) {
    double cs = 0.0, rs = 0.0;
    for (const auto& r : results) {
      cs += r.consistency_iou;
      rs += r.random_iou;
    }
    report.cam_consistency_mean = cs / results.size();
    report.random_window_iou_mean = rs / results.size();
  }
  return report;
}

// Mean IoU between the sub-windows proposed from the true class's CAM and
// from the top non-true class's CAM, at the root.
inline double cam_consistency(const ClassifierStack& stack,
                              const std::vector<Image>& images,
                              const std::vector<int>& labels) {
  if (images.empty() || images.size() != labels.size())
    throw EvalError("cam_consistency: empty or mismatched input");
  const LinearClassifier& e0 = stack.per_iteration[0];
  std::vector<double> ious(images.size(), 0.0);
  parallel_for(images.size(), [&](size_t i) {
    const Image& img = images[i];
    const Image resized = resize_smaller_side(img, stack.config.input_side,
                                              stack.config.preserve_aspect);
    const FeatureMap fm = extract(stack.extractor, resized);
    const ScoreVector sv = score(e0, gap(fm).values);
    const Window full{0, 0, img.width, img.height};
    auto window_for = [&](int cls) {
      ClassActivationMap m = cam_for_class(fm, e0, cls);
      detail::rebase_map(m, full, resized.width, resized.height,
                         stack.extractor.stride_total);
      return propose_subwindow(full, find_peak(m), stack.config.zoom,
                               img.width, img.height, stack.config.min_side);
    };
    int top_other = -1;
    for (int c = 0; c < e0.num_classes; ++c)
      if (c != labels[i] &&
          (top_other < 0 || sv.scores[c] > sv.scores[top_other]))
        top_other = c;
    ious[i] = iou(window_for(labels[i]), window_for(top_other));
  });
  double s = 0.0;
  for (double v : ious) s += v;
  return s / ious.size();
}

// Shared-geometry localization check against the generator's sidecar.
inline void localization_hit_rate(const ClassifierStack& stack,
                                  const DatasetManifest& manifest,
                                  const std::vector<GroundTruthEntry>& sidecar,
                                  double radius, EvalReport& report) {
  const auto test = manifest.split("test");
  std::map<std::string, const GroundTruthEntry*> by_name;
  for (const auto& e : sidecar) by_name[e.path] = &e;

  struct Hit {
    bool hit = false;
    bool correct = false;
    std::string error;
  };
  std::vector<Hit> hits(test.size());
  parallel_for(test.size(), [&](size_t i) {
    try {
      const std::string name =
          std::filesystem::path(test[i]->path).filename().string();
      const auto it = by_name.find(name);
      if (it == by_name.end())
        throw EvalError("missing sidecar entry for " + name);
      const Image img = read_ppm(test[i]->path);
      const Image resized = resize_smaller_side(img, stack.config.input_side,
                                                stack.config.preserve_aspect);
      const FeatureMap fm = extract(stack.extractor, resized);
      const LinearClassifier& e0 = stack.per_iteration[0];
      const ScoreVector sv = score(e0, gap(fm).values);
      ClassActivationMap m = cam_for_class(fm, e0, sv.predicted);
      detail::rebase_map(m, Window{0, 0, img.width, img.height}, resized.width,
                         resized.height, stack.extractor.stride_total);
      const Peak p = find_peak(m);
      const double dx = p.image_x - it->second->cx;
      const double dy = p.image_y - it->second->cy;
      hits[i].hit = std::sqrt(dx * dx + dy * dy) <= radius;
      hits[i].correct =
          sv.predicted == manifest.class_index(test[i]->label);
    } catch (const std::exception& e) {
      hits[i].error = e.what();
    }
  });
  for (size_t i = 0; i < hits.size(); ++i)
    if (!hits[i].error.empty())
      throw EvalError("localization: " + test[i]->path + ": " + hits[i].error);
  int all_hits = 0, corr = 0, corr_hits = 0;
  for (const auto& h : hits) {
    if (h.hit) ++all_hits;
    if (h.correct) {
      ++corr;
      if (h.hit) ++corr_hits;
    }
  }
  report.localization_hit_rate = static_cast<double>(all_hits) / hits.size();
  report.localization_hit_rate_correct =
      corr > 0 ? static_cast<double>(corr_hits) / corr : 0.0;
}

inline nlohmann::ordered_json report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["format"] = "introspect-eval";
  j["test_size"] = r.test_size;
  j["class_names"] = r.class_names;
  nlohmann::ordered_json acc;
  for (const auto& [v, a] : r.accuracy) acc[v] = a;
  j["accuracy"] = std::move(acc);
  nlohmann::ordered_json pc;
  for (const auto& [v, stats] : r.per_class) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& s : stats)
      arr.push_back({{"precision", s.precision},
                     {"recall", s.recall},
                     {"f1", s.f1},
                     {"support", s.support}});
    pc[v] = std::move(arr);
  }
  j["per_class"] = std::move(pc);
  if (r.localization_hit_rate >= 0.0) {
    j["localization_hit_rate"] = r.localization_hit_rate;
    j["localization_hit_rate_correct"] = r.localization_hit_rate_correct;
  }
  if (r.cam_consistency_mean >= 0.0) {
    j["cam_consistency_mean"] = r.cam_consistency_mean;
    j["random_window_iou_mean"] = r.random_window_iou_mean;
  }
  return j;
}

inline std::string report_to_text(const EvalReport& r) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << "variant               accuracy\n";
  out << "--------------------  --------\n";
  for (const auto& [v, a] : r.accuracy)
    out << std::left << std::setw(22) << v << a << "\n";
  if (r.localization_hit_rate >= 0.0) {
    out << "\nlocalization hit rate            " << r.localization_hit_rate
        << "\nlocalization hit rate (correct)  "
        << r.localization_hit_rate_correct << "\n";
  }
  if (r.cam_consistency_mean >= 0.0) {
    out << "cam-consistency mean IoU         " << r.cam_consistency_mean
        << "\nrandom-window mean IoU           " << r.random_window_iou_mean
        << "\n";
  }
  return out.str();
}

}  // namespace introspect

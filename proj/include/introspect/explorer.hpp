#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "introspect/cam.hpp"
#include "introspect/classifier.hpp"
#include "introspect/featurizer.hpp"
#include "introspect/raster.hpp"

namespace introspect {

struct ExplorerError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class GuidePolicy { Cam, Saliency, Random };

inline std::string to_string(GuidePolicy p) {
  switch (p) {
    case GuidePolicy::Cam: return "cam";
    case GuidePolicy::Saliency: return "saliency";
    case GuidePolicy::Random: return "random";
  }
  return "cam";
}

inline GuidePolicy guide_policy_from_string(const std::string& s) {
  if (s == "cam") return GuidePolicy::Cam;
  if (s == "saliency") return GuidePolicy::Saliency;
  if (s == "random") return GuidePolicy::Random;
  throw ExplorerError("unknown guidance policy \"" + s + "\"");
}

struct ExploreConfig {
  int iterations = 4;   // T, total tree depth including the root
  int beam_width = 1;   // k, children per expanded node
  double zoom = 0.7071067811865476;  // child side / geometric mean of parent
  int input_side = 128;
  bool preserve_aspect = true;
  int min_side = 8;
  GuidePolicy policy = GuidePolicy::Cam;
  std::uint64_t seed = 0;
};

struct ExplorationNode {
  int id = 0;
  int depth = 0;
  Window window;
  GapFeature feature;      // raw GAP of the resized crop
  ScoreVector scores;      // from the classifier for this depth
  int chosen_class = -1;   // class whose map produced this node; -1 at root
  std::vector<int> children;
};

struct ExplorationTree {
  std::vector<ExplorationNode> nodes;
  int root = 0;
  ExploreConfig config;

  const ExplorationNode& node(int id) const { return nodes[id]; }
};

struct RouteStep {
  int node_id = 0;
  GapFeature feature;
  ScoreVector scores;
};

struct Route {
  std::vector<RouteStep> steps;
  size_t length() const { return steps.size(); }
};

// Gradient-magnitude stand-in saliency: central differences on luminance,
// box-blurred with radius = stride, pooled to the feature grid.
inline ClassActivationMap saliency_map(const Image& img, int stride) {
  const int w = img.width, h = img.height;
  std::vector<double> mag(static_cast<size_t>(w) * h, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double gx = img.luminance(std::min(x + 1, w - 1), y) -
                        img.luminance(std::max(x - 1, 0), y);
      const double gy = img.luminance(x, std::min(y + 1, h - 1)) -
                        img.luminance(x, std::max(y - 1, 0));
      mag[static_cast<size_t>(y) * w + x] = std::sqrt(gx * gx + gy * gy);
    }
  // box blur, radius = stride
  const int r = stride;
  std::vector<double> blur(mag.size(), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      int n = 0;
      for (int dy = -r; dy <= r; ++dy) {
        const int yy = y + dy;
        if (yy < 0 || yy >= h) continue;
        for (int dx = -r; dx <= r; ++dx) {
          const int xx = x + dx;
          if (xx < 0 || xx >= w) continue;
          s += mag[static_cast<size_t>(yy) * w + xx];
          ++n;
        }
      }
      blur[static_cast<size_t>(y) * w + x] = s / n;
    }
  ClassActivationMap cam;
  cam.h = h / stride;
  cam.w = w / stride;
  cam.class_id = -1;
  cam.stride_x = cam.stride_y = stride;
  cam.window = Window{0, 0, cam.w * stride, cam.h * stride};
  cam.values.assign(static_cast<size_t>(cam.h) * cam.w, 0.0);
  for (int gy = 0; gy < cam.h; ++gy)
    for (int gx = 0; gx < cam.w; ++gx) {
      double s = 0.0;
      for (int y = 0; y < stride; ++y)
        for (int x = 0; x < stride; ++x)
          s += blur[static_cast<size_t>(gy * stride + y) * w + gx * stride + x];
      cam.at(gx, gy) = s / (stride * stride);
    }
  return cam;
}

namespace detail {

// Rebase a map computed on a resized crop so peak coordinates land in the
// original image frame.
inline void rebase_map(ClassActivationMap& cam, const Window& win,
                       int resized_w, int resized_h, int stride) {
  cam.window = win;
  cam.stride_x = static_cast<double>(stride) * win.w / resized_w;
  cam.stride_y = static_cast<double>(stride) * win.h / resized_h;
}

}  // namespace detail

// Build the exploration tree: classify a window, pick the top-k classes,
// drop one child window per class from the guidance map's peak, repeat.
inline ExplorationTree explore(const Image& img,
                               const std::vector<LinearClassifier>& stack,
                               const ExtractorSpec& extractor,
                               const ExploreConfig& cfg) {
  if (cfg.iterations < 1) throw ExplorerError("explore: iterations must be >= 1");
  if (cfg.beam_width < 1 || cfg.beam_width > 3)
    throw ExplorerError("explore: beam width must lie in [1,3]");
  if (static_cast<int>(stack.size()) < cfg.iterations)
    throw ExplorerError("explore: stack has " + std::to_string(stack.size()) +
                        " classifiers, need " + std::to_string(cfg.iterations));

  std::mt19937_64 rng(cfg.seed);  // consulted only by the random policy

  ExplorationTree tree;
  tree.config = cfg;
  tree.nodes.push_back(ExplorationNode{});
  tree.nodes[0].window = Window{0, 0, img.width, img.height};

  for (size_t cursor = 0; cursor < tree.nodes.size(); ++cursor) {
    const int depth = tree.nodes[cursor].depth;
    const Window win = tree.nodes[cursor].window;
    const Image resized =
        resize_smaller_side(crop(img, win), cfg.input_side, cfg.preserve_aspect);
    FeatureMap fm;
    try {
      fm = extract(extractor, resized);
    } catch (const FeaturizerError&) {
      continue;  // too small to featurize: leaf
    }
    const LinearClassifier& clf = stack[depth];
    tree.nodes[cursor].feature = gap(fm);
    tree.nodes[cursor].scores = score(clf, tree.nodes[cursor].feature.values);

    if (depth >= cfg.iterations - 1) continue;
    if (std::min(win.w, win.h) <= cfg.min_side) continue;

    // top-k classes by score
    std::vector<int> order(clf.num_classes);
    for (int c = 0; c < clf.num_classes; ++c) order[c] = c;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return tree.nodes[cursor].scores.scores[a] >
             tree.nodes[cursor].scores.scores[b];
    });
    const int k = std::min(cfg.beam_width, clf.num_classes);
    for (int i = 0; i < k; ++i) {
      const int cls = order[i];
      ClassActivationMap guide;
      switch (cfg.policy) {
        case GuidePolicy::Cam:
          guide = cam_for_class(fm, clf, cls);
          break;
        case GuidePolicy::Saliency:
          guide = saliency_map(resized, extractor.stride_total);
          break;
        case GuidePolicy::Random: {
          guide.h = fm.h;
          guide.w = fm.w;
          guide.class_id = cls;
          guide.stride_x = guide.stride_y = fm.stride;
          guide.values.assign(static_cast<size_t>(fm.h) * fm.w, 0.0);
          guide.values[rng() % guide.values.size()] = 1.0;
          break;
        }
      }
      detail::rebase_map(guide, win, resized.width, resized.height,
                         extractor.stride_total);
      const Peak peak = find_peak(guide);
      const Window child_win = propose_subwindow(win, peak, cfg.zoom,
                                                 img.width, img.height,
                                                 cfg.min_side);
      ExplorationNode child;
      child.id = static_cast<int>(tree.nodes.size());
      child.depth = depth + 1;
      child.window = child_win;
      child.chosen_class = cls;
      tree.nodes[cursor].children.push_back(child.id);
      tree.nodes.push_back(std::move(child));
    }
  }
  return tree;
}

// Greedy root-to-leaf route: at each node follow the child generated by the
// node's top-1 class.
inline Route select_route(const ExplorationTree& tree) {
  if (tree.nodes.empty()) throw ExplorerError("select_route: empty tree");
  Route route;
  int id = tree.root;
  while (true) {
    const ExplorationNode& n = tree.node(id);
    if (n.scores.scores.empty() && !route.steps.empty()) break;  // unscored leaf
    route.steps.push_back(RouteStep{n.id, n.feature, n.scores});
    if (n.children.empty()) break;
    int next = n.children.front();
    if (!n.scores.scores.empty()) {
      for (int cid : n.children)
        if (tree.node(cid).chosen_class == n.scores.predicted) next = cid;
    }
    id = next;
  }
  return route;
}

// Late fusion: elementwise sum of per-step score vectors.
inline ScoreVector fuse_late(const Route& route) {
  if (route.steps.empty()) throw ExplorerError("fuse_late: empty route");
  std::vector<double> sum = route.steps[0].scores.scores;
  for (size_t i = 1; i < route.steps.size(); ++i) {
    const auto& s = route.steps[i].scores.scores;
    if (s.size() != sum.size())
      throw ExplorerError("fuse_late: inconsistent class counts along route");
    for (size_t c = 0; c < sum.size(); ++c) sum[c] += s[c];
  }
  return ScoreVector::from_scores(std::move(sum));
}

// Mean of the route's l2-normalized per-step features.
inline std::vector<double> early_fused_feature(const Route& route,
                                               size_t prefix_len) {
  if (prefix_len == 0 || prefix_len > route.steps.size())
    throw ExplorerError("early_fused_feature: bad prefix length");
  std::vector<double> mean;
  for (size_t i = 0; i < prefix_len; ++i) {
    const std::vector<double> f = l2_normalize(route.steps[i].feature.values);
    if (mean.empty())
      mean.assign(f.size(), 0.0);
    else if (f.size() != mean.size())
      throw ExplorerError("early_fused_feature: feature dim changes mid-route");
    for (size_t j = 0; j < f.size(); ++j) mean[j] += f[j];
  }
  for (double& v : mean) v /= prefix_len;
  return mean;
}

// Early fusion: score the averaged normalized features with the classifier
// trained for this route length.
inline ScoreVector fuse_early(const Route& route,
                              const LinearClassifier& clf_for_length) {
  return score(clf_for_length, early_fused_feature(route, route.length()));
}

// Accumulated early fusion: sum of fuse_early over every route prefix. The
// method's headline prediction.
inline ScoreVector fuse_early_accum(
    const Route& route, const std::vector<LinearClassifier>& clfs_per_length) {
  if (route.steps.empty()) throw ExplorerError("fuse_early_accum: empty route");
  if (clfs_per_length.size() < route.steps.size())
    throw ExplorerError("fuse_early_accum: missing prefix classifiers");
  std::vector<double> sum;
  for (size_t len = 1; len <= route.steps.size(); ++len) {
    const ScoreVector sv =
        score(clfs_per_length[len - 1], early_fused_feature(route, len));
    if (sum.empty()) sum.assign(sv.scores.size(), 0.0);
    for (size_t c = 0; c < sum.size(); ++c) sum[c] += sv.scores[c];
  }
  return ScoreVector::from_scores(std::move(sum));
}

// --- tree JSON ---

inline nlohmann::ordered_json tree_to_json(const ExplorationTree& tree) {
  nlohmann::ordered_json j;
  j["format"] = "introspect-tree";
  j["version"] = 1;
  j["config"] = {{"iterations", tree.config.iterations},
                 {"beam_width", tree.config.beam_width},
                 {"zoom", tree.config.zoom},
                 {"input_side", tree.config.input_side},
                 {"preserve_aspect", tree.config.preserve_aspect},
                 {"min_side", tree.config.min_side},
                 {"policy", to_string(tree.config.policy)},
                 {"seed", tree.config.seed}};
  j["root"] = tree.root;
  auto nodes = nlohmann::ordered_json::array();
  for (const auto& n : tree.nodes) {
    nlohmann::ordered_json nj;
    nj["id"] = n.id;
    nj["depth"] = n.depth;
    nj["window"] = {{"x0", n.window.x0},
                    {"y0", n.window.y0},
                    {"w", n.window.w},
                    {"h", n.window.h}};
    nj["chosen_class"] = n.chosen_class;
    nj["scores"] = n.scores.scores;
    nj["children"] = n.children;
    nodes.push_back(std::move(nj));
  }
  j["nodes"] = std::move(nodes);
  return j;
}

inline std::string serialize_tree(const ExplorationTree& tree) {
  return tree_to_json(tree).dump(2) + "\n";
}

inline ExplorationTree deserialize_tree(const std::string& text) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ExplorerError("tree parse error at byte " + std::to_string(e.byte) +
                        ": " + e.what());
  }
  try {
    if (j.at("format") != "introspect-tree")
      throw ExplorerError("tree: unexpected format field");
    ExplorationTree tree;
    const auto& c = j.at("config");
    tree.config.iterations = c.at("iterations");
    tree.config.beam_width = c.at("beam_width");
    tree.config.zoom = c.at("zoom");
    tree.config.input_side = c.at("input_side");
    tree.config.preserve_aspect = c.at("preserve_aspect");
    tree.config.min_side = c.at("min_side");
    tree.config.policy = guide_policy_from_string(c.at("policy"));
    tree.config.seed = c.at("seed");
    tree.root = j.at("root");
    for (const auto& nj : j.at("nodes")) {
      ExplorationNode n;
      n.id = nj.at("id");
      n.depth = nj.at("depth");
      n.window = Window{nj.at("window").at("x0"), nj.at("window").at("y0"),
                        nj.at("window").at("w"), nj.at("window").at("h")};
      n.chosen_class = nj.at("chosen_class");
      n.scores =
          ScoreVector::from_scores(nj.at("scores").get<std::vector<double>>());
      if (nj.at("scores").empty()) n.scores = ScoreVector{};
      n.children = nj.at("children").get<std::vector<int>>();
      tree.nodes.push_back(std::move(n));
    }
    return tree;
  } catch (const nlohmann::json::exception& e) {
    throw ExplorerError(std::string("tree: malformed document: ") + e.what());
  }
}

}  // namespace introspect

#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "introspect/cam.hpp"
#include "introspect/classifier.hpp"
#include "introspect/explorer.hpp"
#include "introspect/featurizer.hpp"
#include "introspect/parallel.hpp"
#include "introspect/raster.hpp"

namespace introspect {

struct TrainkitError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ManifestEntry {
  std::string path;
  std::string label;
  std::string split;  // "train" or "test"
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::vector<std::string> class_names;  // sorted, label -> index

  int class_index(const std::string& label) const {
    for (size_t i = 0; i < class_names.size(); ++i)
      if (class_names[i] == label) return static_cast<int>(i);
    throw TrainkitError("manifest: unknown label \"" + label + "\"");
  }

  std::vector<const ManifestEntry*> split(const std::string& which) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
      if (e.split == which) out.push_back(&e);
    return out;
  }

  void rebuild_class_table() {
    std::map<std::string, int> seen;
    for (const auto& e : entries) seen[e.label] = 1;
    class_names.clear();
    for (const auto& [name, _] : seen) class_names.push_back(name);
  }
};

inline DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw TrainkitError(path + ": cannot open manifest");
  DatasetManifest m;
  std::string line;
  size_t lineno = 0;
  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw TrainkitError(path + ":" + std::to_string(lineno) +
                          ": bad manifest line: " + e.what());
    }
    ManifestEntry e;
    e.path = j.at("path");
    e.label = j.at("label");
    e.split = j.at("split");
    if (e.split != "train" && e.split != "test")
      throw TrainkitError(path + ":" + std::to_string(lineno) +
                          ": split must be train or test");
    // relative paths resolve against the manifest's directory
    if (!std::filesystem::path(e.path).is_absolute())
      e.path = (base / e.path).string();
    m.entries.push_back(std::move(e));
  }
  m.rebuild_class_table();
  return m;
}

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw TrainkitError(path + ": cannot write manifest");
  for (const auto& e : m.entries) {
    nlohmann::ordered_json j{{"path", e.path}, {"label", e.label},
                             {"split", e.split}};
    out << j.dump() << "\n";
  }
}

// --- synthetic fine-grained dataset -----------------------------------------

struct SynthConfig {
  int classes = 2;
  int images_per_class = 200;  // split evenly into train/test
  int image_side = 128;
  int patch_side = 16;
  std::uint64_t seed = 1;
  int min_patch_side = 8;  // must cover the extractor's receptive field
};

struct GroundTruthEntry {
  std::string path;
  int cx = 0;
  int cy = 0;
  std::string label;
};

namespace detail {

struct SynthRng {
  std::mt19937_64 rng;
  explicit SynthRng(std::uint64_t seed) : rng(seed) {}
  double unit() { return (rng() >> 11) * (1.0 / 9007199254740992.0); }
  double sym() { return unit() * 2.0 - 1.0; }
  int below(int n) { return static_cast<int>(rng() % n); }
};

// Stripe field in [-1,1]: orientation index o in {0,1,2,3} -> 0/45/90/135
// degrees, period 4 px.
inline double stripe(int x, int y, int orient) {
  static const double pi = 3.14159265358979323846;
  const double theta = orient * pi / 4.0;
  const double t = 2.0 * pi * (x * std::cos(theta) + y * std::sin(theta)) / 4.0;
  return std::sin(t);
}

// Paint opponent-colored stripes: axis 0 modulates R vs G, axis 1 modulates
// B vs (R+G)/2.
inline void paint_stripe_pixel(Image& img, int x, int y, double s, int axis,
                               double amp) {
  double r = 0.5, g = 0.5, b = 0.5;
  if (axis == 0) {
    r = 0.5 + amp * s;
    g = 0.5 - amp * s;
  } else {
    b = 0.5 + amp * s;
    r = 0.5 - 0.5 * amp * s;
    g = 0.5 - 0.5 * amp * s;
  }
  img.at(x, y, 0) = std::clamp(r, 0.0, 1.0);
  img.at(x, y, 1) = std::clamp(g, 0.0, 1.0);
  img.at(x, y, 2) = std::clamp(b, 0.0, 1.0);
}

}  // namespace detail

// Class signature: stripe orientation (c % 4) on opponent axis ((c / 4) % 2).
inline void class_signature(int class_id, int& orient, int& axis) {
  orient = class_id % 4;
  axis = (class_id / 4) % 2;
}

// One image: smooth background noise + flat outlined distractor rectangles +
// weak randomly-oriented stripe distractors, then a single class-coded patch.
// The patch has a 2 px ring carrying every class signature superposed (so the
// ring is class-agnostic) around a striped core in the class's own signature.
inline Image render_synthetic_image(const SynthConfig& cfg, int class_id,
                                    detail::SynthRng& rng, int& out_cx,
                                    int& out_cy) {
  const int side = cfg.image_side;
  Image img(side, side, 3);

  // smooth background: bilinear noise on a 16 px lattice
  const int lat = 16;
  const int ln = side / lat + 2;
  std::vector<double> lattice(static_cast<size_t>(ln) * ln * 3);
  for (double& v : lattice) v = rng.sym() * 0.06;
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      const double fx = static_cast<double>(x) / lat;
      const double fy = static_cast<double>(y) / lat;
      const int ix = static_cast<int>(fx), iy = static_cast<int>(fy);
      const double wx = fx - ix, wy = fy - iy;
      for (int c = 0; c < 3; ++c) {
        auto l = [&](int a, int b) {
          return lattice[(static_cast<size_t>(b) * ln + a) * 3 + c];
        };
        const double v = (1 - wy) * ((1 - wx) * l(ix, iy) + wx * l(ix + 1, iy)) +
                         wy * ((1 - wx) * l(ix, iy + 1) + wx * l(ix + 1, iy + 1));
        img.at(x, y, c) = std::clamp(0.5 + v, 0.0, 1.0);
      }
    }

  // flat rectangles with a dark 1 px outline (saliency bait, low texture)
  for (int d = 0; d < 4; ++d) {
    const int w = 8 + rng.below(17), h = 8 + rng.below(17);
    const int x0 = rng.below(side - w), y0 = rng.below(side - h);
    double col[3];
    for (double& c : col) c = std::clamp(0.5 + rng.sym() * 0.15, 0.0, 1.0);
    for (int y = y0; y < y0 + h; ++y)
      for (int x = x0; x < x0 + w; ++x) {
        const bool edge = x == x0 || x == x0 + w - 1 || y == y0 || y == y0 + h - 1;
        for (int c = 0; c < 3; ++c)
          img.at(x, y, c) = edge ? col[c] * 0.45 : col[c];
      }
  }

  // grayscale noise blocks: strong gradients (saliency bait) but almost no
  // coherent grating response
  for (int d = 0; d < 2; ++d) {
    const int ns = 16;
    const int x0 = rng.below(side - ns), y0 = rng.below(side - ns);
    for (int y = 0; y < ns; ++y)
      for (int x = 0; x < ns; ++x) {
        const double v = std::clamp(0.5 + rng.sym() * 0.25, 0.0, 1.0);
        for (int c = 0; c < 3; ++c) img.at(x0 + x, y0 + y, c) = v;
      }
  }

  // weak stripe distractors at random orientation/axis
  for (int d = 0; d < 3; ++d) {
    const int ds = 12;
    const int x0 = rng.below(side - ds), y0 = rng.below(side - ds);
    const int orient = rng.below(4), axis = rng.below(2);
    const double amp = 0.07 + rng.unit() * 0.05;
    for (int y = 0; y < ds; ++y)
      for (int x = 0; x < ds; ++x)
        detail::paint_stripe_pixel(img, x0 + x, y0 + y,
                                   detail::stripe(x, y, orient), axis, amp);
  }

  // discriminative patch, painted last so clutter never occludes it
  const int ps = cfg.patch_side;
  const int px = rng.below(side - ps + 1), py = rng.below(side - ps + 1);
  int orient, axis;
  class_signature(class_id, orient, axis);
  const int ring = 3;
  // variable core contrast: weak cores are ambiguous at full scale but easy
  // once the window has zoomed onto the patch
  const double core_amp = 0.03 + rng.unit() * 0.19;
  for (int y = 0; y < ps; ++y)
    for (int x = 0; x < ps; ++x) {
      const bool in_core = x >= ring && x < ps - ring && y >= ring &&
                           y < ps - ring;
      if (in_core) {
        detail::paint_stripe_pixel(img, px + x, py + y,
                                   detail::stripe(x, y, orient), axis, core_amp);
      } else {
        // ring: all four orientations superposed, both axes balanced
        double srg = 0.0, sby = 0.0;
        for (int o = 0; o < 4; ++o) {
          srg += detail::stripe(x, y, o);
          sby += detail::stripe(x + 2, y + 2, o);
        }
        const double r = std::clamp(0.5 + 0.50 * 0.5 * srg, 0.0, 1.0);
        const double g = std::clamp(0.5 - 0.50 * 0.5 * srg, 0.0, 1.0);
        const double b = std::clamp(0.5 + 0.50 * 0.5 * sby, 0.0, 1.0);
        img.at(px + x, py + y, 0) = r;
        img.at(px + x, py + y, 1) = g;
        img.at(px + x, py + y, 2) = b;
      }
    }
  out_cx = px + ps / 2;
  out_cy = py + ps / 2;
  return img;
}

inline DatasetManifest generate_synthetic(const SynthConfig& cfg,
                                          const std::string& out_dir) {
  if (cfg.patch_side < cfg.min_patch_side)
    throw TrainkitError("generate_synthetic: patch side " +
                        std::to_string(cfg.patch_side) +
                        " below the minimum (receptive field) " +
                        std::to_string(cfg.min_patch_side));
  if (cfg.classes < 2) throw TrainkitError("generate_synthetic: need >= 2 classes");
  std::filesystem::create_directories(out_dir);
  DatasetManifest m;
  std::vector<GroundTruthEntry> gt;
  detail::SynthRng rng(cfg.seed);
  for (int c = 0; c < cfg.classes; ++c) {
    const std::string label = "class_" + std::to_string(c);
    for (int i = 0; i < cfg.images_per_class; ++i) {
      int cx, cy;
      const Image img = render_synthetic_image(cfg, c, rng, cx, cy);
      char name[64];
      std::snprintf(name, sizeof(name), "c%02d_%04d.ppm", c, i);
      const std::string path = (std::filesystem::path(out_dir) / name).string();
      write_ppm(path, img);
      ManifestEntry e;
      e.path = name;  // relative to the manifest
      e.label = label;
      e.split = i < cfg.images_per_class / 2 ? "train" : "test";
      m.entries.push_back(e);
      gt.push_back(GroundTruthEntry{name, cx, cy, label});
    }
  }
  m.rebuild_class_table();
  save_manifest(m, (std::filesystem::path(out_dir) / "manifest.jsonl").string());
  // the on-disk manifest stays relative; the returned one is ready to use
  for (auto& e : m.entries)
    e.path = (std::filesystem::path(out_dir) / e.path).string();
  std::ofstream out((std::filesystem::path(out_dir) / "groundtruth.jsonl").string());
  for (const auto& e : gt) {
    nlohmann::ordered_json j{{"path", e.path}, {"cx", e.cx}, {"cy", e.cy},
                             {"label", e.label}};
    out << j.dump() << "\n";
  }
  return m;
}

inline std::vector<GroundTruthEntry> load_ground_truth(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw TrainkitError(path + ": cannot open ground-truth sidecar");
  std::vector<GroundTruthEntry> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    out.push_back(GroundTruthEntry{j.at("path"), j.at("cx"), j.at("cy"),
                                   j.at("label")});
  }
  return out;
}

// --- classifier stack -------------------------------------------------------

struct ClassifierStack {
  std::vector<LinearClassifier> per_iteration;  // E_0..E_{T-1}
  std::vector<LinearClassifier> early_fusion;   // prefix lengths 1..T
  ExtractorSpec extractor;
  ExploreConfig config;
  std::vector<std::string> class_names;
};

struct TrainOptions {
  SvmConfig svm;
  ExploreConfig explore;  // policy here steers the training-time zoom too
};

namespace detail {

struct TrainState {
  Image image;
  int label = 0;
  Window window;
  FeatureMap fm;                          // of the current window
  std::vector<GapFeature> route_features; // one per iteration so far
};

}  // namespace detail

// Train E_0..E_{T-1} plus the per-prefix-length early-fusion classifiers.
// Windows advance greedily (top-1 class of the previous classifier) even when
// inference later runs a wider beam.
inline ClassifierStack train_stack(const DatasetManifest& manifest,
                                   const ExtractorSpec& extractor,
                                   const TrainOptions& opt) {
  const auto train = manifest.split("train");
  if (train.empty()) throw TrainkitError("train_stack: empty train split");
  const int num_classes = static_cast<int>(manifest.class_names.size());
  const int T = opt.explore.iterations;

  std::vector<detail::TrainState> states(train.size());
  std::vector<std::string> errors(train.size());
  parallel_for(train.size(), [&](size_t i) {
    try {
      states[i].image = read_ppm(train[i]->path);
      states[i].label = manifest.class_index(train[i]->label);
      states[i].window =
          Window{0, 0, states[i].image.width, states[i].image.height};
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });
  for (size_t i = 0; i < errors.size(); ++i)
    if (!errors[i].empty())
      throw TrainkitError("train_stack: entry " + train[i]->path + ": " +
                          errors[i]);

  ClassifierStack stack;
  stack.extractor = extractor;
  stack.config = opt.explore;
  stack.class_names = manifest.class_names;

  std::vector<int> labels(states.size());
  for (size_t i = 0; i < states.size(); ++i) labels[i] = states[i].label;

  std::mt19937_64 policy_rng(opt.explore.seed);  // random policy only

  for (int t = 0; t < T; ++t) {
    if (t > 0) {
      // advance every training window with E_{t-1}'s top-1 guidance
      const LinearClassifier& prev = stack.per_iteration.back();
      std::vector<Peak> peaks(states.size());
      if (opt.explore.policy == GuidePolicy::Random) {
        // draws happen on one thread, in image order, for determinism
        for (size_t i = 0; i < states.size(); ++i) {
          const auto& fm = states[i].fm;
          ClassActivationMap guide;
          guide.h = fm.h;
          guide.w = fm.w;
          guide.stride_x = guide.stride_y = fm.stride;
          guide.values.assign(static_cast<size_t>(fm.h) * fm.w, 0.0);
          guide.values[policy_rng() % guide.values.size()] = 1.0;
          const Image resized = resize_smaller_side(
              crop(states[i].image, states[i].window), opt.explore.input_side,
              opt.explore.preserve_aspect);
          detail::rebase_map(guide, states[i].window, resized.width,
                             resized.height, extractor.stride_total);
          peaks[i] = find_peak(guide);
        }
      } else {
        parallel_for(states.size(), [&](size_t i) {
          const Image resized = resize_smaller_side(
              crop(states[i].image, states[i].window), opt.explore.input_side,
              opt.explore.preserve_aspect);
          ClassActivationMap guide;
          if (opt.explore.policy == GuidePolicy::Saliency) {
            guide = saliency_map(resized, extractor.stride_total);
          } else {
            const ScoreVector sv =
                score(prev, gap(states[i].fm).values);
            guide = cam_for_class(states[i].fm, prev, sv.predicted);
          }
          detail::rebase_map(guide, states[i].window, resized.width,
                             resized.height, extractor.stride_total);
          peaks[i] = find_peak(guide);
        });
      }
      for (size_t i = 0; i < states.size(); ++i) {
        states[i].window = propose_subwindow(
            states[i].window, peaks[i], opt.explore.zoom,
            states[i].image.width, states[i].image.height,
            opt.explore.min_side);
      }
    }

    parallel_for(states.size(), [&](size_t i) {
      const Image resized = resize_smaller_side(
          crop(states[i].image, states[i].window), opt.explore.input_side,
          opt.explore.preserve_aspect);
      states[i].fm = extract(extractor, resized);
      states[i].route_features.push_back(gap(states[i].fm));
    });

    std::vector<std::vector<double>> feats(states.size());
    for (size_t i = 0; i < states.size(); ++i)
      feats[i] = states[i].route_features.back().values;
    stack.per_iteration.push_back(
        train_svm(feats, labels, num_classes, opt.svm, manifest.class_names));
  }

  // early-fusion classifiers, one per route prefix length
  for (int len = 1; len <= T; ++len) {
    std::vector<std::vector<double>> feats(states.size());
    for (size_t i = 0; i < states.size(); ++i) {
      std::vector<double> mean;
      for (int t = 0; t < len; ++t) {
        const auto f = l2_normalize(states[i].route_features[t].values);
        if (mean.empty()) mean.assign(f.size(), 0.0);
        for (size_t j = 0; j < f.size(); ++j) mean[j] += f[j];
      }
      for (double& v : mean) v /= len;
      feats[i] = std::move(mean);
    }
    SvmConfig early_cfg = opt.svm;
    early_cfg.normalize_input = false;  // features are pre-averaged
    stack.early_fusion.push_back(
        train_svm(feats, labels, num_classes, early_cfg, manifest.class_names));
  }
  return stack;
}

// --- model persistence ------------------------------------------------------

inline std::uint64_t fnv1a_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TrainkitError(path + ": cannot open for hashing");
  std::uint64_t h = 1469598103934665603ull;
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
    if (!in) break;
  }
  return h;
}

namespace detail {

inline nlohmann::ordered_json classifier_to_json(const LinearClassifier& c) {
  return nlohmann::ordered_json{{"num_classes", c.num_classes},
                                {"feature_dim", c.feature_dim},
                                {"normalize_input", c.normalize_input},
                                {"lambda", c.lambda},
                                {"weights", c.weights},
                                {"biases", c.biases}};
}

inline LinearClassifier classifier_from_json(const nlohmann::json& j,
                                             const std::vector<std::string>& names) {
  LinearClassifier c;
  c.num_classes = j.at("num_classes");
  c.feature_dim = j.at("feature_dim");
  c.normalize_input = j.at("normalize_input");
  c.lambda = j.at("lambda");
  c.weights = j.at("weights").get<std::vector<double>>();
  c.biases = j.at("biases").get<std::vector<double>>();
  c.class_names = names;
  if (c.weights.size() != static_cast<size_t>(c.num_classes) * c.feature_dim ||
      c.biases.size() != static_cast<size_t>(c.num_classes))
    throw TrainkitError("model: classifier weight shapes inconsistent");
  return c;
}

inline void atomic_write(const std::string& path, const std::string& body) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw TrainkitError(tmp + ": cannot open for writing");
    out << body;
    if (!out) throw TrainkitError(tmp + ": write failed");
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace detail

// Model = one JSON document plus a sibling weight container referenced by
// path and content hash.
inline void save_model(const ClassifierStack& stack, const std::string& path) {
  if (stack.per_iteration.empty())
    throw TrainkitError("save_model: stack has no per-iteration classifiers");
  const std::string weights_name =
      std::filesystem::path(path).filename().string() + ".weights";
  const std::string weights_path =
      (std::filesystem::path(path).parent_path() / weights_name).string();
  save_weights(stack.extractor, weights_path);

  nlohmann::ordered_json j;
  j["format"] = "introspect-model";
  j["version"] = 1;
  j["config"] = {{"iterations", stack.config.iterations},
                 {"beam_width", stack.config.beam_width},
                 {"zoom", stack.config.zoom},
                 {"input_side", stack.config.input_side},
                 {"preserve_aspect", stack.config.preserve_aspect},
                 {"min_side", stack.config.min_side},
                 {"policy", to_string(stack.config.policy)},
                 {"seed", stack.config.seed}};
  j["class_names"] = stack.class_names;
  j["extractor"] = {{"path", weights_name},
                    {"fnv1a", fnv1a_file(weights_path)}};
  auto iters = nlohmann::ordered_json::array();
  for (const auto& c : stack.per_iteration)
    iters.push_back(detail::classifier_to_json(c));
  j["per_iteration"] = std::move(iters);
  auto early = nlohmann::ordered_json::array();
  for (const auto& c : stack.early_fusion)
    early.push_back(detail::classifier_to_json(c));
  j["early_fusion"] = std::move(early);
  detail::atomic_write(path, j.dump(2) + "\n");
}

inline ClassifierStack load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw TrainkitError(path + ": cannot open model");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw TrainkitError(path + ": parse error at byte " + std::to_string(e.byte) +
                        ": " + e.what());
  }
  if (j.value("format", "") != "introspect-model")
    throw TrainkitError(path + ": not a model file");
  if (j.at("version") != 1)
    throw TrainkitError(path + ": unsupported model version");
  ClassifierStack stack;
  const auto& c = j.at("config");
  stack.config.iterations = c.at("iterations");
  stack.config.beam_width = c.at("beam_width");
  stack.config.zoom = c.at("zoom");
  stack.config.input_side = c.at("input_side");
  stack.config.preserve_aspect = c.at("preserve_aspect");
  stack.config.min_side = c.at("min_side");
  stack.config.policy = guide_policy_from_string(c.at("policy"));
  stack.config.seed = c.at("seed");
  stack.class_names = j.at("class_names").get<std::vector<std::string>>();

  const std::string weights_path =
      (std::filesystem::path(path).parent_path() /
       std::string(j.at("extractor").at("path")))
          .string();
  const std::uint64_t expect = j.at("extractor").at("fnv1a");
  const std::uint64_t got = fnv1a_file(weights_path);
  if (expect != got)
    throw TrainkitError(path + ": extractor weight hash mismatch (" +
                        std::to_string(got) + " != " + std::to_string(expect) +
                        ")");
  stack.extractor = load_weights(weights_path);

  for (const auto& cj : j.at("per_iteration"))
    stack.per_iteration.push_back(
        detail::classifier_from_json(cj, stack.class_names));
  for (const auto& cj : j.at("early_fusion"))
    stack.early_fusion.push_back(
        detail::classifier_from_json(cj, stack.class_names));
  if (stack.per_iteration.empty())
    throw TrainkitError(path + ": model lacks the iteration-0 classifier");
  if (stack.early_fusion.size() < stack.per_iteration.size())
    throw TrainkitError(path + ": model lacks early-fusion classifiers");
  for (const auto& clf : stack.per_iteration)
    if (clf.num_classes != static_cast<int>(stack.class_names.size()))
      throw TrainkitError(path + ": classifier class count mismatch");
  return stack;
}

}  // namespace introspect

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace introspect {

struct ClassifierError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::vector<double> l2_normalize(const std::vector<double>& v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  const double norm = std::sqrt(sq);
  if (norm <= 1e-12) return v;
  std::vector<double> out(v.size());
  for (size_t i = 0; i < v.size(); ++i) out[i] = v[i] / norm;
  return out;
}

// Each part is normalized independently before concatenation.
inline std::vector<double> concat_normalized(const std::vector<double>& a,
                                             const std::vector<double>& b) {
  std::vector<double> out = l2_normalize(a);
  const std::vector<double> nb = l2_normalize(b);
  out.insert(out.end(), nb.begin(), nb.end());
  return out;
}

// Numerically stable softmax (max-subtracted).
inline std::vector<double> softmax(const std::vector<double>& scores) {
  if (scores.empty()) return {};
  const double m = *std::max_element(scores.begin(), scores.end());
  std::vector<double> out(scores.size());
  double sum = 0.0;
  for (size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp(scores[i] - m);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

struct ScoreVector {
  std::vector<double> scores;
  std::vector<double> probabilities;
  int predicted = 0;

  static ScoreVector from_scores(std::vector<double> s) {
    ScoreVector sv;
    sv.probabilities = softmax(s);
    sv.scores = std::move(s);
    sv.predicted = static_cast<int>(std::distance(
        sv.scores.begin(),
        std::max_element(sv.scores.begin(), sv.scores.end())));
    return sv;
  }
};

struct SvmConfig {
  double lambda = 1e-4;
  int epochs = 50;
  std::uint64_t seed = 0;
  bool normalize_input = true;
};

// One-vs-rest linear SVM. Weight row c doubles as the CAM weight vector
// for class c; biases enter scores but never activation maps.
struct LinearClassifier {
  int num_classes = 0;
  int feature_dim = 0;
  std::vector<double> weights;  // num_classes * feature_dim, row-major
  std::vector<double> biases;
  bool normalize_input = true;
  std::vector<std::string> class_names;
  double lambda = 1e-4;

  const double* row(int c) const { return &weights[static_cast<size_t>(c) * feature_dim]; }

  std::vector<double> weight_row(int c) const {
    const double* r = row(c);
    return std::vector<double>(r, r + feature_dim);
  }
};

inline ScoreVector score(const LinearClassifier& clf,
                         const std::vector<double>& feat) {
  if (static_cast<int>(feat.size()) != clf.feature_dim)
    throw ClassifierError("score: feature dim " + std::to_string(feat.size()) +
                          " != classifier dim " +
                          std::to_string(clf.feature_dim));
  const std::vector<double> f =
      clf.normalize_input ? l2_normalize(feat) : feat;
  std::vector<double> s(clf.num_classes);
  for (int c = 0; c < clf.num_classes; ++c) {
    const double* w = clf.row(c);
    double acc = clf.biases[c];
    for (int i = 0; i < clf.feature_dim; ++i) acc += w[i] * f[i];
    s[c] = acc;
  }
  return ScoreVector::from_scores(std::move(s));
}

namespace detail {

// Hinge objective (lambda/2)|w|^2 + mean hinge, for one binary problem.
inline double hinge_objective(const std::vector<double>& w, double b,
                              double lambda,
                              const std::vector<std::vector<double>>& xs,
                              const std::vector<int>& ys) {
  double reg = 0.0;
  for (double v : w) reg += v * v;
  reg *= 0.5 * lambda;
  double loss = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    double dot = b;
    for (size_t j = 0; j < w.size(); ++j) dot += w[j] * xs[i][j];
    loss += std::max(0.0, 1.0 - ys[i] * dot);
  }
  return reg + loss / xs.size();
}

}  // namespace detail

// Pegasos-style subgradient descent with averaged iterates, step 1/(lambda*t).
// Epoch permutations are shared across the per-class binary problems so
// training is deterministic for a given seed.
inline LinearClassifier train_svm(const std::vector<std::vector<double>>& features,
                                  const std::vector<int>& labels,
                                  int num_classes, const SvmConfig& cfg,
                                  std::vector<std::string> class_names = {}) {
  const size_t n = features.size();
  if (n == 0 || labels.size() != n)
    throw ClassifierError("train_svm: empty or mismatched training set");
  const int dim = static_cast<int>(features[0].size());
  std::vector<int> counts(num_classes, 0);
  for (size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes)
      throw ClassifierError("train_svm: label out of range at sample " +
                            std::to_string(i));
    counts[labels[i]]++;
    if (static_cast<int>(features[i].size()) != dim)
      throw ClassifierError("train_svm: ragged feature matrix at sample " +
                            std::to_string(i));
    for (double v : features[i])
      if (!std::isfinite(v))
        throw ClassifierError("train_svm: non-finite feature at sample " +
                              std::to_string(i));
  }
  for (int c = 0; c < num_classes; ++c)
    if (counts[c] == 0)
      throw ClassifierError("train_svm: class " + std::to_string(c) +
                            " has no training samples");

  std::vector<std::vector<double>> xs(n);
  for (size_t i = 0; i < n; ++i)
    xs[i] = cfg.normalize_input ? l2_normalize(features[i]) : features[i];

  // One permutation per epoch, shared by every one-vs-rest problem.
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::vector<std::uint32_t>> perms(cfg.epochs);
  for (int e = 0; e < cfg.epochs; ++e) {
    auto& p = perms[e];
    p.resize(n);
    for (size_t i = 0; i < n; ++i) p[i] = static_cast<std::uint32_t>(i);
    for (size_t i = n; i > 1; --i)
      std::swap(p[i - 1], p[rng() % i]);
  }

  LinearClassifier clf;
  clf.num_classes = num_classes;
  clf.feature_dim = dim;
  clf.weights.assign(static_cast<size_t>(num_classes) * dim, 0.0);
  clf.biases.assign(num_classes, 0.0);
  clf.normalize_input = cfg.normalize_input;
  clf.lambda = cfg.lambda;
  clf.class_names = std::move(class_names);
  if (clf.class_names.empty())
    for (int c = 0; c < num_classes; ++c)
      clf.class_names.push_back("class_" + std::to_string(c));

  std::vector<int> ys(n);
  for (int c = 0; c < num_classes; ++c) {
    for (size_t i = 0; i < n; ++i) ys[i] = labels[i] == c ? 1 : -1;
    std::vector<double> w(dim, 0.0), avg_w(dim, 0.0);
    double b = 0.0, avg_b = 0.0;
    std::uint64_t t = 0;
    for (int e = 0; e < cfg.epochs; ++e) {
      for (std::uint32_t idx : perms[e]) {
        ++t;
        const double eta = 1.0 / (cfg.lambda * t);
        const auto& x = xs[idx];
        double dot = b;
        for (int j = 0; j < dim; ++j) dot += w[j] * x[j];
        const double shrink = 1.0 - eta * cfg.lambda;
        if (ys[idx] * dot < 1.0) {
          for (int j = 0; j < dim; ++j)
            w[j] = shrink * w[j] + eta * ys[idx] * x[j];
          // the bias is unregularized, so use a bounded 1/t step instead of
          // the 1/(lambda*t) weight step
          b += ys[idx] / static_cast<double>(t);
        } else {
          for (int j = 0; j < dim; ++j) w[j] = shrink * w[j];
        }
        // project onto the ball of radius 1/sqrt(lambda); tames the huge
        // early steps when lambda is small
        double sq = 0.0;
        for (int j = 0; j < dim; ++j) sq += w[j] * w[j];
        const double limit = 1.0 / std::sqrt(cfg.lambda);
        if (sq > limit * limit) {
          const double scale = limit / std::sqrt(sq);
          for (int j = 0; j < dim; ++j) w[j] *= scale;
        }
        const double keep = static_cast<double>(t - 1) / t;
        for (int j = 0; j < dim; ++j) avg_w[j] = keep * avg_w[j] + w[j] / t;
        avg_b = keep * avg_b + b / t;
      }
    }
    // Return whichever of {averaged, last, zero} iterate minimizes the
    // objective; guarantees J(result) <= J(0) = 1.
    const double j_avg = detail::hinge_objective(avg_w, avg_b, cfg.lambda, xs, ys);
    const double j_last = detail::hinge_objective(w, b, cfg.lambda, xs, ys);
    const std::vector<double> zero(dim, 0.0);
    const double j_zero = detail::hinge_objective(zero, 0.0, cfg.lambda, xs, ys);
    const std::vector<double>* best = &avg_w;
    double best_b = avg_b, best_j = j_avg;
    if (j_last < best_j) { best = &w; best_b = b; best_j = j_last; }
    if (j_zero < best_j) { best = &zero; best_b = 0.0; best_j = j_zero; }
    std::copy(best->begin(), best->end(),
              clf.weights.begin() + static_cast<size_t>(c) * dim);
    clf.biases[c] = best_b;
  }
  return clf;
}

}  // namespace introspect

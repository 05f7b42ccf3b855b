#pragma once

// Classifiers and the decision oracle. The attack sees a model only through
// QueryingOracle::decision, which answers "is this point adversarial?" and
// counts every call.

#include <atomic>
#include <concepts>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Eigenvalues>

#include "hsja/core.hpp"

namespace hsja {

class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual std::size_t input_dim() const = 0;
  virtual int n_classes() const = 0;
  /// Label in [0, n_classes). Throws InvalidInput on a dimension mismatch.
  virtual int classify(ConstVec x) const = 0;

 protected:
  void check_dim(ConstVec x) const {
    if (x.size() != input_dim())
      throw InvalidInput("classify: expected input of dimension " + std::to_string(input_dim()) +
                         ", got " + std::to_string(x.size()));
  }
};

using ClassifierPtr = std::shared_ptr<const Classifier>;

/// Smallest label among those with the highest count.
inline int majority_label(const std::vector<int>& votes, int n_classes) {
  std::vector<int> counts(static_cast<std::size_t>(n_classes), 0);
  for (int v : votes) ++counts[static_cast<std::size_t>(v)];
  int best = 0;
  for (int c = 1; c < n_classes; ++c)
    if (counts[c] > counts[best]) best = c;
  return best;
}

// -------------------------------------------------------------------------
// Analytic binary classifiers with known smooth score s(x); label = [s(x) > 0].

class AnalyticModel final : public Classifier {
 public:
  enum class Kind { Hyperplane, Sphere, Quadratic };

  static AnalyticModel hyperplane(Sample w, double b) {
    if (w.empty()) throw InvalidInput("hyperplane: empty normal");
    AnalyticModel m(Kind::Hyperplane, w.size());
    m.w_ = std::move(w);
    m.b_ = b;
    m.lipschitz_ = 0.0;
    return m;
  }

  /// s(x) = r^2 - ||x - center||^2, positive inside the ball.
  static AnalyticModel sphere(Sample center, double radius) {
    if (center.empty()) throw InvalidInput("sphere: empty center");
    if (!(radius > 0.0)) throw InvalidInput("sphere: radius must be positive");
    AnalyticModel m(Kind::Sphere, center.size());
    m.center_ = std::move(center);
    m.radius_ = radius;
    m.lipschitz_ = 2.0;
    return m;
  }

  /// s(x) = x^T A x + w^T x + b with A symmetric (row-major, d*d entries).
  static AnalyticModel quadratic(std::vector<double> a, Sample w, double b) {
    const std::size_t d = w.size();
    if (d == 0 || a.size() != d * d) throw InvalidInput("quadratic: A must be d x d with d = len(w)");
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < i; ++j)
        if (std::abs(a[i * d + j] - a[j * d + i]) > 1e-12 * (1.0 + std::abs(a[i * d + j])))
          throw InvalidInput("quadratic: A must be symmetric");
    AnalyticModel m(Kind::Quadratic, d);
    m.a_ = std::move(a);
    m.w_ = std::move(w);
    m.b_ = b;
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> mat(
        m.a_.data(), static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(mat, Eigen::EigenvaluesOnly);
    m.lipschitz_ = 2.0 * eig.eigenvalues().cwiseAbs().maxCoeff();
    return m;
  }

  Kind kind() const { return kind_; }
  std::size_t input_dim() const override { return dim_; }
  int n_classes() const override { return 2; }

  int classify(ConstVec x) const override { return score(x) > 0.0 ? 1 : 0; }

  double score(ConstVec x) const {
    check_dim(x);
    switch (kind_) {
      case Kind::Hyperplane:
        return dot(w_, x) + b_;
      case Kind::Sphere: {
        const double r = distance(x, center_, Norm::L2);
        return radius_ * radius_ - r * r;
      }
      case Kind::Quadratic: {
        double s = b_;
        for (std::size_t i = 0; i < dim_; ++i) {
          double row = 0.0;
          for (std::size_t j = 0; j < dim_; ++j) row += a_[i * dim_ + j] * x[j];
          s += x[i] * row + w_[i] * x[i];
        }
        return s;
      }
    }
    return 0.0;
  }

  Sample gradient(ConstVec x) const {
    check_dim(x);
    Sample g(dim_);
    switch (kind_) {
      case Kind::Hyperplane:
        g = w_;
        break;
      case Kind::Sphere:
        for (std::size_t i = 0; i < dim_; ++i) g[i] = -2.0 * (x[i] - center_[i]);
        break;
      case Kind::Quadratic:
        for (std::size_t i = 0; i < dim_; ++i) {
          double row = 0.0;
          for (std::size_t j = 0; j < dim_; ++j) row += a_[i * dim_ + j] * x[j];
          g[i] = 2.0 * row + w_[i];
        }
        break;
    }
    return g;
  }

  /// Lipschitz constant of the score gradient.
  double lipschitz() const { return lipschitz_; }

  const Sample& normal() const { return w_; }  // hyperplane / quadratic linear term
  double offset() const { return b_; }
  const Sample& center() const { return center_; }
  double radius() const { return radius_; }
  const std::vector<double>& quadratic_matrix() const { return a_; }

 private:
  AnalyticModel(Kind k, std::size_t d) : kind_(k), dim_(d) {}

  Kind kind_;
  std::size_t dim_;
  Sample w_;
  double b_ = 0.0;
  Sample center_;
  double radius_ = 0.0;
  std::vector<double> a_;
  double lipschitz_ = 0.0;
};

// -------------------------------------------------------------------------
// Multilayer perceptron. The last layer's outputs are logits.

enum class Activation { Relu, Identity };

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weights;  // row-major, out x in
  std::vector<double> bias;     // out
  Activation activation = Activation::Identity;
};

class MlpModel final : public Classifier {
 public:
  MlpModel(std::size_t input_dim, int n_classes, std::vector<DenseLayer> layers)
      : input_dim_(input_dim), n_classes_(n_classes), layers_(std::move(layers)) {
    if (layers_.empty()) throw ModelLoadError("layers: at least one layer is required");
    std::size_t width = input_dim_;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& layer = layers_[l];
      const auto where = "layers[" + std::to_string(l) + "]";
      if (layer.in != width)
        throw ModelLoadError(where + ".weights: expected " + std::to_string(width) + " columns, got " +
                             std::to_string(layer.in));
      if (layer.weights.size() != layer.in * layer.out)
        throw ModelLoadError(where + ".weights: ragged matrix");
      if (layer.bias.size() != layer.out)
        throw ModelLoadError(where + ".bias: expected length " + std::to_string(layer.out) + ", got " +
                             std::to_string(layer.bias.size()));
      width = layer.out;
    }
    if (width != static_cast<std::size_t>(n_classes_))
      throw ModelLoadError("layers: final layer width " + std::to_string(width) + " != n_classes " +
                           std::to_string(n_classes_));
  }

  std::size_t input_dim() const override { return input_dim_; }
  int n_classes() const override { return n_classes_; }

  std::vector<double> logits(ConstVec x) const {
    check_dim(x);
    std::vector<double> h(x.begin(), x.end());
    for (const auto& layer : layers_) {
      std::vector<double> next(layer.out);
      for (std::size_t o = 0; o < layer.out; ++o) {
        double acc = layer.bias[o];
        for (std::size_t i = 0; i < layer.in; ++i) acc += layer.weights[o * layer.in + i] * h[i];
        next[o] = layer.activation == Activation::Relu ? std::max(acc, 0.0) : acc;
      }
      h = std::move(next);
    }
    return h;
  }

  int classify(ConstVec x) const override {
    const auto z = logits(x);
    return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
  }

  const std::vector<DenseLayer>& layers() const { return layers_; }

 private:
  std::size_t input_dim_;
  int n_classes_;
  std::vector<DenseLayer> layers_;
};

// -------------------------------------------------------------------------
// Tree ensemble with optional input binarisation and majority vote.

struct TreeSplit {
  std::size_t feature = 0;
  double threshold = 0.0;
  std::size_t left = 0;
  std::size_t right = 0;
};

struct TreeLeaf {
  int label = 0;
};

using TreeNode = std::variant<TreeSplit, TreeLeaf>;

struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
};

class TreeEnsembleModel final : public Classifier {
 public:
  TreeEnsembleModel(std::size_t input_dim, int n_classes, std::optional<double> binarize_threshold,
                    std::vector<Tree> trees)
      : input_dim_(input_dim),
        n_classes_(n_classes),
        binarize_threshold_(binarize_threshold),
        trees_(std::move(trees)) {
    if (trees_.empty()) throw ModelLoadError("trees: at least one tree is required");
    if (binarize_threshold_ && !(*binarize_threshold_ > 0.0 && *binarize_threshold_ < 1.0))
      throw ModelLoadError("binarize_threshold: must lie in (0, 1)");
    for (std::size_t t = 0; t < trees_.size(); ++t) validate(t);
  }

  std::size_t input_dim() const override { return input_dim_; }
  int n_classes() const override { return n_classes_; }
  std::optional<double> binarize_threshold() const { return binarize_threshold_; }
  const std::vector<Tree>& trees() const { return trees_; }

  int tree_label(std::size_t t, ConstVec features) const {
    const auto& nodes = trees_[t].nodes;
    std::size_t i = 0;
    while (const auto* split = std::get_if<TreeSplit>(&nodes[i]))
      i = features[split->feature] <= split->threshold ? split->left : split->right;
    return std::get<TreeLeaf>(nodes[i]).label;
  }

  int classify(ConstVec x) const override {
    check_dim(x);
    std::vector<double> features(x.begin(), x.end());
    if (binarize_threshold_)
      for (double& v : features) v = v > *binarize_threshold_ ? 1.0 : 0.0;
    std::vector<int> votes;
    votes.reserve(trees_.size());
    for (std::size_t t = 0; t < trees_.size(); ++t) votes.push_back(tree_label(t, features));
    return majority_label(votes, n_classes_);
  }

 private:
  void validate(std::size_t t) const {
    const auto& nodes = trees_[t].nodes;
    const auto where = "trees[" + std::to_string(t) + "]";
    if (nodes.empty()) throw ModelLoadError(where + ".nodes: empty tree");
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const auto here = where + ".nodes[" + std::to_string(i) + "]";
      if (const auto* s = std::get_if<TreeSplit>(&nodes[i])) {
        if (s->feature >= input_dim_) throw ModelLoadError(here + ".feature: index out of range");
        if (s->left >= nodes.size() || s->right >= nodes.size())
          throw ModelLoadError(here + ": dangling child index");
      } else {
        const int label = std::get<TreeLeaf>(nodes[i]).label;
        if (label < 0 || label >= n_classes_) throw ModelLoadError(here + ".leaf: label out of range");
      }
    }
    // Every path from the root must end in a leaf.
    std::vector<int> state(nodes.size(), 0);  // 0 unseen, 1 on stack, 2 done
    std::vector<std::pair<std::size_t, int>> stack{{0, 0}};
    state[0] = 1;
    while (!stack.empty()) {
      auto& [node, next_child] = stack.back();
      const auto* s = std::get_if<TreeSplit>(&nodes[node]);
      if (!s || next_child == 2) {
        state[node] = 2;
        stack.pop_back();
        continue;
      }
      const std::size_t child = next_child++ == 0 ? s->left : s->right;
      if (state[child] == 1) throw ModelLoadError(where + ": cycle through node " + std::to_string(child));
      if (state[child] == 0) {
        state[child] = 1;
        stack.emplace_back(child, 0);
      }
    }
  }

  std::size_t input_dim_;
  int n_classes_;
  std::optional<double> binarize_threshold_;
  std::vector<Tree> trees_;
};

// -------------------------------------------------------------------------
// Region-based classification: majority vote of the base model over uniform
// noise in a hypercube around the input. Holds its own random stream, so an
// instance must be confined to one worker at a time.

class RegionBasedWrapper final : public Classifier {
 public:
  RegionBasedWrapper(ClassifierPtr base, double noise_radius, int n_votes, RngStream rng)
      : base_(std::move(base)), noise_radius_(noise_radius), n_votes_(n_votes), rng_(rng) {
    if (!base_) throw InvalidInput("region-based wrapper: null base classifier");
    if (!(noise_radius_ > 0.0)) throw InvalidInput("region-based wrapper: noise_radius must be > 0");
    if (n_votes_ < 1) throw InvalidInput("region-based wrapper: n_votes must be >= 1");
  }

  std::size_t input_dim() const override { return base_->input_dim(); }
  int n_classes() const override { return base_->n_classes(); }
  const Classifier& base() const { return *base_; }
  double noise_radius() const { return noise_radius_; }
  int n_votes() const { return n_votes_; }

  int classify(ConstVec x) const override {
    check_dim(x);
    std::vector<int> votes;
    votes.reserve(static_cast<std::size_t>(n_votes_));
    Sample noisy(x.size());
    for (int v = 0; v < n_votes_; ++v) {
      for (std::size_t i = 0; i < x.size(); ++i)
        noisy[i] = std::clamp(x[i] + rng_.uniform(-noise_radius_, noise_radius_), 0.0, 1.0);
      votes.push_back(base_->classify(noisy));
    }
    return majority_label(votes, n_classes());
  }

 private:
  ClassifierPtr base_;
  double noise_radius_;
  int n_votes_;
  mutable RngStream rng_;
};

/// Adapts an arbitrary labelling function; used for synthetic oracles in tests
/// and experiments.
class FunctionClassifier final : public Classifier {
 public:
  FunctionClassifier(std::size_t dim, int n_classes, std::function<int(ConstVec)> fn)
      : dim_(dim), n_classes_(n_classes), fn_(std::move(fn)) {}
  std::size_t input_dim() const override { return dim_; }
  int n_classes() const override { return n_classes_; }
  int classify(ConstVec x) const override {
    check_dim(x);
    return fn_(x);
  }

 private:
  std::size_t dim_;
  int n_classes_;
  std::function<int(ConstVec)> fn_;
};

// -------------------------------------------------------------------------
// Objective and querying oracle

class AttackObjective {
 public:
  static AttackObjective untargeted(ClassifierPtr model, int original_label) {
    return AttackObjective(std::move(model), false, original_label);
  }
  static AttackObjective targeted(ClassifierPtr model, int target_label) {
    return AttackObjective(std::move(model), true, target_label);
  }
  /// Untargeted objective whose original label is the model's prediction at x_star.
  static AttackObjective untargeted_at(ClassifierPtr model, ConstVec x_star) {
    const int label = model->classify(x_star);
    return untargeted(std::move(model), label);
  }

  bool targeted() const { return targeted_; }
  int label() const { return label_; }
  const Classifier& model() const { return *model_; }
  const ClassifierPtr& model_ptr() const { return model_; }

  bool is_success_label(int label) const { return targeted_ ? label == label_ : label != label_; }
  bool success(ConstVec x) const { return is_success_label(model_->classify(x)); }

 private:
  AttackObjective(ClassifierPtr model, bool targeted, int label)
      : model_(std::move(model)), targeted_(targeted), label_(label) {
    if (!model_) throw InvalidInput("objective: null classifier");
    if (label_ < 0 || label_ >= model_->n_classes()) throw InvalidInput("objective: label out of range");
  }

  ClassifierPtr model_;
  bool targeted_;
  int label_;
};

/// Decision oracle with exact query accounting. The budget check and the
/// counter increment happen as one atomic step.
class QueryingOracle {
 public:
  static constexpr std::uint64_t kNoCap = std::numeric_limits<std::uint64_t>::max();

  explicit QueryingOracle(AttackObjective objective, std::optional<std::uint64_t> cap = std::nullopt)
      : objective_(std::move(objective)), cap_(cap.value_or(kNoCap)) {}

  QueryingOracle(const QueryingOracle&) = delete;
  QueryingOracle& operator=(const QueryingOracle&) = delete;

  bool decision(ConstVec x) {
    std::uint64_t n = count_.load(std::memory_order_relaxed);
    do {
      if (n >= cap_.load(std::memory_order_relaxed)) throw BudgetExhausted();
    } while (!count_.compare_exchange_weak(n, n + 1, std::memory_order_relaxed));
    return objective_.success(x);
  }

  std::uint64_t query_count() const { return count_.load(std::memory_order_relaxed); }

  std::optional<std::uint64_t> cap() const {
    const auto c = cap_.load(std::memory_order_relaxed);
    return c == kNoCap ? std::nullopt : std::optional<std::uint64_t>(c);
  }
  void set_cap(std::optional<std::uint64_t> cap) { cap_.store(cap.value_or(kNoCap), std::memory_order_relaxed); }

  const AttackObjective& objective() const { return objective_; }

 private:
  AttackObjective objective_;
  std::atomic<std::uint64_t> count_{0};
  std::atomic<std::uint64_t> cap_;
};

/// What the attacks require of an oracle.
template <class O>
concept DecisionOracle = requires(O& o, const O& co, ConstVec x, std::optional<std::uint64_t> cap) {
  { o.decision(x) } -> std::convertible_to<bool>;
  { co.query_count() } -> std::convertible_to<std::uint64_t>;
  { co.cap() } -> std::same_as<std::optional<std::uint64_t>>;
  o.set_cap(cap);
};

/// Temporarily replaces an oracle's cap; the previous cap is restored on exit.
template <DecisionOracle O>
class ScopedCap {
 public:
  ScopedCap(O& oracle, std::optional<std::uint64_t> cap) : oracle_(oracle), saved_(oracle.cap()) {
    oracle_.set_cap(cap);
  }
  ~ScopedCap() { oracle_.set_cap(saved_); }
  ScopedCap(const ScopedCap&) = delete;
  ScopedCap& operator=(const ScopedCap&) = delete;

 private:
  O& oracle_;
  std::optional<std::uint64_t> saved_;
};

/// +1 if the objective's success side of an analytic model is {s > 0}, else -1.
/// Multiplying the model score by this gives the success margin S(x).
inline double success_sign(const AttackObjective& objective) {
  const bool label_one_succeeds = objective.is_success_label(1);
  return label_one_succeeds ? 1.0 : -1.0;
}

}  // namespace hsja

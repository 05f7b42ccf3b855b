#pragma once

// Experiment runner: distance-vs-queries curves for HSJA and Boundary Attack,
// success rate vs. distance threshold, and the sensitivity studies for the
// probe radius, the baseline and the step-size rule.

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "hsja/attack.hpp"
#include "hsja/boundary_attack.hpp"
#include "hsja/core.hpp"
#include "hsja/io.hpp"
#include "hsja/oracle.hpp"

namespace hsja {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// -------------------------------------------------------------------------
// Standard analytic oracles on the unit cube, generated from a seed.
//
//   hyperplane: unit normal w ~ sphere, plane through the cube centre.
//   sphere:     centre at the cube centre, radius 0.3.
//   quadratic:  ellipsoid (x - c)^T A (x - c) = 0.3^2 with A = I + 0.5 S,
//               S symmetric with spectral radius 1; adversarial outside.

inline constexpr double kStandardRadius = 0.3;

inline std::shared_ptr<const AnalyticModel> make_standard_analytic(std::string_view kind, std::size_t d,
                                                                   std::uint64_t seed) {
  if (d == 0) throw InvalidInput("analytic oracle: dimension must be >= 1");
  RngStream rng(seed, 0);
  const Sample centre(d, 0.5);
  if (kind == "hyperplane") {
    auto w = sample_unit_sphere(d, rng);
    const double b = -dot(w, centre);
    return std::make_shared<AnalyticModel>(AnalyticModel::hyperplane(std::move(w), b));
  }
  if (kind == "sphere") return std::make_shared<AnalyticModel>(AnalyticModel::sphere(centre, kStandardRadius));
  if (kind == "quadratic") {
    Eigen::MatrixXd s(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < s.rows(); ++i)
      for (Eigen::Index j = 0; j < s.cols(); ++j) s(i, j) = rng.normal();
    s = 0.5 * (s + s.transpose()).eval();
    const double spectral = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(s, Eigen::EigenvaluesOnly)
                                .eigenvalues()
                                .cwiseAbs()
                                .maxCoeff();
    Eigen::MatrixXd a = Eigen::MatrixXd::Identity(s.rows(), s.cols()) + 0.5 * s / spectral;
    a = 0.5 * (a + a.transpose()).eval();
    std::vector<double> flat(d * d);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) flat[i * d + j] = a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    const Eigen::VectorXd c = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(d), 0.5);
    const Eigen::VectorXd lin = -2.0 * a * c;
    const double b = c.dot(a * c) - kStandardRadius * kStandardRadius;
    return std::make_shared<AnalyticModel>(
        AnalyticModel::quadratic(std::move(flat), Sample(lin.data(), lin.data() + lin.size()), b));
  }
  throw InvalidInput("unknown analytic oracle '" + std::string(kind) + "' (expected hyperplane, sphere or quadratic)");
}

/// Distance from the boundary point along the ray centre + s u (s > 0).
inline double ray_to_boundary(const AnalyticModel& m, ConstVec centre, ConstVec u) {
  // Bisection on s with s_max chosen where the sign flips.
  auto at = [&](double s) { return m.score(axpy(centre, s, u)); };
  const double s0 = at(0.0);
  double hi = 1e-3;
  while (at(hi) * s0 > 0.0 && hi < 1e3) hi *= 2.0;
  double lo = 0.0;
  for (int i = 0; i < 200 && hi - lo > 0.0; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    if (at(mid) * s0 > 0.0)
      lo = mid;
    else
      hi = mid;
  }
  return hi;
}

/// Random original samples for a standard analytic oracle. For the hyperplane
/// they are uniform in [0.25, 0.75]^d; for the sphere and quadratic they lie
/// inside the closed boundary at 10%..70% of the way from the centre.
inline std::vector<Sample> standard_samples(const AnalyticModel& m, std::size_t n, RngStream& rng) {
  const std::size_t d = m.input_dim();
  const Sample centre(d, 0.5);
  std::vector<Sample> out;
  for (std::size_t k = 0; k < n; ++k) {
    if (m.kind() == AnalyticModel::Kind::Hyperplane) {
      Sample x(d);
      for (double& v : x) v = rng.uniform(0.25, 0.75);
      out.push_back(std::move(x));
    } else {
      const auto u = sample_unit_sphere(d, rng);
      const double reach = ray_to_boundary(m, centre, u);
      out.push_back(axpy(centre, rng.uniform(0.1, 0.7) * reach, u));
    }
  }
  return out;
}

/// Analytic l2 distance from x_star to the boundary, where it is known in
/// closed form (hyperplane, sphere); nullopt for the quadratic.
inline std::optional<double> analytic_optimum(const AnalyticModel& m, ConstVec x_star) {
  switch (m.kind()) {
    case AnalyticModel::Kind::Hyperplane: return std::abs(m.score(x_star)) / norm2(m.normal());
    case AnalyticModel::Kind::Sphere: return std::abs(m.radius() - distance(x_star, m.center(), Norm::L2));
    case AnalyticModel::Kind::Quadratic: return std::nullopt;
  }
  return std::nullopt;
}

/// Gradient of the success margin S_x*(x) for an analytic model.
inline Sample success_gradient(const AnalyticModel& m, const AttackObjective& objective, ConstVec x) {
  auto g = m.gradient(x);
  const double s = success_sign(objective);
  for (double& v : g) v *= s;
  return g;
}

// -------------------------------------------------------------------------
// Statistics

struct CurvePoint {
  std::uint64_t queries = 0;
  double median = kInf;
  double q1 = kInf;
  double q3 = kInf;
};

/// Linear-interpolation quantile of a sample; +inf values sort last and an
/// interpolation touching one yields +inf.
inline double quantile(std::vector<double> values, double p) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const double pos = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = static_cast<std::size_t>(std::ceil(pos));
  if (lo == hi) return values[lo];
  if (std::isinf(values[lo]) || std::isinf(values[hi])) return kInf;
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

inline double median(std::vector<double> values) { return quantile(std::move(values), 0.5); }

inline CurvePoint curve_point(std::uint64_t queries, const std::vector<double>& values) {
  return {queries, quantile(values, 0.5), quantile(values, 0.25), quantile(values, 0.75)};
}

/// Least-squares slope of y against x.
inline double ls_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

/// original accuracy x (1 - success rate).
inline double perturbed_accuracy(double original_accuracy, double success_rate) {
  return original_accuracy * (1.0 - success_rate);
}

// -------------------------------------------------------------------------
// Parallel loop with deterministic result placement.

template <class F>
void parallel_for(std::size_t n, int jobs, F&& body) {
  const auto workers = static_cast<std::size_t>(std::max(1, jobs));
  if (workers == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, n); ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          body(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// -------------------------------------------------------------------------
// Benchmark specification

struct OracleSpec {
  std::string kind = "hyperplane";  // hyperplane | sphere | quadratic | model
  std::size_t dim = 20;
  std::uint64_t seed = 0;
  std::string path;  // kind == "model"
  std::optional<double> region_radius;
  int region_votes = 25;
};

struct BenchmarkSpec {
  OracleSpec oracle;
  std::vector<std::string> attacks{"hsja", "boundary"};
  Norm norm = Norm::L2;
  bool targeted = false;
  std::optional<int> target_label;
  std::vector<Sample> samples;
  std::vector<int> labels;  // optional ground truth, same length as samples
  std::vector<std::uint64_t> checkpoints{1000, 5000, 20000};
  std::vector<double> thresholds;
  int repetitions = 1;
  std::uint64_t seed = 0;
  int jobs = 1;
  // HSJA
  int iterations = 1000;
  int initial_batch = 100;
  std::optional<double> theta_override;
  bool use_baseline = true;
  // Boundary Attack
  BoundaryConfig boundary;

  nlohmann::json source = nlohmann::json::object();  // echoed into the report
};

struct SpecError : InvalidInput {
  std::vector<std::string> fields;
  explicit SpecError(std::vector<std::string> f) : InvalidInput(join(f)), fields(std::move(f)) {}

 private:
  static std::string join(const std::vector<std::string>& f) {
    std::string s = "invalid benchmark spec:";
    for (const auto& x : f) s += "\n  " + x;
    return s;
  }
};

namespace detail {

inline std::vector<Sample> sample_list(const nlohmann::json& j, const std::string& field,
                                       std::vector<std::string>& errors) {
  std::vector<Sample> out;
  if (!j.is_array()) {
    errors.push_back(field + ": expected an array of samples");
    return out;
  }
  for (std::size_t i = 0; i < j.size(); ++i) {
    try {
      out.push_back(real_array(j[i], field + "[" + std::to_string(i) + "]"));
    } catch (const std::exception& e) {
      errors.emplace_back(e.what());
    }
  }
  return out;
}

}  // namespace detail

/// Parses and validates a benchmark spec. Relative paths resolve against
/// base_dir. Every violated field is reported in one SpecError.
inline BenchmarkSpec parse_benchmark_spec(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  BenchmarkSpec s;
  std::vector<std::string> errors;
  if (!j.is_object()) throw SpecError({"<root>: expected a JSON object"});
  s.source = j;

  auto get = [&](const nlohmann::json& obj, const char* key, auto& out, const std::string& where) {
    if (!obj.contains(key)) return;
    try {
      obj.at(key).get_to(out);
    } catch (const nlohmann::json::exception&) {
      errors.push_back(where + key + ": wrong type");
    }
  };

  if (!j.contains("oracle") || !j.at("oracle").is_object()) {
    errors.emplace_back("oracle: missing or not an object");
  } else {
    const auto& o = j.at("oracle");
    get(o, "kind", s.oracle.kind, "oracle.");
    get(o, "dim", s.oracle.dim, "oracle.");
    get(o, "seed", s.oracle.seed, "oracle.");
    get(o, "path", s.oracle.path, "oracle.");
    static const std::vector<std::string> kinds{"hyperplane", "sphere", "quadratic", "model"};
    if (std::find(kinds.begin(), kinds.end(), s.oracle.kind) == kinds.end())
      errors.push_back("oracle.kind: unknown kind '" + s.oracle.kind + "'");
    if (s.oracle.kind == "model") {
      if (s.oracle.path.empty())
        errors.emplace_back("oracle.path: required for model oracles");
      else if (!base_dir.empty() && std::filesystem::path(s.oracle.path).is_relative())
        s.oracle.path = (base_dir / s.oracle.path).string();
    } else if (s.oracle.dim == 0) {
      errors.emplace_back("oracle.dim: must be >= 1");
    }
    if (o.contains("region_based")) {
      const auto& r = o.at("region_based");
      double radius = 0.0;
      get(r, "radius", radius, "oracle.region_based.");
      get(r, "votes", s.oracle.region_votes, "oracle.region_based.");
      if (!(radius > 0.0)) errors.emplace_back("oracle.region_based.radius: must be > 0");
      if (s.oracle.region_votes < 1) errors.emplace_back("oracle.region_based.votes: must be >= 1");
      s.oracle.region_radius = radius;
    }
  }

  get(j, "attacks", s.attacks, "");
  if (s.attacks.empty()) errors.emplace_back("attacks: at least one attack is required");
  for (const auto& a : s.attacks)
    if (a != "hsja" && a != "boundary") errors.push_back("attacks: unknown attack '" + a + "'");

  std::string norm = "l2";
  get(j, "norm", norm, "");
  try {
    s.norm = parse_norm(norm);
  } catch (const InvalidInput&) {
    errors.push_back("norm: unknown norm '" + norm + "'");
  }
  if (s.norm == Norm::Linf && std::find(s.attacks.begin(), s.attacks.end(), "boundary") != s.attacks.end())
    errors.emplace_back("attacks: boundary attack supports only the l2 norm");

  get(j, "targeted", s.targeted, "");
  if (j.contains("target_label")) {
    int t = 0;
    get(j, "target_label", t, "");
    s.target_label = t;
  }
  if (s.targeted && !s.target_label) errors.emplace_back("target_label: required for targeted benchmarks");

  if (!j.contains("samples")) {
    errors.emplace_back("samples: missing");
  } else {
    const auto& sj = j.at("samples");
    if (sj.is_array()) {
      s.samples = detail::sample_list(sj, "samples", errors);
    } else if (sj.is_object() && sj.contains("file")) {
      auto path = std::filesystem::path(sj.at("file").get<std::string>());
      if (!base_dir.empty() && path.is_relative()) path = base_dir / path;
      try {
        s.samples = detail::sample_list(nlohmann::json::parse(detail::read_text(path)), "samples.file", errors);
      } catch (const std::exception& e) {
        errors.push_back(std::string("samples.file: ") + e.what());
      }
    } else if (sj.is_object() && sj.contains("random")) {
      if (s.oracle.kind == "model") errors.emplace_back("samples.random: only available for analytic oracles");
      std::size_t n = 0;
      std::uint64_t seed = 0;
      get(sj, "random", n, "samples.");
      get(sj, "seed", seed, "samples.");
      if (n == 0) errors.emplace_back("samples.random: must be >= 1");
      if (errors.empty()) {
        const auto model = make_standard_analytic(s.oracle.kind, s.oracle.dim, s.oracle.seed);
        RngStream rng(seed, 7);
        s.samples = standard_samples(*model, n, rng);
      }
    } else {
      errors.emplace_back("samples: expected an array, {\"file\": path} or {\"random\": n}");
    }
    if (sj.is_object() && sj.contains("labels")) get(sj, "labels", s.labels, "samples.");
  }
  if (j.contains("labels")) get(j, "labels", s.labels, "");
  if (!s.labels.empty() && s.labels.size() != s.samples.size())
    errors.emplace_back("labels: length differs from samples");
  if (j.contains("samples") && s.samples.empty() && errors.empty()) errors.emplace_back("samples: empty sample set");

  get(j, "checkpoints", s.checkpoints, "");
  if (s.checkpoints.empty()) errors.emplace_back("checkpoints: at least one checkpoint is required");
  for (std::size_t i = 1; i < s.checkpoints.size(); ++i)
    if (s.checkpoints[i] <= s.checkpoints[i - 1]) {
      errors.emplace_back("checkpoints: must be strictly increasing");
      break;
    }
  get(j, "thresholds", s.thresholds, "");
  get(j, "repetitions", s.repetitions, "");
  if (s.repetitions < 1) errors.emplace_back("repetitions: must be >= 1");
  get(j, "seed", s.seed, "");
  get(j, "jobs", s.jobs, "");

  if (j.contains("hsja")) {
    const auto& h = j.at("hsja");
    get(h, "iterations", s.iterations, "hsja.");
    get(h, "initial_batch", s.initial_batch, "hsja.");
    get(h, "baseline", s.use_baseline, "hsja.");
    if (h.contains("theta") && !h.at("theta").is_null()) {
      double t = 0;
      get(h, "theta", t, "hsja.");
      s.theta_override = t;
    }
    if (s.iterations < 1) errors.emplace_back("hsja.iterations: must be >= 1");
    if (s.initial_batch < 2) errors.emplace_back("hsja.initial_batch: must be >= 2");
  }
  if (j.contains("boundary")) {
    const auto& b = j.at("boundary");
    get(b, "orthogonal_step", s.boundary.orthogonal_step, "boundary.");
    get(b, "source_step", s.boundary.source_step, "boundary.");
    get(b, "adaptation_factor", s.boundary.adaptation_factor, "boundary.");
    get(b, "success_window", s.boundary.success_window, "boundary.");
    try {
      s.boundary.validate();
    } catch (const InvalidInput& e) {
      errors.push_back(std::string("boundary: ") + e.what());
    }
  }
  // Region-based oracles need the coarser bisection threshold.
  if (s.oracle.region_radius && !s.theta_override) s.theta_override = 0.01;

  if (!errors.empty()) throw SpecError(std::move(errors));
  return s;
}

inline BenchmarkSpec load_benchmark_spec(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_text(path));
  } catch (const std::exception& e) {
    throw SpecError({std::string("<file>: ") + e.what()});
  }
  return parse_benchmark_spec(j, path.parent_path());
}

// -------------------------------------------------------------------------
// Benchmark execution

struct RunResult {
  std::string attack;
  std::size_t sample = 0;
  int repetition = 0;
  std::vector<std::pair<std::uint64_t, double>> points;  // (cumulative queries, certified distance)
  bool success = false;
  std::uint64_t queries_used = 0;
  std::string error;

  /// Best distance among records spent within `checkpoint` queries.
  double best_at(std::uint64_t checkpoint) const {
    double best = kInf;
    for (const auto& [q, dist] : points)
      if (q <= checkpoint) best = std::min(best, dist);
    return best;
  }
  std::uint64_t queries_at(std::uint64_t checkpoint) const {
    std::uint64_t last = 0;
    double best = kInf;
    for (const auto& [q, dist] : points)
      if (q <= checkpoint && dist < best) {
        best = dist;
        last = q;
      }
    return last;
  }
};

struct BenchmarkReport {
  nlohmann::json spec_echo;
  std::vector<std::string> attacks;
  std::vector<std::uint64_t> checkpoints;
  std::vector<double> thresholds;
  Norm norm = Norm::L2;
  std::size_t n_samples = 0;
  std::size_t n_correct = 0;
  double original_accuracy = 1.0;
  std::vector<RunResult> runs;  // ordered by (sample, repetition, attack)
  std::map<std::string, std::vector<CurvePoint>> curves;

  std::string sample_id(const RunResult& r, int repetitions) const {
    return repetitions > 1 ? std::to_string(r.sample) + "/" + std::to_string(r.repetition) : std::to_string(r.sample);
  }
};

/// Stream seed for one (sample, repetition) run; independent of the other samples.
inline std::uint64_t run_seed(std::uint64_t master, std::size_t sample, int repetition) {
  return detail::splitmix64(master ^ detail::splitmix64(0x5A17ULL + sample) ^
                            detail::splitmix64(0xBEEFULL + static_cast<std::uint64_t>(repetition) * 0x9E37ULL));
}

/// Builds the base classifier named by an oracle spec.
inline ClassifierPtr make_base_classifier(const OracleSpec& o) {
  if (o.kind == "model") return load_model(o.path);
  return make_standard_analytic(o.kind, o.dim, o.seed);
}

namespace detail {

inline ClassifierPtr wrap_for_run(const OracleSpec& o, const ClassifierPtr& base, std::uint64_t seed) {
  if (!o.region_radius) return base;
  return std::make_shared<RegionBasedWrapper>(base, *o.region_radius, o.region_votes, RngStream(seed, 11));
}

inline std::vector<std::pair<std::uint64_t, double>> points_of(const AttackTrace& tr) {
  std::vector<std::pair<std::uint64_t, double>> pts;
  for (const auto& r : tr.records) pts.emplace_back(r.queries, r.distance);
  return pts;
}

}  // namespace detail

inline BenchmarkReport run_benchmark(const BenchmarkSpec& spec) {
  BenchmarkReport report;
  report.spec_echo = spec.source;
  report.attacks = spec.attacks;
  report.checkpoints = spec.checkpoints;
  report.thresholds = spec.thresholds;
  report.norm = spec.norm;
  report.n_samples = spec.samples.size();

  const ClassifierPtr base = make_base_classifier(spec.oracle);
  for (const auto& x : spec.samples)
    if (x.size() != base->input_dim())
      throw InvalidInput("samples: dimension " + std::to_string(x.size()) + " does not match the oracle (" +
                         std::to_string(base->input_dim()) + ")");

  // Correctly classified samples only (all of them when no labels are given).
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < spec.samples.size(); ++i) {
    const bool correct = spec.labels.empty() || base->classify(spec.samples[i]) == spec.labels[i];
    if (!correct) continue;
    if (spec.targeted && base->classify(spec.samples[i]) == *spec.target_label) continue;
    eligible.push_back(i);
  }
  report.n_correct = spec.labels.empty() ? spec.samples.size()
                                         : static_cast<std::size_t>(std::count_if(
                                               spec.samples.begin(), spec.samples.end(), [&](const Sample& x) {
                                                 const auto i = static_cast<std::size_t>(&x - spec.samples.data());
                                                 return base->classify(x) == spec.labels[i];
                                               }));
  report.original_accuracy =
      spec.samples.empty() ? 0.0 : static_cast<double>(report.n_correct) / static_cast<double>(spec.samples.size());

  std::vector<std::size_t> target_pool;
  if (spec.targeted)
    for (std::size_t i = 0; i < spec.samples.size(); ++i)
      if (base->classify(spec.samples[i]) == *spec.target_label) target_pool.push_back(i);

  const std::uint64_t budget = spec.checkpoints.back();
  const std::size_t n_attacks = spec.attacks.size();
  const std::size_t n_runs = eligible.size() * static_cast<std::size_t>(spec.repetitions) * n_attacks;
  report.runs.resize(n_runs);

  parallel_for(n_runs, spec.jobs, [&](std::size_t k) {
    const std::size_t a = k % n_attacks;
    const int rep = static_cast<int>((k / n_attacks) % static_cast<std::size_t>(spec.repetitions));
    const std::size_t sample = eligible[k / n_attacks / static_cast<std::size_t>(spec.repetitions)];
    const auto seed = run_seed(spec.seed, sample, rep);
    const Sample& x_star = spec.samples[sample];

    RunResult& out = report.runs[k];
    out.attack = spec.attacks[a];
    out.sample = sample;
    out.repetition = rep;

    const auto model = detail::wrap_for_run(spec.oracle, base, seed);
    auto objective = spec.targeted ? AttackObjective::targeted(model, *spec.target_label)
                                   : AttackObjective::untargeted(model, base->classify(x_star));
    QueryingOracle oracle(std::move(objective));

    std::optional<Sample> x_init;
    if (spec.targeted) {
      if (target_pool.empty()) {
        out.error = "no sample of the target class available for initialisation";
        return;
      }
      RngStream pick(seed, 5);
      x_init = spec.samples[target_pool[pick.next_u64() % target_pool.size()]];
    }

    try {
      if (out.attack == "hsja") {
        AttackConfig cfg;
        cfg.norm = spec.norm;
        cfg.targeted = spec.targeted;
        cfg.target_label = spec.target_label;
        cfg.iterations = spec.iterations;
        cfg.initial_batch = spec.initial_batch;
        cfg.max_queries = budget;
        cfg.theta_override = spec.theta_override;
        cfg.use_baseline = spec.use_baseline;
        cfg.seed = seed;
        const auto tr = hsja_attack(oracle, x_star, cfg, x_init);
        out.points = detail::points_of(tr);
        out.success = tr.success;
        out.queries_used = tr.queries_used;
      } else {
        BoundaryConfig cfg = spec.boundary;
        cfg.seed = seed;
        cfg.max_queries = budget;
        const auto tr = boundary_attack_with_init(oracle, x_star, cfg, x_init);
        out.points = detail::points_of(tr);
        out.success = tr.success;
        out.queries_used = tr.queries_used;
      }
    } catch (const InitializationFailed& e) {
      out.error = e.what();
    } catch (const InvalidInitialization& e) {
      out.error = e.what();
    }
  });

  for (const auto& attack : spec.attacks) {
    auto& curve = report.curves[attack];
    for (auto cp : spec.checkpoints) {
      std::vector<double> values;
      for (const auto& r : report.runs)
        if (r.attack == attack) values.push_back(r.best_at(cp));
      curve.push_back(curve_point(cp, values));
    }
  }
  return report;
}

// -------------------------------------------------------------------------
// Success rate vs. distance threshold

struct SuccessRow {
  std::string attack;
  std::uint64_t checkpoint = 0;
  double threshold = 0.0;
  double success_rate = 0.0;
  double perturbed_accuracy = 0.0;
};

/// Fraction of runs whose best distance within each checkpoint is <= the
/// threshold. A threshold of +inf counts every run with a certified
/// adversarial point.
inline std::vector<SuccessRow> success_curve(const BenchmarkReport& report, const std::vector<double>& thresholds) {
  std::vector<SuccessRow> rows;
  for (const auto& attack : report.attacks)
    for (auto cp : report.checkpoints)
      for (double eps : thresholds) {
        std::size_t n = 0, hit = 0;
        for (const auto& r : report.runs) {
          if (r.attack != attack) continue;
          ++n;
          const double best = r.best_at(cp);
          if (std::isinf(eps) ? std::isfinite(best) : best <= eps) ++hit;
        }
        const double rate = n ? static_cast<double>(hit) / static_cast<double>(n) : 0.0;
        rows.push_back({attack, cp, eps, rate, perturbed_accuracy(report.original_accuracy, rate)});
      }
  return rows;
}

// -------------------------------------------------------------------------
// Report output

namespace detail {

inline nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline std::string csv_number(double v) { return std::isfinite(v) ? nlohmann::json(v).dump() : "inf"; }

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (out) out << text;
  if (!out) throw std::filesystem::filesystem_error("cannot write", path, std::error_code(errno, std::generic_category()));
}

}  // namespace detail

inline std::string report_csv(const BenchmarkReport& report) {
  int reps = 1;
  for (const auto& r : report.runs) reps = std::max(reps, r.repetition + 1);
  std::ostringstream out;
  out << "attack,sample_id,checkpoint,best_distance,queries_used,success\n";
  for (const auto& r : report.runs)
    for (auto cp : report.checkpoints) {
      const double best = r.best_at(cp);
      out << r.attack << ',' << report.sample_id(r, reps) << ',' << cp << ',' << detail::csv_number(best) << ','
          << r.queries_at(cp) << ',' << (std::isfinite(best) ? "true" : "false") << '\n';
    }
  return out.str();
}

inline nlohmann::json report_json(const BenchmarkReport& report) {
  int reps = 1;
  for (const auto& r : report.runs) reps = std::max(reps, r.repetition + 1);
  nlohmann::json j;
  j["spec"] = report.spec_echo;
  j["environment"] = {{"model_file_schema", kModelFileSchemaVersion},
                      {"attack_trace_schema", kAttackTraceSchemaVersion},
                      {"compiler", __VERSION__},
                      {"cplusplus", __cplusplus}};
  j["n_samples"] = report.n_samples;
  j["n_correct"] = report.n_correct;
  j["original_accuracy"] = report.original_accuracy;
  auto& rows = j["rows"] = nlohmann::json::array();
  for (const auto& r : report.runs)
    for (auto cp : report.checkpoints) {
      const double best = r.best_at(cp);
      rows.push_back({{"attack", r.attack},
                      {"sample_id", report.sample_id(r, reps)},
                      {"checkpoint", cp},
                      {"best_distance", detail::finite_or_null(best)},
                      {"queries_used", r.queries_at(cp)},
                      {"success", std::isfinite(best)}});
    }
  auto& errs = j["errors"] = nlohmann::json::array();
  for (const auto& r : report.runs)
    if (!r.error.empty()) errs.push_back({{"attack", r.attack}, {"sample_id", report.sample_id(r, reps)}, {"error", r.error}});
  auto& curves = j["curves"] = nlohmann::json::object();
  for (const auto& [attack, pts] : report.curves) {
    auto& arr = curves[attack] = nlohmann::json::array();
    for (const auto& p : pts)
      arr.push_back({{"queries", p.queries},
                     {"median", detail::finite_or_null(p.median)},
                     {"q1", detail::finite_or_null(p.q1)},
                     {"q3", detail::finite_or_null(p.q3)}});
  }
  if (!report.thresholds.empty()) {
    auto& sc = j["success_curve"] = nlohmann::json::array();
    for (const auto& row : success_curve(report, report.thresholds))
      sc.push_back({{"attack", row.attack},
                    {"checkpoint", row.checkpoint},
                    {"threshold", detail::finite_or_null(row.threshold)},
                    {"success_rate", row.success_rate},
                    {"perturbed_accuracy", row.perturbed_accuracy}});
  }
  return j;
}

inline std::string curve_dat(const std::vector<CurvePoint>& curve) {
  std::ostringstream out;
  out << "# queries median q1 q3\n";
  for (const auto& p : curve)
    out << p.queries << ' ' << detail::csv_number(p.median) << ' ' << detail::csv_number(p.q1) << ' '
        << detail::csv_number(p.q3) << '\n';
  return out.str();
}

/// Writes report.csv, report.json and curve_<attack>.dat into outdir.
inline void write_report(const BenchmarkReport& report, const std::filesystem::path& outdir) {
  std::filesystem::create_directories(outdir);
  detail::write_file(outdir / "report.csv", report_csv(report));
  detail::write_file(outdir / "report.json", report_json(report).dump(2) + "\n");
  for (const auto& [attack, curve] : report.curves)
    detail::write_file(outdir / ("curve_" + attack + ".dat"), curve_dat(curve));
}

// -------------------------------------------------------------------------
// Probe-radius and baseline sensitivity

struct DeltaSensitivityOptions {
  std::vector<double> multipliers{0.01, 0.1, 1.0, 10.0, 100.0};
  std::vector<int> at_iterations{10, 20, 30, 40, 50, 60};
  int batch = 100;
  int repetitions = 1;  // estimates per (point, multiplier, baseline flag)
  std::size_t n_samples = 5;
  int initial_batch = 100;
  std::uint64_t seed = 0;
  int jobs = 1;
  // Move each attack iterate onto the exact analytic boundary (along the
  // segment to x*) instead of using the bisection's success-side point.
  bool exact_boundary = false;
};

struct CosineSummary {
  double multiplier = 1.0;
  bool baseline = true;
  std::size_t n = 0;
  double q1 = 0.0, median = 0.0, q3 = 0.0, mean = 0.0;
  double fallback_rate = 0.0;
};

/// For each sample, runs the l2 attack and, at the listed iterations, measures
/// the cosine between gradient-direction estimates with probe radius
/// multiplier * delta_t and the true gradient of the success margin. The
/// plain and baseline estimators share probe directions.
inline std::vector<CosineSummary> delta_sensitivity_experiment(const ClassifierPtr& model,
                                                               const std::vector<Sample>& samples,
                                                               const DeltaSensitivityOptions& opt) {
  const auto* analytic = dynamic_cast<const AnalyticModel*>(model.get());
  if (!analytic) throw UnsupportedExperiment("delta sensitivity needs an analytic oracle with a known gradient");
  if (opt.multipliers.empty() || opt.at_iterations.empty() || opt.batch < 2 || opt.repetitions < 1)
    throw InvalidInput("delta sensitivity: empty multiplier/iteration list or batch < 2");
  const int last_iteration = *std::max_element(opt.at_iterations.begin(), opt.at_iterations.end());

  struct Point {
    std::size_t sample;
    Sample x;
    Sample true_gradient;
    double delta;
  };
  const std::size_t n = std::min(opt.n_samples, samples.size());
  std::vector<std::vector<Point>> per_sample(n);
  parallel_for(n, opt.jobs, [&](std::size_t i) {
    auto objective = AttackObjective::untargeted_at(model, samples[i]);
    QueryingOracle oracle(objective);
    AttackConfig cfg;
    cfg.iterations = last_iteration + 1;
    cfg.initial_batch = opt.initial_batch;
    cfg.max_queries = std::nullopt;
    cfg.seed = run_seed(opt.seed, i, 0);
    hsja_attack(oracle, samples[i], cfg, std::nullopt, [&](const IterationView& v) {
      if (std::find(opt.at_iterations.begin(), opt.at_iterations.end(), v.t) == opt.at_iterations.end()) return;
      Sample x(v.boundary_point.begin(), v.boundary_point.end());
      if (opt.exact_boundary) {
        const auto margin = [&](ConstVec z) { return success_sign(objective) * analytic->score(z); };
        x = whitebox::project_to_boundary(margin, samples[i], x, Norm::L2);
      }
      per_sample[i].push_back({i, x, success_gradient(*analytic, objective, x), v.delta});
    });
  });

  std::vector<Point> points;
  for (auto& ps : per_sample)
    for (auto& p : ps) points.push_back(std::move(p));

  const std::size_t n_mult = opt.multipliers.size();
  std::vector<std::vector<double>> cos_plain(n_mult), cos_base(n_mult);
  std::vector<std::size_t> fb_plain(n_mult, 0), fb_base(n_mult, 0);
  for (std::size_t m = 0; m < n_mult; ++m) {
    for (std::size_t p = 0; p < points.size(); ++p) {
      const auto& pt = points[p];
      const double delta = opt.multipliers[m] * pt.delta;
      const auto objective = AttackObjective::untargeted_at(model, samples[pt.sample]);
      for (int r = 0; r < opt.repetitions; ++r) {
        RngStream rng(opt.seed ^ 0xD17AULL, (p * n_mult + m) * 1000003ULL + static_cast<std::uint64_t>(r));
        std::vector<Sample> probes;
        std::vector<int> phi;
        for (int b = 0; b < opt.batch; ++b) {
          probes.push_back(sample_unit_sphere(pt.x.size(), rng));
          phi.push_back(objective.success(clip_to_domain(axpy(pt.x, delta, probes.back()))) ? 1 : -1);
        }
        const auto plain = combine_probes(probes, phi, false, Norm::L2);
        const auto based = combine_probes(probes, phi, true, Norm::L2);
        cos_plain[m].push_back(cosine(plain.direction, pt.true_gradient));
        cos_base[m].push_back(cosine(based.direction, pt.true_gradient));
        fb_plain[m] += plain.fallback_used;
        fb_base[m] += based.fallback_used;
      }
    }
  }

  std::vector<CosineSummary> out;
  for (std::size_t m = 0; m < n_mult; ++m)
    for (bool baseline : {false, true}) {
      const auto& v = baseline ? cos_base[m] : cos_plain[m];
      CosineSummary s;
      s.multiplier = opt.multipliers[m];
      s.baseline = baseline;
      s.n = v.size();
      s.q1 = quantile(v, 0.25);
      s.median = quantile(v, 0.5);
      s.q3 = quantile(v, 0.75);
      double sum = 0.0;
      for (double c : v) sum += c;
      s.mean = v.empty() ? 0.0 : sum / static_cast<double>(v.size());
      s.fallback_rate = v.empty() ? 0.0 : static_cast<double>(baseline ? fb_base[m] : fb_plain[m]) / static_cast<double>(v.size());
      out.push_back(s);
    }
  return out;
}

// -------------------------------------------------------------------------
// Step-size scheme comparison

struct SchemeSpec {
  StepScheme scheme = StepScheme::SqrtDecay;
  double constant = 0.0;
  std::string name() const { return step_scheme_name(scheme, constant); }
};

inline const std::vector<std::string>& valid_scheme_names() {
  static const std::vector<std::string> names{"sqrt-decay", "linear-decay", "no-decay", "grid-search",
                                              "constant(0.01)", "constant(0.1)", "constant(1.0)"};
  return names;
}

inline SchemeSpec parse_scheme(std::string_view name) {
  if (name == "sqrt-decay") return {StepScheme::SqrtDecay};
  if (name == "linear-decay") return {StepScheme::LinearDecay};
  if (name == "no-decay") return {StepScheme::NoDecay};
  if (name == "grid-search") return {StepScheme::GridSearch};
  if (name == "constant(0.01)") return {StepScheme::Constant, 0.01};
  if (name == "constant(0.1)") return {StepScheme::Constant, 0.1};
  if (name == "constant(1.0)" || name == "constant(1)") return {StepScheme::Constant, 1.0};
  std::string msg = "unknown step scheme '" + std::string(name) + "'; valid schemes:";
  for (const auto& n : valid_scheme_names()) msg += " " + n;
  throw InvalidInput(msg);
}

struct SchemeResult {
  std::string scheme;
  std::vector<CurvePoint> curve;
  std::vector<double> final_distances;  // best within the budget, per sample
  std::vector<std::uint64_t> first_iteration_queries;
  bool monotone = true;  // every run's recorded distances non-increasing after t = 1 (up to bisection slack)
};

struct StepsizeOptions {
  std::vector<std::uint64_t> checkpoints{500, 1000, 2000, 5000};
  int iterations = 1000;
  int initial_batch = 100;
  std::uint64_t seed = 0;
  int jobs = 1;
};

inline std::vector<SchemeResult> stepsize_scheme_experiment(const ClassifierPtr& model,
                                                            const std::vector<Sample>& samples,
                                                            const std::vector<SchemeSpec>& schemes,
                                                            const StepsizeOptions& opt) {
  if (opt.checkpoints.empty()) throw InvalidInput("stepsize experiment: no checkpoints");
  std::vector<SchemeResult> out;
  for (const auto& scheme : schemes) {
    SchemeResult res;
    res.scheme = scheme.name();
    std::vector<AttackTrace> traces(samples.size());
    parallel_for(samples.size(), opt.jobs, [&](std::size_t i) {
      QueryingOracle oracle(AttackObjective::untargeted_at(model, samples[i]));
      AttackConfig cfg;
      cfg.iterations = opt.iterations;
      cfg.initial_batch = opt.initial_batch;
      cfg.max_queries = opt.checkpoints.back();
      cfg.seed = run_seed(opt.seed, i, 0);
      cfg.step_scheme = scheme.scheme;
      cfg.constant_step = scheme.constant > 0.0 ? scheme.constant : 0.01;
      traces[i] = hsja_attack(oracle, samples[i], cfg);
    });
    const double theta = schedule_theta(samples.front().size(), Norm::L2);
    for (const auto& tr : traces) {
      if (tr.records.size() > 1) res.first_iteration_queries.push_back(tr.records[1].queries);
      for (std::size_t k = 2; k < tr.records.size(); ++k)
        if (tr.records[k].distance > tr.records[k - 1].distance * (1.0 + theta) + 1e-12) res.monotone = false;
    }
    for (auto cp : opt.checkpoints) {
      std::vector<double> values;
      for (const auto& tr : traces) {
        RunResult r;
        r.points = detail::points_of(tr);
        values.push_back(r.best_at(cp));
      }
      res.curve.push_back(curve_point(cp, values));
      if (cp == opt.checkpoints.back()) res.final_distances = values;
    }
    out.push_back(std::move(res));
  }
  return out;
}

}  // namespace hsja

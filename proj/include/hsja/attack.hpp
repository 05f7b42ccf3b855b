#pragma once

// HopSkipJumpAttack: boundary search by bisection, Monte Carlo estimation of
// the boundary normal from hard decisions, and a geometric step-size search,
// repeated with the theta / delta / batch / step schedules below.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hsja/core.hpp"
#include "hsja/oracle.hpp"

namespace hsja {

inline constexpr int kAttackTraceSchemaVersion = 1;

// Stream ids derived from AttackConfig::seed.
inline constexpr std::uint64_t kInitStream = 1;
inline constexpr std::uint64_t kEstimateStream = 2;
inline constexpr std::uint64_t kBoundaryStream = 3;

/// Raised when the adversarial iterate coincides with the original sample.
struct DegenerateSuccess : std::runtime_error {
  DegenerateSuccess() : std::runtime_error("adversarial iterate coincides with the original sample") {}
};

enum class StepScheme { SqrtDecay, LinearDecay, NoDecay, GridSearch, Constant };

inline std::string step_scheme_name(StepScheme s, double constant = 0.0) {
  switch (s) {
    case StepScheme::SqrtDecay: return "sqrt-decay";
    case StepScheme::LinearDecay: return "linear-decay";
    case StepScheme::NoDecay: return "no-decay";
    case StepScheme::GridSearch: return "grid-search";
    case StepScheme::Constant: {
      nlohmann::json c = constant;
      return "constant(" + c.dump() + ")";
    }
  }
  return "?";
}

struct AttackConfig {
  Norm norm = Norm::L2;
  bool targeted = false;
  std::optional<int> target_label;
  int iterations = 64;
  int initial_batch = 100;
  std::optional<std::uint64_t> max_queries = 25000;
  std::optional<double> theta_override;
  /// Exponent q of the initial step size dist * t^(-q).
  double step_exponent = 0.5;
  std::uint64_t seed = 0;
  bool use_baseline = true;
  StepScheme step_scheme = StepScheme::SqrtDecay;
  double constant_step = 0.01;  // StepScheme::Constant only

  void validate() const {
    if (iterations < 1) throw InvalidInput("iterations must be >= 1");
    if (initial_batch < 2) throw InvalidInput("initial batch size must be >= 2");
    if (!(step_exponent >= 0.5 && step_exponent < 1.0)) throw InvalidInput("step exponent must lie in [0.5, 1)");
    if (targeted && !target_label) throw InvalidInput("targeted attack requires a target label");
    if (theta_override && !(*theta_override > 0.0 && *theta_override < 1.0))
      throw InvalidInput("theta override must lie in (0, 1)");
    if (step_scheme == StepScheme::Constant && !(constant_step > 0.0))
      throw InvalidInput("constant step must be positive");
  }
};

struct IterationRecord {
  int t = 0;
  std::uint64_t queries = 0;  // cumulative, including initialisation
  double distance = 0.0;      // ||x_t - x*||_p of the certified boundary iterate
  double xi = 0.0;
  double delta = 0.0;
  int batch = 0;
  int step_trials = 0;
  bool fallback_used = false;
};

struct AttackTrace {
  std::string attack = "hsja";
  nlohmann::json config = nlohmann::json::object();
  std::vector<IterationRecord> records;
  Sample final_sample;
  bool success = false;
  bool truncated = false;
  std::uint64_t queries_used = 0;

  double final_distance(ConstVec x_star, Norm n) const {
    return success ? distance(final_sample, x_star, n) : std::numeric_limits<double>::infinity();
  }
};

inline nlohmann::json to_json(const AttackConfig& c) {
  nlohmann::json j;
  j["norm"] = std::string(to_string(c.norm));
  j["targeted"] = c.targeted;
  j["target_label"] = c.target_label ? nlohmann::json(*c.target_label) : nlohmann::json(nullptr);
  j["iterations"] = c.iterations;
  j["initial_batch"] = c.initial_batch;
  j["max_queries"] = c.max_queries ? nlohmann::json(*c.max_queries) : nlohmann::json(nullptr);
  j["theta_override"] = c.theta_override ? nlohmann::json(*c.theta_override) : nlohmann::json(nullptr);
  j["step_exponent"] = c.step_exponent;
  j["seed"] = c.seed;
  j["use_baseline"] = c.use_baseline;
  j["step_scheme"] = step_scheme_name(c.step_scheme, c.constant_step);
  return j;
}

inline nlohmann::json to_json(const AttackTrace& tr) {
  nlohmann::json j;
  j["schema_version"] = kAttackTraceSchemaVersion;
  j["attack"] = tr.attack;
  j["config"] = tr.config;
  auto& recs = j["records"] = nlohmann::json::array();
  for (const auto& r : tr.records) {
    recs.push_back({{"t", r.t},
                    {"queries", r.queries},
                    {"distance", r.distance},
                    {"xi", r.xi},
                    {"delta", r.delta},
                    {"batch", r.batch},
                    {"step_trials", r.step_trials},
                    {"fallback_used", r.fallback_used}});
  }
  j["final_sample"] = tr.final_sample;
  j["success"] = tr.success;
  j["truncated"] = tr.truncated;
  j["queries_used"] = tr.queries_used;
  return j;
}

// -------------------------------------------------------------------------
// Schedules

/// Bisection threshold d^(-q-1).
inline double schedule_theta(std::size_t d, Norm n) {
  if (d == 0) throw InvalidInput("schedule_theta: dimension must be >= 1");
  return std::pow(static_cast<double>(d), -dual_exponent(n) - 1.0);
}

/// Probe radius dist_prev / d.
inline double schedule_delta(std::size_t d, double dist_prev) {
  if (d == 0) throw InvalidInput("schedule_delta: dimension must be >= 1");
  if (dist_prev == 0.0) throw DegenerateSuccess();
  if (!(dist_prev > 0.0)) throw InvalidInput("schedule_delta: distance must be positive");
  return dist_prev / static_cast<double>(d);
}

/// floor(B0 * sqrt(t)), limited to the remaining budget when one is given.
inline int schedule_batch(int initial_batch, int t, std::optional<std::uint64_t> remaining = std::nullopt) {
  if (initial_batch < 2) throw InvalidInput("schedule_batch: initial batch must be >= 2");
  if (t < 1) throw InvalidInput("schedule_batch: iteration must be >= 1");
  auto b = static_cast<std::uint64_t>(std::floor(initial_batch * std::sqrt(static_cast<double>(t))));
  if (remaining) b = std::min(b, *remaining);
  return static_cast<int>(b);
}

/// dist * t^(-q).
inline double schedule_initial_step(double dist, int t, double q) {
  if (!(dist > 0.0)) throw InvalidInput("schedule_initial_step: distance must be positive");
  if (t < 1) throw InvalidInput("schedule_initial_step: iteration must be >= 1");
  return dist * std::pow(static_cast<double>(t), -q);
}

// -------------------------------------------------------------------------
// Boundary search

struct BoundaryPoint {
  Sample point;
  double alpha = 0.0;       // success end of the final bracket (weight on x*)
  double alpha_fail = 1.0;  // failure end
  int queries = 0;
};

/// Number of bisection queries needed to shrink [0, 1] to width <= theta.
inline int bin_search_query_count(double theta) {
  int k = 0;
  for (double w = 1.0; w > theta; w *= 0.5) ++k;
  return k;
}

/// Bisects the projection parameter between x_adv (alpha = 0, adversarial)
/// and x_star (alpha = 1, not adversarial) until the bracket is no wider than
/// theta, and returns the projection at the adversarial end. The endpoints are
/// taken as known; with check_precondition the adversarial endpoint is
/// queried first and an InvalidInput is raised if it is not adversarial.
template <DecisionOracle O>
BoundaryPoint bin_search(O& oracle, ConstVec x_adv, ConstVec x_star, double theta, Norm norm,
                         bool check_precondition = false) {
  detail::require_same_dim(x_adv, x_star, "bin_search");
  if (!(theta > 0.0 && theta < 1.0)) throw InvalidInput("bin_search: theta must lie in (0, 1)");
  BoundaryPoint out;
  if (check_precondition) {
    ++out.queries;
    if (!oracle.decision(x_adv)) throw InvalidInput("bin_search: starting point is not adversarial");
  }
  double lo = 0.0, hi = 1.0;
  while (hi - lo > theta) {
    const double mid = 0.5 * (lo + hi);
    auto probe = clip_to_domain(project(x_star, x_adv, mid, norm));
    ++out.queries;
    if (oracle.decision(probe))
      lo = mid;
    else
      hi = mid;
  }
  out.point = clip_to_domain(project(x_star, x_adv, lo, norm));
  out.alpha = lo;
  out.alpha_fail = hi;
  return out;
}

// -------------------------------------------------------------------------
// Gradient-direction estimate

struct GradientEstimate {
  Sample raw;        // Monte Carlo estimate before normalisation
  Sample direction;  // unit l2 vector (L2) or entrywise sign (Linf)
  int probes_used = 0;
  bool fallback_used = false;  // all probes agreed
  double mean_phi = 0.0;       // average of the +-1 probe outcomes
};

namespace detail {

inline Sample direction_from(ConstVec v, Norm norm) {
  Sample out(v.begin(), v.end());
  if (norm == Norm::L2) {
    const double n = norm2(v);
    if (n > 0.0)
      for (double& x : out) x /= n;
  } else {
    for (double& x : out) x = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
  }
  return out;
}

}  // namespace detail

/// Combines probe directions u_b and outcomes phi_b in {-1, +1} into the
/// plain or baseline-corrected estimate. Pure; used by the estimator and by
/// tests that fix the probes by hand.
inline GradientEstimate combine_probes(const std::vector<Sample>& probes, const std::vector<int>& phi,
                                       bool use_baseline, Norm norm) {
  const std::size_t batch = probes.size();
  if (batch < 2 || phi.size() != batch) throw InvalidInput("gradient estimate: need B >= 2 matching outcomes");
  const std::size_t d = probes.front().size();
  GradientEstimate est;
  est.probes_used = static_cast<int>(batch);
  double mean_phi = 0.0;
  for (int p : phi) mean_phi += p;
  mean_phi /= static_cast<double>(batch);
  est.mean_phi = mean_phi;

  est.raw.assign(d, 0.0);
  const double scale = use_baseline ? 1.0 / static_cast<double>(batch - 1) : 1.0 / static_cast<double>(batch);
  const double base = use_baseline ? mean_phi : 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double w = (phi[b] - base) * scale;
    if (w == 0.0) continue;
    for (std::size_t i = 0; i < d; ++i) est.raw[i] += w * probes[b][i];
  }

  const bool all_same = std::abs(mean_phi) == 1.0;
  if (all_same || norm2(est.raw) == 0.0) {
    // Degenerate batch: fall back to the signed mean probe direction.
    const double sign = mean_phi >= 0.0 ? 1.0 : -1.0;
    Sample mean(d, 0.0);
    for (const auto& u : probes)
      for (std::size_t i = 0; i < d; ++i) mean[i] += sign * u[i] / static_cast<double>(batch);
    est.fallback_used = true;
    est.direction = detail::direction_from(mean, norm);
  } else {
    est.direction = detail::direction_from(est.raw, norm);
  }
  return est;
}

/// Draws `batch` directions on the unit sphere, queries clip(x + delta * u_b)
/// for each and combines the outcomes. Consumes exactly `batch` queries.
template <DecisionOracle O>
GradientEstimate estimate_gradient_direction(O& oracle, ConstVec x, double delta, int batch, RngStream& rng,
                                             bool use_baseline, Norm norm) {
  if (!(delta > 0.0)) throw InvalidInput("gradient estimate: delta must be positive");
  if (batch < 2) throw InvalidInput("gradient estimate: batch must be >= 2");
  std::vector<Sample> probes;
  probes.reserve(static_cast<std::size_t>(batch));
  for (int b = 0; b < batch; ++b) probes.push_back(sample_unit_sphere(x.size(), rng));
  std::vector<int> phi(static_cast<std::size_t>(batch));
  Sample probe(x.size());
  for (int b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < x.size(); ++i) probe[i] = std::clamp(x[i] + delta * probes[b][i], 0.0, 1.0);
    phi[b] = oracle.decision(probe) ? 1 : -1;
  }
  return combine_probes(probes, phi, use_baseline, norm);
}

// -------------------------------------------------------------------------
// Step-size search

struct StepResult {
  double xi = 0.0;
  Sample x_tilde;
  int trials = 0;
  bool failed = false;
};

inline constexpr double kStepUnderflow = 1e-12;

/// Halves xi from xi_init until clip(x + xi * v) is adversarial. If xi drops
/// below 1e-12 * xi_init the search fails and x itself is returned.
template <DecisionOracle O>
StepResult step_size_search(O& oracle, ConstVec x, ConstVec v, double xi_init) {
  detail::require_same_dim(x, v, "step_size_search");
  if (!(xi_init > 0.0)) throw InvalidInput("step_size_search: initial step must be positive");
  StepResult r;
  for (double xi = xi_init; xi >= kStepUnderflow * xi_init; xi *= 0.5) {
    auto candidate = clip_to_domain(axpy(x, xi, v));
    ++r.trials;
    if (oracle.decision(candidate)) {
      r.xi = xi;
      r.x_tilde = std::move(candidate);
      return r;
    }
  }
  r.failed = true;
  r.x_tilde.assign(x.begin(), x.end());
  return r;
}

// -------------------------------------------------------------------------
// Initialisation

inline constexpr int kInitDraws = 100;
inline constexpr int kInitBlendSteps = 10;

/// Blends x_star with uniform noise at weights 0.1, 0.2, ..., 1.0 and returns
/// the first adversarial blend, redrawing the noise up to 100 times.
template <DecisionOracle O>
Sample init_untargeted(O& oracle, ConstVec x_star, RngStream& rng) {
  for (int draw = 0; draw < kInitDraws; ++draw) {
    const auto noise = sample_uniform_cube(x_star.size(), rng);
    for (int k = 1; k <= kInitBlendSteps; ++k) {
      const double w = k / static_cast<double>(kInitBlendSteps);
      Sample blend(x_star.size());
      for (std::size_t i = 0; i < blend.size(); ++i) blend[i] = (1.0 - w) * x_star[i] + w * noise[i];
      if (oracle.decision(blend)) return blend;
    }
  }
  throw InitializationFailed("no adversarial blend found after " + std::to_string(kInitDraws) + " noise draws");
}

template <DecisionOracle O>
Sample init_targeted(ConstVec x_init, O& oracle) {
  if (!oracle.decision(x_init)) throw InvalidInitialization("initial sample is not adversarial for the objective");
  return Sample(x_init.begin(), x_init.end());
}

// -------------------------------------------------------------------------
// The attack

/// Called once per iteration after the boundary search, before the gradient
/// estimate. Lets experiments inspect boundary iterates without re-running.
struct IterationView {
  int t;
  ConstVec boundary_point;  // x_t
  ConstVec previous_tilde;  // x~_{t-1}
  double delta;
  int batch;
};
using IterationObserver = std::function<void(const IterationView&)>;

namespace detail {

inline double initial_step(const AttackConfig& cfg, double dist, int t) {
  switch (cfg.step_scheme) {
    case StepScheme::SqrtDecay: return schedule_initial_step(dist, t, cfg.step_exponent);
    case StepScheme::LinearDecay: return dist / t;
    case StepScheme::NoDecay: return dist;
    case StepScheme::Constant: return cfg.constant_step;
    case StepScheme::GridSearch: return dist;
  }
  return dist;
}

// Tries xi = 2^k * dist for k = -10..2 and keeps the one whose boundary
// projection lands closest to x_star. Every query, including the trial
// projections, is counted in `trials`.
template <DecisionOracle O>
StepResult grid_step_search(O& oracle, ConstVec x, ConstVec v, ConstVec x_star, double dist, double theta, Norm norm) {
  StepResult best;
  double best_dist = std::numeric_limits<double>::infinity();
  int trials = 0;
  for (int k = -10; k <= 2; ++k) {
    const double xi = std::ldexp(dist, k);
    auto candidate = clip_to_domain(axpy(x, xi, v));
    ++trials;
    if (!oracle.decision(candidate)) continue;
    const auto projected = bin_search(oracle, candidate, x_star, theta, norm);
    trials += projected.queries;
    const double dd = distance(projected.point, x_star, norm);
    if (dd < best_dist) {
      best_dist = dd;
      best.xi = xi;
      best.x_tilde = std::move(candidate);
    }
  }
  if (best.x_tilde.empty()) {
    best = step_size_search(oracle, x, v, std::ldexp(dist, -11));
    trials += best.trials;
  }
  best.trials = trials;
  return best;
}

}  // namespace detail

/// Runs the attack from x_star. x_init, when given, is verified with one
/// query and used as the starting adversarial point; otherwise untargeted
/// attacks start from a noise blend. Initialisation always runs to completion;
/// config.max_queries (counted from the oracle's count at entry) then bounds
/// the total, and hitting it returns the best certified iterate so far.
template <DecisionOracle O>
AttackTrace hsja_attack(O& oracle, ConstVec x_star, const AttackConfig& cfg, std::optional<Sample> x_init = std::nullopt,
                        const IterationObserver& observer = {}) {
  cfg.validate();
  if (cfg.targeted && !x_init) throw InvalidInput("targeted attack requires an initial sample of the target class");
  if (x_init) detail::require_same_dim(*x_init, x_star, "hsja_attack");
  const std::size_t d = x_star.size();
  if (d == 0) throw InvalidInput("hsja_attack: empty sample");
  const double theta = cfg.theta_override.value_or(schedule_theta(d, cfg.norm));

  RngStream init_rng(cfg.seed, kInitStream);
  RngStream est_rng(cfg.seed, kEstimateStream);

  AttackTrace trace;
  trace.config = to_json(cfg);
  const std::uint64_t start = oracle.query_count();
  auto used = [&] { return oracle.query_count() - start; };

  double best_dist = std::numeric_limits<double>::infinity();
  auto record = [&](IterationRecord r, const Sample& point) {
    r.queries = used();
    trace.records.push_back(r);
    if (r.distance < best_dist) {
      best_dist = r.distance;
      trace.final_sample = point;
    }
  };

  Sample x_tilde;
  try {
    x_tilde = x_init ? init_targeted(*x_init, oracle) : init_untargeted(oracle, x_star, init_rng);
  } catch (const BudgetExhausted&) {
    trace.truncated = true;
    trace.queries_used = used();
    return trace;
  }
  record({.t = 0, .distance = distance(x_tilde, x_star, cfg.norm)}, x_tilde);
  trace.success = true;

  std::optional<std::uint64_t> cap = oracle.cap();
  if (cfg.max_queries) {
    const auto limit = start + *cfg.max_queries;
    cap = cap ? std::min(*cap, limit) : limit;
  }
  ScopedCap<O> scoped(oracle, cap);
  auto remaining = [&]() -> std::optional<std::uint64_t> {
    if (!cap) return std::nullopt;
    const auto n = oracle.query_count();
    return n >= *cap ? 0 : *cap - n;
  };

  std::optional<Sample> pending;  // certified boundary point not yet recorded
  double pending_dist = 0.0;
  try {
    double dist_tilde = distance(x_tilde, x_star, cfg.norm);
    for (int t = 1; t < cfg.iterations; ++t) {
      auto boundary = bin_search(oracle, x_tilde, x_star, theta, cfg.norm);
      const double dist_t = distance(boundary.point, x_star, cfg.norm);
      pending = boundary.point;
      pending_dist = dist_t;

      const int batch = schedule_batch(cfg.initial_batch, t, remaining());
      if (batch < 2) throw BudgetExhausted();
      const double delta = schedule_delta(d, dist_tilde);
      if (observer) observer({t, boundary.point, x_tilde, delta, batch});
      const auto est =
          estimate_gradient_direction(oracle, boundary.point, delta, batch, est_rng, cfg.use_baseline, cfg.norm);

      if (dist_t == 0.0) throw DegenerateSuccess();
      StepResult step =
          cfg.step_scheme == StepScheme::GridSearch
              ? detail::grid_step_search(oracle, boundary.point, est.direction, x_star, dist_t, theta, cfg.norm)
              : step_size_search(oracle, boundary.point, est.direction, detail::initial_step(cfg, dist_t, t));
      x_tilde = std::move(step.x_tilde);
      dist_tilde = distance(x_tilde, x_star, cfg.norm);

      record({.t = t,
              .distance = dist_t,
              .xi = step.xi,
              .delta = delta,
              .batch = batch,
              .step_trials = step.trials,
              .fallback_used = est.fallback_used},
             *pending);
      pending.reset();
    }
    auto last = bin_search(oracle, x_tilde, x_star, theta, cfg.norm);
    record({.t = cfg.iterations, .distance = distance(last.point, x_star, cfg.norm)}, last.point);
    trace.final_sample = std::move(last.point);
  } catch (const BudgetExhausted&) {
    trace.truncated = true;
    if (pending) {
      const int t = trace.records.back().t + 1;
      record({.t = t, .distance = pending_dist}, *pending);
    }
  } catch (const DegenerateSuccess&) {
    trace.final_sample.assign(x_star.begin(), x_star.end());
  }
  trace.queries_used = used();
  return trace;
}

// -------------------------------------------------------------------------
// Gradient-access iteration used to check the convergence behaviour of the
// update rule itself. The margin S is positive on the adversarial side.

namespace whitebox {

struct Result {
  std::vector<double> one_minus_r;  // 1 - cos(x_t - x*, grad S(x_t)), t = 1..steps
  std::vector<Sample> iterates;
  std::vector<double> distances;
};

/// Exact boundary projection by dense bisection on the projection parameter.
inline Sample project_to_boundary(const std::function<double(ConstVec)>& margin, ConstVec x_star, ConstVec x,
                                  Norm norm) {
  double lo = 0.0, hi = 1.0;
  for (int i = 0; i < 200 && hi - lo > 0.0; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    if (margin(project(x_star, x, mid, norm)) > 0.0)
      lo = mid;
    else
      hi = mid;
  }
  return project(x_star, x, lo, norm);
}

/// x_{t+1} = Proj(x_t + xi_t * g(x_t)), xi_t = ||x_t - x*|| t^(-q), where g is
/// the normalised gradient (L2) or its sign (Linf). x0 must lie on the
/// boundary's adversarial side.
inline Result run(const std::function<double(ConstVec)>& margin, const std::function<Sample(ConstVec)>& gradient,
                  ConstVec x_star, ConstVec x0, int steps, double q, Norm norm = Norm::L2) {
  Result out;
  Sample x(x0.begin(), x0.end());
  for (int t = 1; t <= steps; ++t) {
    const auto g = gradient(x);
    const auto offset = subtract(x, x_star);
    out.one_minus_r.push_back(1.0 - cosine(offset, g));
    out.iterates.push_back(x);
    out.distances.push_back(distance(x, x_star, norm));
    const double xi = distance(x, x_star, norm) * std::pow(static_cast<double>(t), -q);
    const auto step = detail::direction_from(g, norm);
    x = project_to_boundary(margin, x_star, axpy(x, xi, step), norm);
  }
  return out;
}

}  // namespace whitebox

}  // namespace hsja

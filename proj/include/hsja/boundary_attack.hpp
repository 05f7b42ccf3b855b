#pragma once

// Boundary Attack: a rejection-sampling random walk along the decision
// boundary. Each proposal makes an orthogonal move on the sphere around x*
// through the current iterate, then contracts toward x*. Step sizes adapt to
// keep the acceptance rates near 1/2 (orthogonal move) and 1/4 (full
// proposal). l2 only.

#include <cstdint>
#include <deque>
#include <numeric>
#include <optional>

#include "hsja/attack.hpp"
#include "hsja/core.hpp"
#include "hsja/oracle.hpp"

namespace hsja {

struct BoundaryConfig {
  double orthogonal_step = 0.01;
  double source_step = 0.01;
  double adaptation_factor = 1.5;
  int success_window = 30;
  std::uint64_t max_queries = 25000;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(orthogonal_step > 0.0) || !(source_step > 0.0)) throw InvalidInput("boundary attack: steps must be positive");
    if (!(adaptation_factor > 1.0)) throw InvalidInput("boundary attack: adaptation factor must be > 1");
    if (success_window < 1) throw InvalidInput("boundary attack: success window must be >= 1");
  }
};

inline nlohmann::json to_json(const BoundaryConfig& c) {
  return {{"norm", "l2"},
          {"orthogonal_step", c.orthogonal_step},
          {"source_step", c.source_step},
          {"adaptation_factor", c.adaptation_factor},
          {"success_window", c.success_window},
          {"max_queries", c.max_queries},
          {"seed", c.seed}};
}

namespace detail {

inline double success_rate(const std::deque<bool>& window) {
  return static_cast<double>(std::count(window.begin(), window.end(), true)) / static_cast<double>(window.size());
}

}  // namespace detail

/// Runs from an adversarial x_init (not re-queried). Each proposal costs one
/// query for the orthogonal candidate and, if that is adversarial, one more
/// for the contracted candidate. Stops when max_queries have been spent.
template <DecisionOracle O>
AttackTrace boundary_attack(O& oracle, ConstVec x_star, const BoundaryConfig& cfg, ConstVec x_init) {
  cfg.validate();
  detail::require_same_dim(x_star, x_init, "boundary_attack");
  const std::size_t d = x_star.size();
  RngStream rng(cfg.seed, kBoundaryStream);

  AttackTrace trace;
  trace.attack = "boundary";
  trace.config = to_json(cfg);
  const std::uint64_t start = oracle.query_count();
  auto used = [&] { return oracle.query_count() - start; };

  Sample x(x_init.begin(), x_init.end());
  double dist = distance(x, x_star, Norm::L2);
  trace.records.push_back({.t = 0, .queries = used(), .distance = dist});
  trace.success = true;

  std::optional<std::uint64_t> cap = start + cfg.max_queries;
  if (auto existing = oracle.cap()) cap = std::min(*cap, *existing);
  ScopedCap<O> scoped(oracle, cap);

  double orth_step = cfg.orthogonal_step;
  double src_step = cfg.source_step;
  std::deque<bool> orth_window, total_window;

  try {
    for (int step = 1; dist > 0.0; ++step) {
      const auto diff = subtract(x, x_star);

      // Orthogonal move, rescaled back onto the sphere of radius dist.
      Sample eta(d);
      for (double& v : eta) v = rng.normal();
      const double along = dot(eta, diff) / (dist * dist);
      for (std::size_t i = 0; i < d; ++i) eta[i] -= along * diff[i];
      const double eta_norm = norm2(eta);
      if (eta_norm > 0.0)
        for (double& v : eta) v *= orth_step * dist / eta_norm;
      auto moved = axpy(diff, 1.0, eta);
      const double moved_norm = norm2(moved);
      Sample spherical(d);
      for (std::size_t i = 0; i < d; ++i) spherical[i] = x_star[i] + moved[i] * dist / moved_norm;
      clip_in_place(spherical);

      const bool orth_ok = oracle.decision(spherical);
      bool accepted = false;
      Sample candidate;
      if (orth_ok) {
        // Contraction toward x*.
        const double keep = std::max(0.0, 1.0 - src_step);
        candidate.resize(d);
        for (std::size_t i = 0; i < d; ++i) candidate[i] = x_star[i] + keep * (spherical[i] - x_star[i]);
        clip_in_place(candidate);
        accepted = oracle.decision(candidate);
      }

      orth_window.push_back(orth_ok);
      total_window.push_back(accepted);
      if (static_cast<int>(orth_window.size()) >= cfg.success_window) {
        const double orth_rate = detail::success_rate(orth_window);
        const double total_rate = detail::success_rate(total_window);
        if (orth_rate > 0.5) orth_step *= cfg.adaptation_factor;
        if (orth_rate < 0.5) orth_step /= cfg.adaptation_factor;
        if (total_rate > 0.25) src_step *= cfg.adaptation_factor;
        if (total_rate < 0.25) src_step /= cfg.adaptation_factor;
        orth_window.clear();
        total_window.clear();
      }

      if (accepted) {
        const double new_dist = distance(candidate, x_star, Norm::L2);
        if (new_dist < dist) {
          x = std::move(candidate);
          dist = new_dist;
          trace.records.push_back({.t = step, .queries = used(), .distance = dist});
        }
      }
    }
  } catch (const BudgetExhausted&) {
    trace.truncated = true;
  }
  trace.final_sample = std::move(x);
  trace.queries_used = used();
  return trace;
}

/// Boundary Attack including its initialisation: the provided targeted
/// exemplar (one query) or the same noise-blend scan HSJA uses, drawn from
/// cfg.seed. Record query counts include the initialisation, which is exempt
/// from cfg.max_queries as in hsja_attack.
template <DecisionOracle O>
AttackTrace boundary_attack_with_init(O& oracle, ConstVec x_star, BoundaryConfig cfg,
                                      const std::optional<Sample>& x_init = std::nullopt) {
  const std::uint64_t start = oracle.query_count();
  Sample begin;
  if (x_init) {
    begin = init_targeted(*x_init, oracle);
  } else {
    RngStream init_rng(cfg.seed, kInitStream);
    begin = init_untargeted(oracle, x_star, init_rng);
  }
  const std::uint64_t init_q = oracle.query_count() - start;
  auto trace = boundary_attack(oracle, x_star, cfg, begin);
  for (auto& r : trace.records) r.queries += init_q;
  trace.queries_used += init_q;
  return trace;
}

}  // namespace hsja

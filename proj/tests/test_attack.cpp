#include <gtest/gtest.h>

#include <cmath>

#include "hsja/attack.hpp"
#include "hsja/harness.hpp"

using namespace hsja;

namespace {

ClassifierPtr plane(Sample w, double b) { return std::make_shared<AnalyticModel>(AnalyticModel::hyperplane(std::move(w), b)); }

/// Oracle wrapper that logs every decision() call it forwards.
class CountingOracle {
 public:
  explicit CountingOracle(QueryingOracle& inner) : inner_(inner) {}
  bool decision(ConstVec x) {
    const bool r = inner_.decision(x);
    ++calls;
    return r;
  }
  std::uint64_t query_count() const { return inner_.query_count(); }
  std::optional<std::uint64_t> cap() const { return inner_.cap(); }
  void set_cap(std::optional<std::uint64_t> c) { inner_.set_cap(c); }
  std::uint64_t calls = 0;

 private:
  QueryingOracle& inner_;
};

double cosine_to(const Sample& v, const Sample& w) { return cosine(v, w); }

}  // namespace

// ---- schedules ------------------------------------------------------------

TEST(Schedule, Theta) {
  EXPECT_NEAR(schedule_theta(784, Norm::L2), 4.5554e-5, 1e-9);
  EXPECT_NEAR(schedule_theta(784, Norm::Linf), 1.6270e-6, 1e-10);
  EXPECT_EQ(schedule_theta(1, Norm::L2), 1.0);
  EXPECT_EQ(schedule_theta(1, Norm::Linf), 1.0);
}

TEST(Schedule, Delta) {
  EXPECT_NEAR(schedule_delta(784, 1.0), 1.2755e-3, 1e-7);
  EXPECT_DOUBLE_EQ(schedule_delta(10, 0.5), 0.05);
  EXPECT_DOUBLE_EQ(schedule_delta(1, 0.37), 0.37);
  EXPECT_THROW(schedule_delta(10, 0.0), DegenerateSuccess);
}

TEST(Schedule, Batch) {
  EXPECT_EQ(schedule_batch(100, 1), 100);
  EXPECT_EQ(schedule_batch(100, 4), 200);
  EXPECT_EQ(schedule_batch(100, 2), 141);
  EXPECT_EQ(schedule_batch(100, 4, 57), 57);
  EXPECT_THROW(schedule_batch(1, 1), InvalidInput);
}

TEST(Schedule, InitialStep) {
  EXPECT_DOUBLE_EQ(schedule_initial_step(2.0, 4, 0.5), 1.0);
  EXPECT_DOUBLE_EQ(schedule_initial_step(1.0, 1, 0.75), 1.0);
  EXPECT_DOUBLE_EQ(schedule_initial_step(1.0, 16, 0.75), 0.125);
}

TEST(Config, Validation) {
  AttackConfig c;
  EXPECT_NO_THROW(c.validate());
  c.iterations = 0;
  EXPECT_THROW(c.validate(), InvalidInput);
  c = {};
  c.initial_batch = 1;
  EXPECT_THROW(c.validate(), InvalidInput);
  c = {};
  c.targeted = true;
  EXPECT_THROW(c.validate(), InvalidInput);
  c = {};
  c.step_exponent = 1.0;
  EXPECT_THROW(c.validate(), InvalidInput);
}

// ---- bin search -----------------------------------------------------------

TEST(BinSearch, HyperplaneCrossing) {
  // success iff x1 > 0.5
  QueryingOracle o(AttackObjective::untargeted(plane({1, 0}, -0.5), 0));
  const double theta = 1e-3;
  const auto r = bin_search(o, Sample{1, 0}, Sample{0, 0}, theta, Norm::L2);
  const double alpha_u = 1.0 - r.alpha;  // weight on x_adv at the adversarial end
  EXPECT_GT(alpha_u, 0.5);
  EXPECT_LE(alpha_u, 0.5 + theta);
  EXPECT_GT(r.point[0], 0.5);
  EXPECT_LE(r.point[0], 0.5 + theta);
  EXPECT_LE(r.alpha_fail - r.alpha, theta);
  EXPECT_EQ(o.query_count(), 10u);
  EXPECT_EQ(r.queries, bin_search_query_count(theta));
}

TEST(BinSearch, CoarseThresholdStillAdversarial) {
  QueryingOracle o(AttackObjective::untargeted(plane({1, 0}, -0.5), 0));
  const auto r = bin_search(o, Sample{1, 0}, Sample{0, 0}, 0.5, Norm::L2);
  EXPECT_EQ(o.query_count(), 1u);
  EXPECT_TRUE(o.objective().success(r.point));
}

TEST(BinSearch, SphereCrossing) {
  auto m = std::make_shared<AnalyticModel>(AnalyticModel::sphere({0.5, 0.5}, 0.3));
  QueryingOracle o(AttackObjective::untargeted(m, 1));
  const Sample xs{0.5, 0.5}, xa{1, 1};
  const double theta = 1e-4;
  const auto r = bin_search(o, xa, xs, theta, Norm::L2);
  EXPECT_NEAR(distance(r.point, xs, Norm::L2), 0.3, theta * distance(xa, xs, Norm::L2));
  EXPECT_TRUE(o.objective().success(r.point));
}

TEST(BinSearch, PreconditionCheck) {
  QueryingOracle o(AttackObjective::untargeted(plane({1, 0}, -0.5), 0));
  EXPECT_THROW(bin_search(o, Sample{0.2, 0}, Sample{0, 0}, 0.01, Norm::L2, true), InvalidInput);
}

TEST(BinSearch, QueryCountIsCeilLog2) {
  for (double theta : {0.5, 0.3, 1e-2, 1e-3, 1e-4, 4.5554e-5}) {
    QueryingOracle o(AttackObjective::untargeted(plane({1, 0}, -0.5), 0));
    bin_search(o, Sample{1, 0}, Sample{0, 0}, theta, Norm::L2);
    EXPECT_EQ(o.query_count(), static_cast<std::uint64_t>(std::ceil(std::log2(1.0 / theta)))) << theta;
  }
}

TEST(BinSearch, LinfPathAdversarial) {
  QueryingOracle o(AttackObjective::untargeted(plane({1, 1}, -1.2), 0));
  const auto r = bin_search(o, Sample{0.9, 0.9}, Sample{0.2, 0.3}, 1e-3, Norm::Linf);
  EXPECT_TRUE(o.objective().success(r.point));
  EXPECT_NEAR(r.point[0] + r.point[1], 1.2, 0.01);
}

// ---- gradient estimate ----------------------------------------------------

TEST(Estimate, HyperplaneDirection) {
  RngStream wr(1, 0);
  const auto w = sample_unit_sphere(10, wr);
  Sample x(10, 0.5);
  auto m = plane(w, -dot(w, x));
  QueryingOracle o(AttackObjective::untargeted(m, 0));
  RngStream rng(2, kEstimateStream);
  const auto est = estimate_gradient_direction(o, x, 1e-3, 10000, rng, true, Norm::L2);
  EXPECT_GE(cosine_to(est.raw, w), 0.95);
  EXPECT_NEAR(norm2(est.direction), 1.0, 1e-9);
  EXPECT_EQ(o.query_count(), 10000u);
  EXPECT_EQ(est.probes_used, 10000);
}

TEST(Estimate, AllProbesSucceedFallsBackToMean) {
  RngStream rng(3, 0);
  std::vector<Sample> u;
  for (int b = 0; b < 8; ++b) u.push_back(sample_unit_sphere(4, rng));
  const auto est = combine_probes(u, std::vector<int>(8, 1), true, Norm::L2);
  for (double v : est.raw) EXPECT_EQ(v, 0.0);
  EXPECT_TRUE(est.fallback_used);
  Sample mean(4, 0.0);
  for (const auto& p : u)
    for (std::size_t i = 0; i < 4; ++i) mean[i] += p[i] / 8;
  const double n = norm2(mean);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(est.direction[i], mean[i] / n, 1e-12);
  const auto neg = combine_probes(u, std::vector<int>(8, -1), true, Norm::L2);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(neg.direction[i], -mean[i] / n, 1e-12);
}

TEST(Estimate, TwoProbeBaselineAlgebra) {
  const Sample u1{0.6, 0.8, 0.0}, u2{0.0, 0.6, -0.8};
  const auto est = combine_probes({u1, u2}, {+1, -1}, true, Norm::L2);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(est.raw[i], u1[i] - u2[i]);
  const auto plain = combine_probes({u1, u2}, {+1, -1}, false, Norm::L2);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(plain.raw[i], 0.5 * (u1[i] - u2[i]));
  EXPECT_FALSE(est.fallback_used);
}

TEST(Estimate, LinfDirectionIsSign) {
  const auto est = combine_probes({Sample{0.6, -0.8, 0.0}, Sample{0.0, 0.6, 0.8}}, {+1, -1}, true, Norm::Linf);
  EXPECT_EQ(est.direction, (Sample{1.0, -1.0, -1.0}));
}

TEST(Estimate, RejectsBadArguments) {
  QueryingOracle o(AttackObjective::untargeted(plane({1, 0}, -0.5), 0));
  RngStream rng(0, 0);
  EXPECT_THROW(estimate_gradient_direction(o, Sample{0.5, 0.5}, 0.0, 10, rng, true, Norm::L2), InvalidInput);
  EXPECT_THROW(estimate_gradient_direction(o, Sample{0.5, 0.5}, 0.1, 1, rng, true, Norm::L2), InvalidInput);
}

// ---- step search ----------------------------------------------------------

TEST(StepSearch, NormalDirectionAcceptedImmediately) {
  QueryingOracle o(AttackObjective::untargeted(plane({1, 0}, -0.5), 0));
  const auto r = step_size_search(o, Sample{0.6, 0.5}, Sample{1, 0}, 0.2);
  EXPECT_EQ(r.trials, 1);
  EXPECT_EQ(r.xi, 0.2);
  EXPECT_EQ(o.query_count(), 1u);
}

TEST(StepSearch, HalvesUntilInsideMargin) {
  // x at margin m = 0.05 from the plane x1 = 0.5, v points into the failure side.
  QueryingOracle o(AttackObjective::untargeted(plane({1, 0}, -0.5), 0));
  const Sample v{-std::sqrt(0.5), std::sqrt(0.5)};
  const double m = 0.05, xi0 = 0.4;
  const auto r = step_size_search(o, Sample{0.5 + m, 0.3}, v, xi0);
  EXPECT_FALSE(r.failed);
  EXPECT_LT(r.xi * std::abs(v[0]), m);
  // first success of the halving sequence
  EXPECT_GE(2 * r.xi * std::abs(v[0]), m);
  EXPECT_EQ(r.trials, static_cast<int>(std::round(std::log2(xi0 / r.xi))) + 1);
}

TEST(StepSearch, AlwaysFailingOracleUnderflows) {
  auto never = std::make_shared<FunctionClassifier>(2, 2, [](ConstVec) { return 0; });
  QueryingOracle o(AttackObjective::untargeted(never, 0));
  const auto r = step_size_search(o, Sample{0.5, 0.5}, Sample{1, 0}, 1.0);
  EXPECT_TRUE(r.failed);
  EXPECT_EQ(r.x_tilde, (Sample{0.5, 0.5}));
  EXPECT_EQ(r.trials, 40);  // 1, 1/2, ..., 2^-39 >= 1e-12
}

// ---- initialisation -------------------------------------------------------

TEST(Init, EverywhereButOriginSucceedsAtFirstBlend) {
  const Sample xs{0.3, 0.3};
  auto m = std::make_shared<FunctionClassifier>(2, 2, [xs](ConstVec x) { return x[0] == xs[0] && x[1] == xs[1] ? 0 : 1; });
  QueryingOracle o(AttackObjective::untargeted(m, 0));
  RngStream rng(1, kInitStream);
  RngStream mirror(1, kInitStream);
  const auto x0 = init_untargeted(o, xs, rng);
  const auto eta = sample_uniform_cube(2, mirror);
  EXPECT_EQ(o.query_count(), 1u);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_DOUBLE_EQ(x0[i], 0.9 * xs[i] + 0.1 * eta[i]);
}

TEST(Init, HyperplaneFirstCrossingWeight) {
  const Sample xs{0.1, 0.5};
  QueryingOracle o(AttackObjective::untargeted(plane({1, 0}, -0.5), 0));
  RngStream rng(7, kInitStream), mirror(7, kInitStream);
  const auto x0 = init_untargeted(o, xs, rng);
  // Replay the scan analytically for the same noise draws.
  int expected_queries = 0;
  for (int draw = 0; draw < kInitDraws; ++draw) {
    const auto eta = sample_uniform_cube(2, mirror);
    bool hit = false;
    for (int k = 1; k <= 10; ++k) {
      ++expected_queries;
      const double w = k / 10.0;
      if ((1 - w) * xs[0] + w * eta[0] > 0.5) {
        EXPECT_NEAR(x0[0], (1 - w) * xs[0] + w * eta[0], 1e-15);
        hit = true;
        break;
      }
    }
    if (hit) break;
  }
  EXPECT_EQ(o.query_count(), static_cast<std::uint64_t>(expected_queries));
}

TEST(Init, NeverSucceedingObjectiveFailsAfterThousandQueries) {
  auto never = std::make_shared<FunctionClassifier>(3, 2, [](ConstVec) { return 0; });
  QueryingOracle o(AttackObjective::untargeted(never, 0));
  RngStream rng(1, kInitStream);
  EXPECT_THROW(init_untargeted(o, Sample{0.5, 0.5, 0.5}, rng), InitializationFailed);
  EXPECT_EQ(o.query_count(), 1000u);
}

TEST(Init, Targeted) {
  auto m = plane({1, 0}, -0.5);
  QueryingOracle o(AttackObjective::targeted(m, 1));
  EXPECT_EQ(init_targeted(Sample{0.8, 0.2}, o), (Sample{0.8, 0.2}));
  EXPECT_EQ(o.query_count(), 1u);
  EXPECT_THROW(init_targeted(Sample{0.1, 0.2}, o), InvalidInitialization);
}

// ---- attack ---------------------------------------------------------------

TEST(Attack, HyperplaneOptimum) {
  const std::size_t d = 20;
  const auto m = make_standard_analytic("hyperplane", d, 3);
  RngStream rng(4, 7);
  const auto x = standard_samples(*m, 1, rng)[0];
  QueryingOracle o(AttackObjective::untargeted_at(m, x));
  AttackConfig cfg;
  cfg.iterations = 30;
  cfg.max_queries = std::nullopt;
  cfg.seed = 5;
  const auto tr = hsja_attack(o, x, cfg);
  ASSERT_TRUE(tr.success);
  EXPECT_LE(tr.final_distance(x, Norm::L2), 1.01 * *analytic_optimum(*m, x));
  EXPECT_EQ(tr.queries_used, o.query_count());
}

TEST(Attack, SphereCenterReachesRadius) {
  auto m = std::make_shared<AnalyticModel>(AnalyticModel::sphere(Sample(10, 0.5), 0.3));
  const Sample x(10, 0.5);
  QueryingOracle o(AttackObjective::untargeted_at(m, x));
  AttackConfig cfg;
  cfg.iterations = 30;
  cfg.max_queries = std::nullopt;
  cfg.seed = 1;
  const auto tr = hsja_attack(o, x, cfg);
  // The certified point lies on the success side, within the bisection slack.
  const double theta = schedule_theta(10, Norm::L2);
  EXPECT_GE(tr.final_distance(x, Norm::L2), 0.3 * (1 - 1e-12));
  EXPECT_LE(tr.final_distance(x, Norm::L2), 0.3 / (1 - theta));
}

TEST(Attack, LinfRunsAndStaysAdversarial) {
  const auto m = make_standard_analytic("hyperplane", 10, 3);
  RngStream rng(4, 7);
  const auto x = standard_samples(*m, 1, rng)[0];
  QueryingOracle o(AttackObjective::untargeted_at(m, x));
  AttackConfig cfg;
  cfg.norm = Norm::Linf;
  cfg.iterations = 20;
  cfg.seed = 2;
  const auto tr = hsja_attack(o, x, cfg);
  ASSERT_TRUE(tr.success);
  EXPECT_TRUE(o.objective().success(tr.final_sample));
  // The l-inf optimum for a plane is |s(x)| / ||w||_1.
  const double opt = std::abs(m->score(x)) / [&] {
    double s = 0;
    for (double v : m->normal()) s += std::abs(v);
    return s;
  }();
  EXPECT_LE(tr.final_distance(x, Norm::Linf), 1.25 * opt);
  EXPECT_GE(tr.final_distance(x, Norm::Linf), opt * (1 - 1e-9));
}

TEST(Attack, ZeroBudgetWithTargetedInitKeepsOnlyInit) {
  auto m = plane({1, 0}, -0.5);
  QueryingOracle o(AttackObjective::targeted(m, 1));
  AttackConfig cfg;
  cfg.targeted = true;
  cfg.target_label = 1;
  cfg.max_queries = 0;
  const auto tr = hsja_attack(o, Sample{0.2, 0.5}, cfg, Sample{0.9, 0.5});
  ASSERT_EQ(tr.records.size(), 1u);
  EXPECT_EQ(tr.records[0].t, 0);
  EXPECT_EQ(tr.final_sample, (Sample{0.9, 0.5}));
  EXPECT_TRUE(tr.success);
  EXPECT_TRUE(tr.truncated);
  EXPECT_EQ(tr.queries_used, 1u);
}

TEST(Attack, TargetedWithoutInitRejected) {
  QueryingOracle o(AttackObjective::targeted(plane({1, 0}, -0.5), 1));
  AttackConfig cfg;
  cfg.targeted = true;
  cfg.target_label = 1;
  EXPECT_THROW(hsja_attack(o, Sample{0.2, 0.5}, cfg), InvalidInput);
}

TEST(Attack, QueryIdentityAndMonotoneDistance) {
  for (const char* kind : {"hyperplane", "sphere", "quadratic"}) {
    const auto m = make_standard_analytic(kind, 15, 2);
    RngStream rng(8, 7);
    const auto x = standard_samples(*m, 1, rng)[0];
    QueryingOracle inner(AttackObjective::untargeted_at(m, x));
    CountingOracle o(inner);
    AttackConfig cfg;
    cfg.iterations = 25;
    cfg.max_queries = std::nullopt;
    cfg.seed = 9;
    const auto tr = hsja_attack(o, x, cfg);
    const double theta = schedule_theta(15, Norm::L2);
    const auto bs = static_cast<std::uint64_t>(bin_search_query_count(theta));
    EXPECT_EQ(tr.queries_used, o.calls) << kind;
    EXPECT_EQ(tr.queries_used, inner.query_count()) << kind;
    for (std::size_t k = 1; k + 1 < tr.records.size(); ++k) {
      const auto& r = tr.records[k];
      EXPECT_EQ(r.queries - tr.records[k - 1].queries, bs + static_cast<std::uint64_t>(r.batch + r.step_trials))
          << kind << " t=" << r.t;
      EXPECT_EQ(r.batch, schedule_batch(100, r.t));
    }
    EXPECT_EQ(tr.records.back().queries - tr.records[tr.records.size() - 2].queries, bs);
    for (std::size_t k = 2; k < tr.records.size(); ++k)
      EXPECT_LE(tr.records[k].distance, tr.records[k - 1].distance * (1 + theta) + 1e-12) << kind;
    for (std::size_t k = 1; k < tr.records.size(); ++k) EXPECT_GT(tr.records[k].queries, tr.records[k - 1].queries);
  }
}

TEST(Attack, RecordedIteratesAreAdversarial) {
  const auto m = make_standard_analytic("quadratic", 8, 1);
  RngStream rng(1, 7);
  const auto x = standard_samples(*m, 1, rng)[0];
  QueryingOracle o(AttackObjective::untargeted_at(m, x));
  AttackConfig cfg;
  cfg.iterations = 15;
  std::vector<Sample> boundary;
  const auto tr = hsja_attack(o, x, cfg, std::nullopt,
                              [&](const IterationView& v) { boundary.emplace_back(v.boundary_point.begin(), v.boundary_point.end()); });
  for (const auto& b : boundary) EXPECT_TRUE(o.objective().success(b));
  EXPECT_TRUE(o.objective().success(tr.final_sample));
}

TEST(Attack, TruncationGivesValidBestSoFar) {
  for (std::uint64_t cap : {500u, 1000u}) {
    const auto m = make_standard_analytic("sphere", 20, 0);
    RngStream rng(2, 7);
    const auto x = standard_samples(*m, 1, rng)[0];
    QueryingOracle o(AttackObjective::untargeted_at(m, x));
    AttackConfig cfg;
    cfg.max_queries = cap;
    cfg.seed = 4;
    const auto tr = hsja_attack(o, x, cfg);
    EXPECT_TRUE(tr.truncated);
    EXPECT_TRUE(tr.success);
    EXPECT_LE(tr.queries_used, cap);
    EXPECT_TRUE(o.objective().success(tr.final_sample));
    double best = INFINITY;
    for (const auto& r : tr.records) {
      EXPECT_LE(r.queries, cap);
      best = std::min(best, r.distance);
    }
    EXPECT_DOUBLE_EQ(tr.final_distance(x, Norm::L2), best);
  }
}

TEST(Attack, DeterministicTraceBytes) {
  const auto m = make_standard_analytic("quadratic", 12, 5);
  RngStream rng(3, 7);
  const auto x = standard_samples(*m, 1, rng)[0];
  auto run = [&] {
    QueryingOracle o(AttackObjective::untargeted_at(m, x));
    AttackConfig cfg;
    cfg.iterations = 12;
    cfg.seed = 77;
    return to_json(hsja_attack(o, x, cfg)).dump();
  };
  EXPECT_EQ(run(), run());
}

TEST(Attack, TraceJsonShape) {
  const auto m = make_standard_analytic("hyperplane", 5, 1);
  RngStream rng(1, 7);
  const auto x = standard_samples(*m, 1, rng)[0];
  QueryingOracle o(AttackObjective::untargeted_at(m, x));
  AttackConfig cfg;
  cfg.iterations = 3;
  const auto j = to_json(hsja_attack(o, x, cfg));
  for (const char* key : {"config", "records", "final_sample", "success", "queries_used", "schema_version"})
    EXPECT_TRUE(j.contains(key)) << key;
  for (const char* key : {"t", "queries", "distance", "xi", "delta", "batch", "fallback_used"})
    EXPECT_TRUE(j["records"][0].contains(key)) << key;
}

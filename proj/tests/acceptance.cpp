// Acceptance suite: one PASS/FAIL line per criterion.
//   acceptance <criterion>   runs one criterion (exit 0 on PASS)
//   acceptance all           runs every criterion

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "hsja/hsja.hpp"
#include "guarantee_checks.hpp"

using namespace hsja;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
  std::string fingerprint;  // every number the verdict depends on, full precision
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

/// Untargeted l2 HSJA from a standard sample of the given oracle.
AttackTrace run_hsja(const ClassifierPtr& model, const Sample& x, std::uint64_t seed, int iterations,
                     std::optional<double> theta = std::nullopt) {
  QueryingOracle o(AttackObjective::untargeted_at(model, x));
  AttackConfig cfg;
  cfg.iterations = iterations;
  cfg.initial_batch = 100;
  cfg.max_queries = std::nullopt;
  cfg.theta_override = theta;
  cfg.seed = seed;
  return hsja_attack(o, x, cfg);
}

Outcome hyperplane_optimum() {
  Stopwatch sw;
  Outcome out;
  double ratio_sum = 0.0, worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto m = make_standard_analytic("hyperplane", 20, seed);
    RngStream rng(seed, 7);
    const auto x = standard_samples(*m, 1, rng)[0];
    const auto tr = run_hsja(m, x, seed, 30);
    const double ratio = tr.final_distance(x, Norm::L2) / *analytic_optimum(*m, x);
    ratio_sum += ratio;
    worst = std::max(worst, ratio);
    out.fingerprint += fmt(ratio) + ";";
  }
  const double mean = ratio_sum / 10.0;
  const double secs = sw.seconds();
  out.pass = mean <= 1.01 && secs < 10.0;
  out.detail = "mean ratio " + fmt3(mean) + " (worst " + fmt3(worst) + ", need <= 1.01), " + fmt3(secs) + " s";
  return out;
}

Outcome sphere_optimum() {
  Outcome out;
  double ratio_sum = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto m = make_standard_analytic("sphere", 20, seed);
    const Sample x(20, 0.5);
    const auto tr = run_hsja(m, x, seed, 30);
    const double ratio = tr.final_distance(x, Norm::L2) / m->radius();
    ratio_sum += ratio;
    out.fingerprint += fmt(ratio) + ";";
  }
  const double mean = ratio_sum / 10.0;
  out.pass = std::abs(mean - 1.0) <= 0.01;
  out.detail = "mean distance / radius " + fmt3(mean) + " (need within 1%)";
  return out;
}

Outcome estimator_cosine_bound() {
  Stopwatch sw;
  Outcome out;
  out.pass = true;
  for (std::size_t d : {5u, 20u})
    for (double delta : {1e-3, 1e-2}) {
      const auto r = checks::unbiasedness(d, delta, 200, 1000, 17);
      const bool ok = r.cosine >= r.bound - 3.0 * r.se;
      out.pass = out.pass && ok;
      out.detail += "d=" + std::to_string(d) + " delta=" + fmt3(delta) + ": cos " + fmt3(r.cosine) + " vs bound " +
                    fmt3(r.bound) + " - 3*" + fmt3(r.se) + (ok ? "; " : " [violated]; ");
      out.fingerprint += fmt(r.cosine) + "," + fmt(r.se) + ";";
    }
  const double secs = sw.seconds();
  out.pass = out.pass && secs < 30.0;
  out.detail += fmt3(secs) + " s";
  return out;
}

Outcome baseline_variance() {
  Outcome out;
  const auto site = checks::quadratic_site(10, 5);
  const double delta = 0.01;
  const auto x = checks::off_boundary_point(site, delta, 0.5);
  int wins = 0, eligible = 0;
  double min_phi = 1.0;
  for (int rep = 0; rep < 20; ++rep) {
    RngStream rng(5, 100 + static_cast<std::uint64_t>(rep));
    const auto v = checks::variance_comparison(*site.model, x, delta, 100, 500, rng);
    min_phi = std::min(min_phi, std::abs(v.mean_phi));
    if (std::abs(v.mean_phi) < 0.3) continue;
    ++eligible;
    wins += v.trace_baseline < v.trace_plain;
    out.fingerprint += fmt(v.trace_plain) + "," + fmt(v.trace_baseline) + ";";
  }
  out.pass = eligible == 20 && wins >= 19;
  out.detail = "baseline variance lower in " + std::to_string(wins) + "/" + std::to_string(eligible) +
               " repetitions (need >= 19/20), min |phi| " + fmt3(min_phi);
  return out;
}

Outcome whitebox_rate() {
  Outcome out;
  out.pass = true;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto r = checks::convergence_rate(10, seed, 0.75, 10, 200);
    out.pass = out.pass && r.slope <= -0.10;
    out.detail += "seed " + std::to_string(seed) + " slope " + fmt3(r.slope) + "; ";
    out.fingerprint += fmt(r.slope) + ";";
  }
  out.detail += "need <= -0.10";
  return out;
}

Outcome hsja_vs_boundary_ordering() {
  Stopwatch sw;
  Outcome out;
  out.pass = true;
  int cells = 0, held = 0;
  for (const char* kind : {"hyperplane", "sphere", "quadratic"})
    for (std::size_t d : {10u, 20u, 100u}) {
      BenchmarkSpec spec;
      spec.oracle.kind = kind;
      spec.oracle.dim = d;
      spec.oracle.seed = 1;
      RngStream rng(2, 7);
      spec.samples = standard_samples(*make_standard_analytic(kind, d, 1), 20, rng);
      spec.checkpoints = {1000, 5000, 20000};
      spec.seed = 3;
      const auto rep = run_benchmark(spec);
      std::string row;
      for (std::size_t c = 0; c < spec.checkpoints.size(); ++c) {
        const double h = rep.curves.at("hsja")[c].median;
        const double b = rep.curves.at("boundary")[c].median;
        ++cells;
        if (h <= b) ++held;
        else out.pass = false;
        row += " " + fmt3(h) + (h <= b ? "<=" : ">") + fmt3(b);
        out.fingerprint += fmt(h) + "," + fmt(b) + ";";
      }
      out.detail += std::string(kind) + " d=" + std::to_string(d) + ":" + row + "; ";
    }
  const double secs = sw.seconds();
  out.pass = out.pass && secs < 300.0;
  out.detail = "HSJA <= BA in " + std::to_string(held) + "/" + std::to_string(cells) + " cells (hsja vs ba medians: " +
               out.detail + fmt3(secs) + " s)";
  return out;
}

Outcome sensitivity_orderings() {
  Outcome out;
  const auto m = make_standard_analytic("quadratic", 20, 1);
  RngStream rng(2, 7);
  const auto samples = standard_samples(*m, 20, rng);

  DeltaSensitivityOptions dopt;
  dopt.batch = 100;
  dopt.n_samples = 10;
  dopt.repetitions = 2;
  dopt.seed = 4;
  const auto rows = delta_sensitivity_experiment(m, samples, dopt);
  bool delta_ok = true;
  std::map<std::pair<double, bool>, double> med;
  for (const auto& r : rows) {
    med[{r.multiplier, r.baseline}] = r.median;
    out.fingerprint += fmt(r.median) + ";";
  }
  for (bool base : {false, true})
    for (double mult : dopt.multipliers)
      if (mult != 1.0 && med[{mult, base}] > med[{1.0, base}]) delta_ok = false;
  const bool baseline_ok = med[{100.0, true}] >= med[{100.0, false}];
  out.detail = "delta medians (baseline on):";
  for (double mult : dopt.multipliers) out.detail += " " + fmt3(mult) + "x=" + fmt3(med[{mult, true}]);
  out.detail += "; off:";
  for (double mult : dopt.multipliers) out.detail += " " + fmt3(mult) + "x=" + fmt3(med[{mult, false}]);
  out.detail += std::string("; 1x maximal ") + (delta_ok ? "yes" : "no") + "; baseline helps at 100x " +
                (baseline_ok ? "yes" : "no");

  StepsizeOptions sopt;
  sopt.checkpoints = {1000, 5000, 20000};
  sopt.seed = 5;
  const auto res = stepsize_scheme_experiment(m, samples,
                                              {parse_scheme("sqrt-decay"), parse_scheme("constant(0.01)"),
                                               parse_scheme("constant(0.1)"), parse_scheme("constant(1.0)")},
                                              sopt);
  bool step_ok = true;
  out.detail += "; final medians:";
  for (const auto& r : res) {
    out.detail += " " + r.scheme + "=" + fmt3(r.curve.back().median);
    out.fingerprint += fmt(r.curve.back().median) + ";";
    if (r.curve.back().median < res[0].curve.back().median) step_ok = false;
  }
  out.detail += std::string("; sqrt-decay best ") + (step_ok ? "yes" : "no");
  out.pass = delta_ok && baseline_ok && step_ok;
  return out;
}

Outcome binsearch_precision() {
  Outcome out;
  out.pass = true;
  const auto m = make_standard_analytic("hyperplane", 20, 3);
  int checked = 0;
  for (double theta : {1e-2, 1e-3, 1e-4}) {
    const int expected_q = static_cast<int>(std::ceil(std::log2(1.0 / theta)));
    double worst = 0.0;
    RngStream rng(6, 0);
    for (int k = 0; k < 50; ++k) {
      const Sample x_star = sample_uniform_cube(20, rng);
      const Sample x_adv = sample_uniform_cube(20, rng);
      const double s_star = m->score(x_star), s_adv = m->score(x_adv);
      if (s_star * s_adv >= 0.0) continue;
      ++checked;
      QueryingOracle o(AttackObjective::untargeted_at(m, x_star));
      const auto bp = bin_search(o, x_adv, x_star, theta, Norm::L2);
      // Weight on x* where the segment crosses the plane.
      const double crossing = s_adv / (s_adv - s_star);
      const double err = std::abs(bp.alpha - crossing);
      worst = std::max(worst, err);
      if (err > theta || bp.queries != expected_q || o.query_count() != static_cast<std::uint64_t>(expected_q))
        out.pass = false;
      out.fingerprint += fmt(bp.alpha) + ";";
    }
    out.detail += "theta=" + fmt3(theta) + ": worst |alpha - crossing| " + fmt3(worst) + ", " +
                  std::to_string(expected_q) + " queries; ";
  }
  out.detail += std::to_string(checked) + " segments";
  return out;
}

/// Forwards decisions and counts them independently of the inner oracle.
class CountingOracle {
 public:
  explicit CountingOracle(QueryingOracle& inner) : inner_(inner) {}
  bool decision(ConstVec x) {
    ++calls;
    return inner_.decision(x);
  }
  std::uint64_t query_count() const { return inner_.query_count(); }
  std::optional<std::uint64_t> cap() const { return inner_.cap(); }
  void set_cap(std::optional<std::uint64_t> c) { inner_.set_cap(c); }
  std::uint64_t calls = 0;

 private:
  QueryingOracle& inner_;
};

Outcome query_accounting() {
  Outcome out;
  out.pass = true;
  int iterations_checked = 0;
  for (const char* kind : {"hyperplane", "sphere", "quadratic"}) {
    const auto m = make_standard_analytic(kind, 20, 2);
    RngStream rng(8, 7);
    const auto x = standard_samples(*m, 1, rng)[0];
    QueryingOracle inner(AttackObjective::untargeted_at(m, x));
    CountingOracle o(inner);
    AttackConfig cfg;
    cfg.iterations = 30;
    cfg.max_queries = std::nullopt;
    cfg.seed = 9;
    const auto tr = hsja_attack(o, x, cfg);
    const auto bs = static_cast<std::uint64_t>(bin_search_query_count(schedule_theta(20, Norm::L2)));
    std::uint64_t rebuilt = tr.records.front().queries;  // initialisation
    for (std::size_t k = 1; k < tr.records.size(); ++k) {
      const auto& r = tr.records[k];
      rebuilt += k + 1 < tr.records.size() ? bs + static_cast<std::uint64_t>(r.batch + r.step_trials) : bs;
      if (rebuilt != r.queries) out.pass = false;
      ++iterations_checked;
    }
    if (rebuilt != tr.queries_used || o.calls != tr.queries_used) out.pass = false;
    out.fingerprint += std::to_string(tr.queries_used) + ";";
  }
  out.detail = std::to_string(iterations_checked) + " iterations rebuilt from the identity";
  for (std::uint64_t cap : {500u, 1000u}) {
    const auto m = make_standard_analytic("sphere", 20, 0);
    RngStream rng(2, 7);
    const auto x = standard_samples(*m, 1, rng)[0];
    QueryingOracle o(AttackObjective::untargeted_at(m, x));
    AttackConfig cfg;
    cfg.max_queries = cap;
    cfg.seed = 4;
    const auto tr = hsja_attack(o, x, cfg);
    double best = INFINITY;
    bool within = true;
    for (const auto& r : tr.records) {
      best = std::min(best, r.distance);
      within = within && r.queries <= cap;
    }
    const bool valid = tr.truncated && tr.success && within && tr.queries_used <= cap &&
                       o.objective().success(tr.final_sample) && tr.final_distance(x, Norm::L2) == best;
    out.pass = out.pass && valid;
    out.detail += "; cap " + std::to_string(cap) + ": " + std::to_string(tr.queries_used) + " used, best " +
                  fmt3(best) + (valid ? "" : " [invalid]");
    out.fingerprint += fmt(best) + ";";
  }
  return out;
}

Outcome region_wrapper() {
  Outcome out;
  int good = 0, base_adversarial = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto base = make_standard_analytic("hyperplane", 20, seed);
    // Originals at least two vote radii from the plane, where the wrapper's
    // label at x* is not itself a coin flip.
    RngStream rng(seed, 7);
    Sample x;
    do x = standard_samples(*base, 1, rng)[0];
    while (*analytic_optimum(*base, x) < 0.1);
    const auto wrapped = std::make_shared<RegionBasedWrapper>(base, 0.05, 25, RngStream(seed, 11));
    const auto tr = run_hsja(wrapped, x, seed, 30, 0.01);
    const double ratio = tr.final_distance(x, Norm::L2) / *analytic_optimum(*base, x);
    good += ratio <= 1.10;
    base_adversarial += base->classify(tr.final_sample) != base->classify(x);
    out.detail += fmt3(ratio) + " ";
    out.fingerprint += fmt(ratio) + ";";
  }
  out.pass = good >= 8;
  out.detail = std::to_string(good) + "/10 seeds within 1.10x of the optimum (ratios " + out.detail + "); " +
               std::to_string(base_adversarial) + "/10 final points adversarial for the base plane";
  return out;
}

const std::vector<std::pair<std::string, std::function<Outcome()>>>& criteria() {
  static const std::vector<std::pair<std::string, std::function<Outcome()>>> list{
      {"hyperplane_optimum", hyperplane_optimum}, {"sphere_optimum", sphere_optimum},
      {"estimator_cosine_bound", estimator_cosine_bound},         {"baseline_variance", baseline_variance},
      {"whitebox_rate", whitebox_rate},           {"hsja_vs_boundary_ordering", hsja_vs_boundary_ordering},
      {"sensitivity_orderings", sensitivity_orderings}, {"binsearch_precision", binsearch_precision},
      {"query_accounting", query_accounting},     {"region_wrapper", region_wrapper}};
  return list;
}

Outcome determinism() {
  Outcome out;
  out.pass = true;
  std::vector<std::string> differing;
  for (const auto& [name, fn] : criteria()) {
    if (fn().fingerprint != fn().fingerprint) {
      out.pass = false;
      differing.push_back(name);
    }
  }
  out.detail = std::to_string(criteria().size() - differing.size()) + "/" + std::to_string(criteria().size()) +
               " criteria reproduce exactly";
  for (const auto& n : differing) out.detail += " (differs: " + n + ")";
  return out;
}

bool report(const std::string& name, const Outcome& o) {
  std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
  std::fflush(stdout);
  return o.pass;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: acceptance <criterion|all>\n");
    return 2;
  }
  const std::string which = argv[1];
  bool all_pass = true, found = false;
  for (const auto& [name, fn] : criteria())
    if (which == "all" || which == name) {
      found = true;
      all_pass = report(name, fn()) && all_pass;
    }
  if (which == "all" || which == "determinism") {
    found = true;
    all_pass = report("determinism", determinism()) && all_pass;
  }
  if (!found) {
    std::fprintf(stderr, "unknown criterion '%s'\n", which.c_str());
    return 2;
  }
  return all_pass ? 0 : 1;
}

// hsja_cli: attack, benchmark, grad-eval, stepsize-eval, validate-model.
//
// Exit status: 0 success, 1 usage or configuration error, 2 completed but
// failed (no adversarial example within budget, or fixture mismatch).

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "hsja/hsja.hpp"

namespace fs = std::filesystem;
using namespace hsja;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitFailed = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct OracleFlags {
  std::string oracle;
  std::size_t dim = 0;
  std::uint64_t oracle_seed = 0;
  std::string region_based;
};

struct SeedFlag {
  std::uint64_t value = 0;
  CLI::Option* option = nullptr;

  std::uint64_t resolve() const {
    if (option && option->count() > 0) return value;
    if (const char* env = std::getenv("HSJA_SEED")) {
      try {
        std::size_t used = 0;
        const auto v = std::stoull(env, &used);
        if (used == std::string(env).size()) return v;
      } catch (const std::exception&) {
      }
      throw UsageError(std::string("HSJA_SEED: not an unsigned integer: '") + env + "'");
    }
    return 0;
  }
};

void add_seed(CLI::App* cmd, SeedFlag& seed) {
  seed.option = cmd->add_option("--seed", seed.value, "Master seed (falls back to $HSJA_SEED, then 0)");
}

std::pair<double, int> parse_region(const std::string& text) {
  const auto comma = text.find(',');
  try {
    if (comma == std::string::npos) throw std::invalid_argument(text);
    std::size_t used = 0;
    const double radius = std::stod(text.substr(0, comma), &used);
    const int votes = std::stoi(text.substr(comma + 1));
    if (!(radius > 0.0) || votes < 1) throw std::invalid_argument(text);
    return {radius, votes};
  } catch (const std::exception&) {
    throw UsageError("--region-based: expected <radius>,<votes> with radius > 0 and votes >= 1, got '" + text + "'");
  }
}

/// Resolves --oracle. Analytic oracles take their dimension from `dim`.
ClassifierPtr make_oracle(const OracleFlags& f, std::size_t dim, std::uint64_t run_seed) {
  ClassifierPtr base;
  if (f.oracle.rfind("analytic:", 0) == 0) {
    const auto kind = f.oracle.substr(9);
    if (kind != "hyperplane" && kind != "sphere" && kind != "quadratic")
      throw UsageError("--oracle: unknown analytic oracle '" + kind + "' (hyperplane, sphere or quadratic)");
    base = make_standard_analytic(kind, dim, f.oracle_seed);
  } else if (f.oracle.rfind("model:", 0) == 0) {
    base = load_model(f.oracle.substr(6));
  } else {
    throw UsageError("--oracle: expected analytic:<hyperplane|sphere|quadratic> or model:<path>, got '" + f.oracle + "'");
  }
  if (!f.region_based.empty()) {
    const auto [radius, votes] = parse_region(f.region_based);
    base = std::make_shared<RegionBasedWrapper>(base, radius, votes, RngStream(run_seed, 11));
  }
  return base;
}

void write_or_print(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

std::string file_safe(std::string name) {
  for (char& c : name)
    if (c == '(' || c == ')') c = '_';
  while (!name.empty() && name.back() == '_') name.pop_back();
  return name;
}

template <class T>
std::string csv_list(const std::vector<T>& v) {
  std::ostringstream s;
  for (std::size_t i = 0; i < v.size(); ++i) s << (i ? "," : "") << v[i];
  return s.str();
}

// --- attack -----------------------------------------------------------------

struct AttackFlags {
  OracleFlags oracle;
  std::string input, norm = "l2", init, output, attack = "hsja";
  bool targeted = false;
  int target = -1;
  std::uint64_t max_queries = 25000;
  int iterations = 64;
  int b0 = 100;
  double theta = 0.0;
  SeedFlag seed;
  CLI::Option* target_opt = nullptr;
  CLI::Option* theta_opt = nullptr;
};

int run_attack(const AttackFlags& f) {
  if (f.targeted && f.init.empty()) throw UsageError("--init is required with --targeted (a target-class exemplar)");
  if (f.targeted && f.target_opt->count() == 0) throw UsageError("--target is required with --targeted");
  if (!f.targeted && !f.init.empty()) throw UsageError("--init is only used with --targeted");
  const Norm norm = parse_norm(f.norm);
  if (f.attack == "boundary" && norm != Norm::L2) throw UsageError("--attack boundary supports only --norm l2");

  const auto seed = f.seed.resolve();
  const Sample x_star = read_sample(f.input);
  const auto model = make_oracle(f.oracle, x_star.size(), seed);
  if (model->input_dim() != x_star.size())
    throw UsageError("--input: sample dimension " + std::to_string(x_star.size()) + " does not match the oracle (" +
                     std::to_string(model->input_dim()) + ")");
  std::optional<Sample> x_init;
  if (f.targeted) x_init = read_sample(f.init);

  auto objective = f.targeted ? AttackObjective::targeted(model, f.target) : AttackObjective::untargeted_at(model, x_star);
  if (objective.success(x_star)) throw UsageError("--input is already adversarial for this objective");
  QueryingOracle oracle(std::move(objective));

  AttackTrace trace;
  try {
    if (f.attack == "hsja") {
      AttackConfig cfg;
      cfg.norm = norm;
      cfg.targeted = f.targeted;
      if (f.targeted) cfg.target_label = f.target;
      cfg.iterations = f.iterations;
      cfg.initial_batch = f.b0;
      cfg.max_queries = f.max_queries;
      if (f.theta_opt->count() > 0) cfg.theta_override = f.theta;
      if (!f.oracle.region_based.empty() && !cfg.theta_override) cfg.theta_override = 0.01;
      cfg.seed = seed;
      trace = hsja_attack(oracle, x_star, cfg, x_init);
    } else {
      BoundaryConfig cfg;
      cfg.max_queries = f.max_queries;
      cfg.seed = seed;
      trace = boundary_attack_with_init(oracle, x_star, cfg, x_init);
    }
  } catch (const InitializationFailed& e) {
    std::cerr << "attack failed: " << e.what() << '\n';
    return kExitFailed;
  } catch (const InvalidInitialization& e) {
    throw UsageError(std::string("--init: ") + e.what());
  }
  write_or_print(f.output, to_json(trace).dump(2) + "\n");
  if (trace.success) {
    std::cerr << "adversarial example found: " << to_string(norm) << " distance "
              << trace.final_distance(x_star, norm) << " after " << trace.queries_used << " queries\n";
    return kExitOk;
  }
  std::cerr << "no adversarial example within " << trace.queries_used << " queries\n";
  return kExitFailed;
}

// --- benchmark --------------------------------------------------------------

int run_benchmark_cmd(const std::string& spec_path, const std::string& outdir, int jobs, const SeedFlag& seed_flag) {
  auto spec = load_benchmark_spec(spec_path);
  if (seed_flag.option->count() > 0 || (!spec.source.contains("seed") && std::getenv("HSJA_SEED")))
    spec.seed = seed_flag.resolve();
  if (jobs > 0) spec.jobs = jobs;
  const auto report = run_benchmark(spec);
  write_report(report, outdir);
  std::size_t errors = 0;
  for (const auto& r : report.runs) errors += !r.error.empty();
  std::cerr << "benchmark: " << report.runs.size() << " runs over " << report.n_samples << " samples";
  if (errors) std::cerr << " (" << errors << " initialisation failures)";
  std::cerr << "; report written to " << outdir << '\n';
  for (const auto& [attack, curve] : report.curves)
    for (const auto& p : curve)
      std::cerr << "  " << attack << " @" << p.queries << ": median " << p.median << " [" << p.q1 << ", " << p.q3
                << "]\n";
  return kExitOk;
}

// --- grad-eval --------------------------------------------------------------

struct ExperimentFlags {
  OracleFlags oracle;
  std::size_t dim = 10;
  std::size_t samples = 5;
  int jobs = 1;
  SeedFlag seed;
};

std::vector<Sample> experiment_samples(const AnalyticModel& m, std::size_t n, std::uint64_t seed) {
  RngStream rng(seed, 7);
  return standard_samples(m, n, rng);
}

std::shared_ptr<const AnalyticModel> analytic_for_experiment(const ExperimentFlags& f) {
  if (f.oracle.oracle.rfind("analytic:", 0) != 0)
    throw UnsupportedExperiment("this experiment needs an analytic oracle (analytic:<kind>), got '" + f.oracle.oracle + "'");
  const auto model = make_oracle(f.oracle, f.dim, 0);
  return std::static_pointer_cast<const AnalyticModel>(model);
}

int run_grad_eval(const ExperimentFlags& f, const DeltaSensitivityOptions& base, const std::string& output) {
  const auto model = analytic_for_experiment(f);
  auto opt = base;
  opt.seed = f.seed.resolve();
  opt.n_samples = f.samples;
  opt.jobs = f.jobs;
  const auto rows = delta_sensitivity_experiment(model, experiment_samples(*model, f.samples, opt.seed), opt);
  std::ostringstream out;
  out << "multiplier,baseline,n,q1,median,q3,mean,fallback_rate\n";
  for (const auto& r : rows)
    out << r.multiplier << ',' << (r.baseline ? "on" : "off") << ',' << r.n << ',' << r.q1 << ',' << r.median << ','
        << r.q3 << ',' << r.mean << ',' << r.fallback_rate << '\n';
  write_or_print(output, out.str());
  return kExitOk;
}

// --- stepsize-eval ----------------------------------------------------------

int run_stepsize_eval(const ExperimentFlags& f, const std::vector<std::string>& scheme_names, StepsizeOptions opt,
                      const std::string& outdir) {
  std::vector<SchemeSpec> schemes;
  for (const auto& n : scheme_names) schemes.push_back(parse_scheme(n));
  for (std::size_t i = 1; i < opt.checkpoints.size(); ++i)
    if (opt.checkpoints[i] <= opt.checkpoints[i - 1]) throw UsageError("--checkpoints: must be strictly increasing");
  const auto model = analytic_for_experiment(f);
  opt.seed = f.seed.resolve();
  opt.jobs = f.jobs;
  const auto results = stepsize_scheme_experiment(model, experiment_samples(*model, f.samples, opt.seed), schemes, opt);
  fs::create_directories(outdir);
  std::ostringstream summary;
  summary << "scheme,final_median,final_q1,final_q3,median_first_iteration_queries,monotone\n";
  for (const auto& r : results) {
    detail::write_file(fs::path(outdir) / ("curve_" + file_safe(r.scheme) + ".dat"), curve_dat(r.curve));
    std::vector<double> first(r.first_iteration_queries.begin(), r.first_iteration_queries.end());
    const auto& last = r.curve.back();
    summary << r.scheme << ',' << detail::csv_number(last.median) << ',' << detail::csv_number(last.q1) << ','
            << detail::csv_number(last.q3) << ',' << (first.empty() ? 0.0 : median(first)) << ','
            << (r.monotone ? "true" : "false") << '\n';
  }
  detail::write_file(fs::path(outdir) / "stepsize.csv", summary.str());
  std::cerr << summary.str();
  return kExitOk;
}

// --- validate-model ---------------------------------------------------------

int run_validate_model(const std::string& model_path, std::string fixtures_path) {
  const auto model = load_model(model_path);
  if (fixtures_path.empty()) fixtures_path = fixtures_path_for(model_path).string();
  Fixtures fixtures;
  try {
    fixtures = load_fixtures(fixtures_path);
  } catch (const nlohmann::json::exception& e) {
    throw ModelLoadError(fixtures_path + ": " + e.what());
  } catch (const std::runtime_error& e) {
    throw ModelLoadError(e.what());
  }
  for (std::size_t i = 0; i < fixtures.inputs.size(); ++i)
    if (fixtures.inputs[i].size() != model->input_dim())
      throw ModelLoadError("fixtures: inputs[" + std::to_string(i) + "] has dimension " +
                           std::to_string(fixtures.inputs[i].size()) + ", model expects " +
                           std::to_string(model->input_dim()));
  const auto check = check_fixtures(*model, fixtures);
  std::cout << check.matched << "/" << check.total << " fixtures match\n";
  return check.mismatches() == 0 ? kExitOk : kExitFailed;
}

void add_oracle_flags(CLI::App* cmd, OracleFlags& f, bool required) {
  auto* o = cmd->add_option("--oracle", f.oracle, "analytic:hyperplane|analytic:sphere|analytic:quadratic|model:<path>");
  if (required) o->required();
  cmd->add_option("--oracle-seed", f.oracle_seed, "Seed of the random analytic oracle");
  cmd->add_option("--region-based", f.region_based, "Wrap the oracle in region-based classification: <radius>,<votes>");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HopSkipJumpAttack and Boundary Attack against decision-only oracles"};
  app.require_subcommand(1);
  app.set_version_flag("--version",
                       "hsja_cli 1.0.0\nmodel-file schema " + std::to_string(kModelFileSchemaVersion) +
                           "\nattack-trace schema " + std::to_string(kAttackTraceSchemaVersion));

  AttackFlags af;
  auto* attack = app.add_subcommand("attack", "Run one attack and write its trace");
  add_oracle_flags(attack, af.oracle, true);
  attack->add_option("--input", af.input, "Original sample (.json array or single-row .csv)")->required();
  attack->add_option("--norm", af.norm, "l2 or linf")->check(CLI::IsMember({"l2", "linf"}));
  attack->add_flag("--targeted", af.targeted, "Targeted attack (needs --target and --init)");
  af.target_opt = attack->add_option("--target", af.target, "Target label");
  attack->add_option("--init", af.init, "Target-class exemplar used as the starting point");
  attack->add_option("--max-queries", af.max_queries, "Query budget after initialisation");
  attack->add_option("--iterations", af.iterations, "HSJA iterations T")->check(CLI::PositiveNumber);
  attack->add_option("--b0", af.b0, "Initial batch size B0")->check(CLI::Range(2, 1 << 30));
  af.theta_opt = attack->add_option("--theta", af.theta, "Binary search threshold override");
  attack->add_option("--attack", af.attack, "hsja or boundary")->check(CLI::IsMember({"hsja", "boundary"}));
  attack->add_option("--output", af.output, "Trace output path (stdout when omitted)");
  add_seed(attack, af.seed);

  std::string spec_path, outdir;
  int bench_jobs = 0;
  SeedFlag bench_seed;
  auto* bench = app.add_subcommand("benchmark", "Run a benchmark spec and write CSV, JSON and curve files");
  bench->add_option("--spec", spec_path, "Benchmark spec (JSON)")->required();
  bench->add_option("--outdir", outdir, "Output directory")->required();
  bench->add_option("--jobs", bench_jobs, "Worker threads (overrides the spec)")->check(CLI::PositiveNumber);
  add_seed(bench, bench_seed);

  ExperimentFlags gf;
  DeltaSensitivityOptions gopt;
  std::string grad_out;
  auto* grad = app.add_subcommand("grad-eval", "Gradient-direction cosine vs. probe radius, with and without baseline");
  add_oracle_flags(grad, gf.oracle, true);
  grad->add_option("--dim", gf.dim, "Dimension of the analytic oracle")->check(CLI::PositiveNumber);
  grad->add_option("--samples", gf.samples, "Original samples")->check(CLI::PositiveNumber);
  grad->add_option("--multipliers", gopt.multipliers, "Probe radius multipliers")->delimiter(',');
  grad->add_option("--at-iterations", gopt.at_iterations, "Iterations whose boundary points are used")->delimiter(',');
  grad->add_option("--batch", gopt.batch, "Probes per estimate")->check(CLI::Range(2, 1 << 30));
  grad->add_option("--reps", gopt.repetitions, "Estimates per point")->check(CLI::PositiveNumber);
  grad->add_option("--jobs", gf.jobs, "Worker threads")->check(CLI::PositiveNumber);
  grad->add_option("--output", grad_out, "Table output path (stdout when omitted)");
  add_seed(grad, gf.seed);

  ExperimentFlags sf;
  StepsizeOptions sopt;
  std::vector<std::string> scheme_names = valid_scheme_names();
  std::string step_outdir;
  auto* step = app.add_subcommand("stepsize-eval", "Median distance curves for alternative step-size rules");
  add_oracle_flags(step, sf.oracle, true);
  step->add_option("--dim", sf.dim, "Dimension of the analytic oracle")->check(CLI::PositiveNumber);
  step->add_option("--samples", sf.samples, "Original samples")->check(CLI::PositiveNumber);
  step->add_option("--schemes", scheme_names, "Comma-separated step-size schemes")->delimiter(',');
  step->add_option("--checkpoints", sopt.checkpoints, "Query checkpoints; the last is the budget")->delimiter(',');
  step->add_option("--jobs", sf.jobs, "Worker threads")->check(CLI::PositiveNumber);
  step->add_option("--outdir", step_outdir, "Output directory")->required();
  add_seed(step, sf.seed);

  std::string model_path, fixtures_path;
  auto* validate = app.add_subcommand("validate-model", "Check a model file against its prediction fixtures");
  validate->add_option("--model", model_path, "Model file")->required();
  validate->add_option("--fixtures", fixtures_path, "Fixtures file (default: <name>.fixtures.json)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*attack) return run_attack(af);
    if (*bench) return run_benchmark_cmd(spec_path, outdir, bench_jobs, bench_seed);
    if (*grad) return run_grad_eval(gf, gopt, grad_out);
    if (*step) return run_stepsize_eval(sf, scheme_names, sopt, step_outdir);
    if (*validate) return run_validate_model(model_path, fixtures_path);
  } catch (const SpecError& e) {
    std::cerr << "error: " << e.what() << '\n';
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help() << '\n';
  } catch (const fs::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
  }
  return kExitUsage;
}

// soc_ude command-line entry point.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "soc_ude/config.hpp"
#include "soc_ude/experiments.hpp"
#include "soc_ude/gradient.hpp"
#include "soc_ude/io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace socude;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRun = 2;

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string precision = "f64";
  std::string out = "runs";
  std::string config;
  int workers = 1;
  bool quiet = false;
};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::uint64_t resolve_seed(const Globals& g) {
  if (g.seed) return *g.seed;
  if (const char* env = std::getenv("SOC_UDE_SEED")) {
    try {
      std::size_t pos = 0;
      const unsigned long long v = std::stoull(env, &pos);
      if (pos != std::string(env).size()) throw std::invalid_argument("trailing characters");
      return v;
    } catch (const std::exception&) {
      throw UsageError(std::string("SOC_UDE_SEED is not an unsigned integer: '") + env + "'");
    }
  }
  return 7;
}

ExperimentConfig resolve_config(const Globals& g) {
  if (g.config.empty()) return ExperimentConfig{};
  try {
    return load_config(g.config);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

Precision resolve_precision(const Globals& g) {
  try {
    return parse_precision(g.precision);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

void print_metrics(const CaseReport& r) {
  const CaseMetrics& m = r.metrics;
  std::cout << "case " << r.id << " seed " << r.seed << " [" << r.best.key() << "]\n"
            << "  mse_noisy " << format_sig(m.mse_noisy, 6) << "  r2_noisy " << format_sig(m.r2_noisy, 8) << "\n"
            << "  mse_clean " << format_sig(m.mse_clean, 6) << "  rmse_clean " << format_sig(m.rmse_clean, 6)
            << "  r2_clean " << format_sig(m.r2_clean, 8) << "\n";
}

TrialConfig read_trial_manifest(const fs::path& path) {
  const json j = json::parse(read_file(path));
  return trial_from_json(j.contains("best") ? j.at("best") : j);
}

int cmd_generate(const Globals& g, int id) {
  const ExperimentConfig cfg = resolve_config(g);
  const CaseSpec spec = case_spec(id, cfg, resolve_seed(g));
  const Dataset data = case_dataset(spec, cfg);
  const fs::path out = g.out;
  write_file_atomic(out / "dataset.csv", dataset_csv(data));
  write_file_atomic(out / "drivers.csv", drivers_csv(data));
  const json manifest = {{"case", id},
                         {"seed", spec.seed},
                         {"config", config_to_json(cfg)},
                         {"hashes",
                          {{"dataset.csv", hash_hex(dataset_csv(data))}, {"drivers.csv", hash_hex(drivers_csv(data))}}}};
  write_file_atomic(out / "dataset.json", manifest.dump(2) + "\n");
  if (!g.quiet) std::cout << "wrote dataset for case " << id << " to " << out.string() << "\n";
  return kExitOk;
}

int cmd_tune(const Globals& g, int id) {
  const ExperimentConfig cfg = resolve_config(g);
  const CaseSpec spec = case_spec(id, cfg, resolve_seed(g));
  const Dataset data = case_dataset(spec, cfg);
  SearchOptions so;
  so.seed = spec.seed;
  so.workers = g.workers;
  so.loss = spec.loss;
  so.train = spec.final_train;
  so.gradient.model = cfg.model;
  so.gradient.dt = cfg.train_dt;
  so.eval_rtol = cfg.tune_rtol;
  so.eval_atol = cfg.tune_atol;
  so.precision = resolve_precision(g);
  if (!g.quiet) std::cout << "case " << id << ": sweeping " << spec.search.size() << " trials\n";
  const SearchResult sr = run_search(spec.search, data, so);
  const fs::path out = g.out;
  write_file_atomic(out / "sweep.csv", sweep_csv(sr.trials, true));
  write_file_atomic(out / "best.json", trial_to_json(sr.best.config).dump(2) + "\n");
  if (!g.quiet) std::cout << "best " << sr.best.config.key() << " tuning_loss " << format_sig(sr.best.tuning_loss, 6) << "\n";
  return kExitOk;
}

int cmd_train(const Globals& g, int id, const std::string& manifest, const std::set<int>& fail_at) {
  const ExperimentConfig cfg = resolve_config(g);
  const CaseSpec spec = case_spec(id, cfg, resolve_seed(g));
  const TrialConfig trial = manifest.empty() ? spec.final_trial : read_trial_manifest(manifest);
  const Dataset data = case_dataset(spec, cfg);
  const FinalFit fit =
      final_fit(spec, cfg, data, trial, resolve_precision(g), fail_at, g.quiet ? nullptr : &std::cout);
  const fs::path out = g.out;
  write_file_atomic(out / "history.csv", history_csv(fit.history, true));
  write_checkpoint(out, fit.params, cfg.model);
  write_file_atomic(out / "best.json", trial_to_json(trial).dump(2) + "\n");
  if (!g.quiet)
    std::cout << "best training loss " << format_sig(fit.best_loss, 6) << " at iteration " << fit.best_iter << "\n";
  return kExitOk;
}

int cmd_eval(const Globals& g, int id, const std::string& checkpoint) {
  const ExperimentConfig cfg_in = resolve_config(g);
  const CaseSpec spec = case_spec(id, cfg_in, resolve_seed(g));
  auto [params, model] = read_checkpoint(checkpoint);
  ExperimentConfig cfg = cfg_in;
  cfg.model = model;
  const Dataset data = case_dataset(spec, cfg);
  CaseReport r;
  r.id = id;
  r.seed = spec.seed;
  r.best.mlp = params.spec;
  evaluate_into(r, params, data, cfg, resolve_precision(g), g.out);
  const json j = {{"case", id}, {"seed", spec.seed}, {"metrics", metrics_to_json(r.metrics)}, {"hashes", r.hashes}};
  write_file_atomic(fs::path(g.out) / "eval.json", j.dump(2) + "\n");
  if (!g.quiet) print_metrics(r);
  return kExitOk;
}

int cmd_case(const Globals& g, int id, bool final_only, const std::string& manifest, const std::set<int>& fail_at) {
  const ExperimentConfig cfg = resolve_config(g);
  const CaseSpec spec = case_spec(id, cfg, resolve_seed(g));
  CaseOptions opts;
  opts.mode = final_only ? RunMode::final_only : RunMode::tune_then_final;
  opts.workers = g.workers;
  opts.precision = resolve_precision(g);
  opts.out_dir = g.out;
  opts.fail_iterations = fail_at;
  if (!manifest.empty()) opts.final_override = read_trial_manifest(manifest);
  opts.log = g.quiet ? nullptr : &std::cout;
  const CaseReport r = run_case(spec, cfg, opts);
  if (!r.ok) {
    std::cerr << "case " << id << " " << r.status << "\n";
    return kExitRun;
  }
  if (!g.quiet) print_metrics(r);
  return kExitOk;
}

int cmd_all(const Globals& g, bool final_only) {
  const ExperimentConfig cfg = resolve_config(g);
  const std::uint64_t seed = resolve_seed(g);
  json summary;
  summary["seed"] = seed;
  summary["mode"] = final_only ? "final-only" : "tune-then-final";
  bool ok = true;
  for (int id = 1; id <= 6; ++id) {
    const CaseSpec spec = case_spec(id, cfg, seed);
    CaseOptions opts;
    opts.mode = final_only ? RunMode::final_only : RunMode::tune_then_final;
    opts.workers = g.workers;
    opts.precision = resolve_precision(g);
    opts.out_dir = fs::path(g.out) / ("case" + std::to_string(id));
    opts.log = g.quiet ? nullptr : &std::cout;
    const CaseReport r = run_case(spec, cfg, opts);
    json entry = {{"ok", r.ok}, {"status", r.status}};
    if (r.ok) {
      entry["metrics"] = metrics_to_json(r.metrics);
      entry["report_hash"] = hash_hex(read_file(opts.out_dir / "report.json"));
      if (!g.quiet) print_metrics(r);
    } else {
      std::cerr << "case " << id << " " << r.status << "\n";
      ok = false;
    }
    summary["cases"][std::to_string(id)] = entry;
  }
  write_file_atomic(fs::path(g.out) / "summary.json", summary.dump(2) + "\n");
  return ok ? kExitOk : kExitRun;
}

int cmd_gradcheck(const Globals& g, int coords, double h) {
  const std::uint64_t seed = resolve_seed(g);
  const GradCheckResult r = gradient_check(make_gradcheck_problem(seed), coords, h, seed);
  if (!g.quiet) {
    for (std::size_t k = 0; k < r.coords.size(); ++k) {
      const Eigen::Index i = Eigen::Index(k);
      std::cout << "  coord " << r.coords[k] << "  reverse " << format_sig(r.analytic[i], 12) << "  fd "
                << format_sig(r.numeric[i], 12) << "  rel " << format_sig(r.rel_error[i], 3) << "\n";
    }
  }
  std::cout << "max relative error " << format_sig(r.max_rel_error, 6) << "\n";
  return r.max_rel_error <= 1e-5 ? kExitOk : kExitRun;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Soil organic carbon universal differential equation: data, training and evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "soc_ude 1.0.0");

  Globals g;
  app.add_option("--seed", g.seed, "Experiment seed (default: $SOC_UDE_SEED or 7)");
  app.add_option("--precision", g.precision, "Arithmetic precision")->check(CLI::IsMember({"f32", "f64"}));
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--config", g.config, "JSON config file; '-' prints the defaults");
  app.add_option("--workers", g.workers, "Worker threads for sweeps")->check(CLI::PositiveNumber);
  app.add_flag("-q,--quiet", g.quiet, "Only print results");
  app.fallthrough();

  int id = 4;
  auto add_id = [&id](CLI::App* sub) {
    sub->add_option("--id", id, "Case id")->required()->check(CLI::Range(1, 6));
  };

  CLI::App* generate = app.add_subcommand("generate", "Write the dataset of a case");
  add_id(generate);

  CLI::App* tune = app.add_subcommand("tune", "Hyperparameter sweep of a case");
  add_id(tune);

  std::string manifest;
  std::vector<int> fail_at;
  CLI::App* train_cmd = app.add_subcommand("train", "Final training from a hyperparameter manifest");
  add_id(train_cmd);
  train_cmd->add_option("--manifest", manifest, "best.json or report.json with the hyperparameters");
  train_cmd->add_option("--fail-at", fail_at, "Force a solver failure at these iterations");

  std::string checkpoint;
  CLI::App* eval = app.add_subcommand("eval", "Metrics and plots from a checkpoint");
  add_id(eval);
  eval->add_option("--checkpoint", checkpoint, "Directory holding params.bin and params.json")->required();

  bool final_only = false;
  CLI::App* case_cmd = app.add_subcommand("case", "Full run of one case");
  add_id(case_cmd);
  case_cmd->add_flag("--final-only", final_only, "Skip the sweep and use the configured hyperparameters");
  case_cmd->add_option("--manifest", manifest, "best.json or report.json with the hyperparameters");
  case_cmd->add_option("--fail-at", fail_at, "Force a solver failure at these iterations");

  CLI::App* all = app.add_subcommand("all", "Run cases 1-6");
  all->add_flag("--final-only", final_only, "Skip the sweeps");

  int coords = 20;
  double h = 1e-6;
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "Reverse-mode gradient against finite differences");
  gradcheck->add_option("--coords", coords, "Number of probed coordinates")->check(CLI::PositiveNumber);
  gradcheck->add_option("--step", h, "Finite-difference step")->check(CLI::PositiveNumber);

  // "--config -" short-circuits before subcommand validation.
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--config" && std::string(argv[i + 1]) == "-") {
      std::cout << config_to_json(ExperimentConfig{}).dump(2) << "\n";
      return kExitOk;
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  const std::set<int> fail_set(fail_at.begin(), fail_at.end());
  try {
    if (*generate) return cmd_generate(g, id);
    if (*tune) return cmd_tune(g, id);
    if (*train_cmd) return cmd_train(g, id, manifest, fail_set);
    if (*eval) return cmd_eval(g, id, checkpoint);
    if (*case_cmd) return cmd_case(g, id, final_only, manifest, fail_set);
    if (*all) return cmd_all(g, final_only);
    if (*gradcheck) return cmd_gradcheck(g, coords, h);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRun;
  }
  return kExitUsage;
}

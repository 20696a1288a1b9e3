#include "soc_ude/experiments.hpp"

#include <chrono>

#include "soc_ude/config.hpp"
#include "soc_ude/io.hpp"

namespace socude {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

CaseTable make_table(int id, double target_time, double noise, int h1, int h2, Activation act, double lr,
                     LossWeights w, int adam, int lbfgs) {
  CaseTable t;
  t.id = id;
  t.target_time = target_time;
  t.driver_noise = noise;
  t.target_noise = noise;
  t.mlp.h1 = h1;
  t.mlp.h2 = h2;
  t.mlp.activation = act;
  t.lr = lr;
  t.weights = w;
  t.adam_iters = adam;
  t.lbfgs_iters = lbfgs;
  t.search.loss_weight_options = {w};
  return t;
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  using A = Activation;
  cases = {make_table(1, 0.0, 0.00, 32, 16, A::tanh, 3e-3, {1.0, 1.0, 1e-4}, 200, 400),
           make_table(2, 0.0, 0.07, 32, 32, A::tanh, 3e-3, {1.5, 1.0, 1e-3}, 200, 400),
           make_table(3, 0.0, 0.35, 32, 16, A::tanh, 1e-3, {0.25, 5.0, 1e-3}, 200, 400),
           make_table(4, 50.0, 0.00, 32, 16, A::gelu, 3e-3, {1.0, 1.0, 1e-4}, 200, 400),
           make_table(5, 50.0, 0.07, 32, 16, A::tanh, 3e-3, {1.5, 1.0, 1e-3}, 200, 400),
           make_table(6, 50.0, 0.35, 64, 32, A::tanh, 3e-3, {2.0, 1.0, 1e-4}, 400, 800)};
  SearchSpace& s3 = cases[2].search;
  s3.learning_rates = {1e-3, 3e-3};
  s3.loss_weight_options.clear();
  for (double term : {0.25, 0.5, 1.0})
    for (double coll : {1.0, 2.5, 5.0}) s3.loss_weight_options.push_back({term, coll, 1e-3});
}

void ExperimentConfig::validate() const {
  sim.grid();
  sim.transport.validate();
  if (!(sim.t_end > 0.0)) throw std::invalid_argument("config: t_end must be > 0");
  if (!(train_dt > 0.0)) throw std::invalid_argument("config: train_dt must be > 0");
  if (!(tune_rtol > 0.0 && tune_atol > 0.0 && sim.eval_rtol > 0.0 && sim.eval_atol > 0.0))
    throw std::invalid_argument("config: tolerances must be > 0");
  if (!(noise_rho >= 0.0 && noise_rho < 1.0)) throw std::invalid_argument("config: rho must lie in [0, 1)");
  for (double s : model.scaling.scale)
    if (!(s != 0.0)) throw std::invalid_argument("config: feature scales must be non-zero");
  TrainConfig t = train;
  t.validate();
  loss.validate();
  for (const CaseTable& c : cases) {
    c.mlp.validate();
    c.search.validate();
    if (!(c.target_time == 0.0 || c.target_time == sim.t_end))
      throw std::invalid_argument("config: case target_time must be 0 or t_end");
    if (!(c.lr > 0.0)) throw std::invalid_argument("config: case lr must be > 0");
    if (c.adam_iters < 0 || c.lbfgs_iters < 0) throw std::invalid_argument("config: case budgets must be >= 0");
  }
  if (heatmap_times < 2) throw std::invalid_argument("config: heatmap_times must be >= 2");
  if (heatmap_scale < 1) throw std::invalid_argument("config: heatmap_scale must be >= 1");
}

CaseSpec case_spec(int id, const ExperimentConfig& cfg, std::uint64_t seed) {
  if (id < 1 || id > 6) throw std::invalid_argument("case id must be between 1 and 6");
  const CaseTable& t = cfg.cases[std::size_t(id - 1)];
  CaseSpec s;
  s.id = id;
  s.seed = seed;
  s.data.seed = seed;
  s.data.target_time = t.target_time;
  if (t.driver_noise > 0.0) s.data.driver_noise = NoiseSpec{cfg.driver_noise_kind, t.driver_noise, cfg.noise_rho};
  if (t.target_noise > 0.0) s.data.target_noise = NoiseSpec{cfg.target_noise_kind, t.target_noise, cfg.noise_rho};
  s.search = t.search;
  s.final_trial.id = -1;
  s.final_trial.mlp = t.mlp;
  s.final_trial.lr = t.lr;
  s.final_trial.weights = t.weights;
  s.final_train = cfg.train;
  s.final_train.adam_lr = t.lr;
  s.final_train.adam_iters = t.adam_iters;
  s.final_train.lbfgs_iters = t.lbfgs_iters;
  s.final_train.seed = seed;
  s.loss = cfg.loss;
  s.loss.lambda_term = t.weights.term;
  s.loss.lambda_coll = t.weights.coll;
  s.loss.lambda_wd = t.weights.wd;
  return s;
}

double mse(const Eigen::VectorXd& pred, const Eigen::VectorXd& truth) {
  if (pred.size() != truth.size()) throw std::invalid_argument("mse: length mismatch");
  if (pred.size() < 1) throw std::invalid_argument("mse: empty input");
  return (pred - truth).squaredNorm() / double(pred.size());
}

double rmse(const Eigen::VectorXd& pred, const Eigen::VectorXd& truth) { return std::sqrt(mse(pred, truth)); }

double r_squared(const Eigen::VectorXd& pred, const Eigen::VectorXd& truth) {
  if (pred.size() != truth.size()) throw std::invalid_argument("r_squared: length mismatch");
  if (truth.size() < 2) throw std::domain_error("r_squared: need at least two points");
  const double sst = (truth.array() - truth.mean()).square().sum();
  if (!(sst > 0.0)) throw std::domain_error("r_squared: truth is constant");
  return 1.0 - (pred - truth).squaredNorm() / sst;
}

Eigen::VectorXd residual_profile(const Eigen::VectorXd& pred, const Eigen::VectorXd& truth) {
  if (pred.size() != truth.size()) throw std::invalid_argument("residual_profile: length mismatch");
  return pred - truth;
}

std::string to_string(RunMode m) { return m == RunMode::tune_then_final ? "tune-then-final" : "final-only"; }

RunMode parse_run_mode(const std::string& text) {
  if (text == "tune-then-final") return RunMode::tune_then_final;
  if (text == "final-only") return RunMode::final_only;
  throw std::invalid_argument("unknown run mode '" + text + "'");
}

CaseMetrics compute_metrics(const Eigen::VectorXd& pred, const Eigen::VectorXd& target, const Eigen::VectorXd& clean) {
  CaseMetrics m;
  m.mse_noisy = mse(pred, target);
  m.rmse_noisy = std::sqrt(m.mse_noisy);
  m.r2_noisy = r_squared(pred, target);
  m.mse_clean = mse(pred, clean);
  m.rmse_clean = std::sqrt(m.mse_clean);
  m.r2_clean = r_squared(pred, clean);
  m.max_abs_residual = (pred - clean).cwiseAbs().maxCoeff();
  return m;
}

template <typename Scalar>
std::optional<TrajectoryPair> evaluate_trajectories(const UdeParams<Scalar>& params, const Dataset& data,
                                                    const ModelConfig& model, int n_times, double rtol, double atol) {
  TrajectoryPair out;
  out.times.resize(std::size_t(n_times));
  for (int k = 0; k < n_times; ++k)
    out.times[std::size_t(k)] = data.t_start + (data.t_end - data.t_start) * double(k) / double(n_times - 1);
  const IntegratorConfig ic = IntegratorConfig::adaptive(rtol, atol);

  RhsContext<double> clean_ctx;
  clean_ctx.grid = &data.grid;
  clean_ctx.transport = data.transport;
  // For t = 0 observations the model starts from the noisy profile; the clean run never does.
  const Eigen::VectorXd& clean0 =
      data.target_time <= data.t_start ? data.clean_target.values : data.initial_profile.values;
  const auto truth = safe_solve<double>(clean_ctx, clean0, {data.t_start, data.t_end}, out.times, ic);

  RhsContext<Scalar> ctx;
  ctx.grid = &data.grid;
  ctx.transport = data.transport;
  ctx.params = &params;
  ctx.drivers = &data.drivers;
  ctx.model = model;
  const auto pred = safe_solve<Scalar>(ctx, data.initial_profile.values.cast<Scalar>(), {data.t_start, data.t_end},
                                       out.times, ic);
  if (!truth.ok() || !pred.ok()) return std::nullopt;
  out.truth.resize(data.grid.nz, n_times);
  out.pred.resize(data.grid.nz, n_times);
  for (int k = 0; k < n_times; ++k) {
    out.truth.col(k) = truth.saved[std::size_t(k)];
    out.pred.col(k) = pred.saved[std::size_t(k)].template cast<double>();
  }
  return out;
}

Dataset case_dataset(const CaseSpec& spec, const ExperimentConfig& cfg) { return build_case_dataset(spec.data, cfg.sim); }

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

GradientOptions gradient_options(const ExperimentConfig& cfg) {
  GradientOptions g;
  g.model = cfg.model;
  g.dt = cfg.train_dt;
  return g;
}

template <typename Scalar>
FinalFit final_fit_as(const CaseSpec& spec, const ExperimentConfig& cfg, const Dataset& data, const TrialConfig& trial,
                      const std::set<int>& fail_iterations, std::ostream* log) {
  LossConfig loss = spec.loss;
  loss.lambda_term = trial.weights.term;
  loss.lambda_coll = trial.weights.coll;
  loss.lambda_wd = trial.weights.wd;
  TrainConfig tc = spec.final_train;
  tc.adam_lr = trial.lr;
  TrainHooks hooks;
  hooks.fail_iterations = fail_iterations;
  if (log) {
    hooks.on_record = [log](const HistoryRecord& r) {
      if (r.iter % 50 == 0 || r.failed)
        *log << "  iter " << r.iter << " " << r.phase << " loss " << format_sig(r.loss, 6)
             << (r.failed ? " (solver failure)" : "") << "\n";
    };
  }
  const UdeParams<Scalar> init = init_params<Scalar>(trial.mlp, init_stream(spec.seed, trial));
  const TrainResult<Scalar> tr = train<Scalar>(data, init, loss, tc, gradient_options(cfg), hooks);
  return {tr.params.template cast<double>(), tr.history, tr.best_loss, tr.best_iter};
}

template <typename Scalar>
void evaluate_as(CaseReport& report, const UdeParams<double>& params_d, const Dataset& data,
                 const ExperimentConfig& cfg, const fs::path& out_dir) {
  const UdeParams<Scalar> params = params_d.template cast<Scalar>();
  const auto traj = evaluate_trajectories<Scalar>(params, data, cfg.model, cfg.heatmap_times, cfg.sim.eval_rtol,
                                                  cfg.sim.eval_atol);
  if (!traj) throw std::runtime_error("evaluation solve failed");

  // Prediction at the observation time.
  Eigen::VectorXd pred;
  if (data.target_time <= data.t_start) {
    pred = traj->pred.col(0);
  } else {
    RhsContext<Scalar> ctx;
    ctx.grid = &data.grid;
    ctx.transport = data.transport;
    ctx.params = &params;
    ctx.drivers = &data.drivers;
    ctx.model = cfg.model;
    const auto o = safe_solve<Scalar>(ctx, data.initial_profile.values.cast<Scalar>(),
                                      {data.t_start, data.target_time}, {},
                                      IntegratorConfig::adaptive(cfg.sim.eval_rtol, cfg.sim.eval_atol));
    if (!o.ok()) throw std::runtime_error("evaluation solve failed: " + o.failure_reason);
    pred = o.terminal.template cast<double>();
  }

  report.z = data.grid.nodes;
  report.truth = data.clean_target.values;
  report.target = data.target_profile.values;
  report.pred = pred;
  report.residual = residual_profile(pred, report.truth);
  report.metrics = compute_metrics(pred, report.target, report.truth);

  if (out_dir.empty()) return;
  const std::string profile = profile_csv(report.z, report.truth, pred);
  write_file_atomic(out_dir / "profile.csv", profile);
  report.artifacts["profile"] = "profile.csv";
  report.hashes["profile.csv"] = hash_hex(profile);

  std::string resid = "z,residual\n";
  for (Eigen::Index i = 0; i < report.z.size(); ++i)
    resid += format_sig(report.z[i]) + ',' + format_sig(report.residual[i]) + '\n';
  write_file_atomic(out_dir / "residual.csv", resid);
  report.artifacts["residual"] = "residual.csv";
  report.hashes["residual.csv"] = hash_hex(resid);

  write_heatmap(out_dir / "heatmap.ppm", traj->truth, traj->pred, cfg.heatmap_scale);
  report.artifacts["heatmap"] = "heatmap.ppm";
  report.artifacts["heatmap_bounds"] = "heatmap.ppm.bounds.txt";
  report.hashes["heatmap.ppm"] = hash_hex(read_file(out_dir / "heatmap.ppm"));
  report.hashes["heatmap.ppm.bounds.txt"] = hash_hex(read_file(out_dir / "heatmap.ppm.bounds.txt"));
#ifdef SOC_UDE_HAVE_PNG
  report.artifacts["heatmap_png"] = "heatmap.png";
#endif

  write_checkpoint(out_dir, params_d, cfg.model);
  report.artifacts["params"] = "params.bin";
  report.artifacts["params_header"] = "params.json";
  report.hashes["params.bin"] = hash_hex(read_file(out_dir / "params.bin"));
  report.hashes["params.json"] = hash_hex(read_file(out_dir / "params.json"));
}

json report_json(const CaseReport& r, const CaseSpec& spec, const ExperimentConfig& cfg) {
  auto noise_json = [](const std::optional<NoiseSpec>& n) -> json {
    if (!n) return nullptr;
    return {{"kind", to_string(n->kind)}, {"level", n->level}, {"rho", n->rho}};
  };
  const json config = config_to_json(cfg);
  json j;
  j["tool"] = "soc_ude";
  j["version"] = "1.0.0";
  j["case"] = r.id;
  j["seed"] = r.seed;
  j["mode"] = to_string(r.mode);
  j["precision"] = to_string(r.precision);
  j["ok"] = r.ok;
  j["status"] = r.status;
  j["best"] = trial_to_json(r.best);
  j["final_budget"] = {{"adam_iters", spec.final_train.adam_iters},
                       {"lbfgs_iters", spec.final_train.lbfgs_iters},
                       {"lbfgs_memory", spec.final_train.lbfgs_memory},
                       {"early_stop_patience", spec.final_train.early_stop_patience},
                       {"early_stop_min_delta", spec.final_train.early_stop_min_delta}};
  j["final_train_loss"] = r.final_train_loss;
  j["best_iter"] = r.best_iter;
  j["iterations"] = r.history.records.size();
  j["trials"] = r.trials.size();
  j["metrics"] = r.ok ? metrics_to_json(r.metrics) : json(nullptr);
  j["data"] = {{"target_time", spec.data.target_time},
               {"driver_noise", noise_json(spec.data.driver_noise)},
               {"target_noise", noise_json(spec.data.target_noise)}};
  j["transport"] = {{"diffusion", cfg.sim.transport.diffusion}, {"advection", cfg.sim.transport.advection}};
  j["tolerances"] = {{"train_dt", cfg.train_dt},
                     {"tune_rtol", cfg.tune_rtol},
                     {"tune_atol", cfg.tune_atol},
                     {"eval_rtol", cfg.sim.eval_rtol},
                     {"eval_atol", cfg.sim.eval_atol}};
  j["config"] = config;
  j["config_hash"] = hash_hex(config.dump());
  j["artifacts"] = r.artifacts;
  j["hashes"] = r.hashes;
  return j;
}

}  // namespace

FinalFit final_fit(const CaseSpec& spec, const ExperimentConfig& cfg, const Dataset& data, const TrialConfig& trial,
                   Precision precision, const std::set<int>& fail_iterations, std::ostream* log) {
  return precision == Precision::f32 ? final_fit_as<float>(spec, cfg, data, trial, fail_iterations, log)
                                     : final_fit_as<double>(spec, cfg, data, trial, fail_iterations, log);
}

void evaluate_into(CaseReport& report, const UdeParams<double>& params, const Dataset& data,
                   const ExperimentConfig& cfg, Precision precision, const fs::path& out_dir) {
  if (precision == Precision::f32)
    evaluate_as<float>(report, params, data, cfg, out_dir);
  else
    evaluate_as<double>(report, params, data, cfg, out_dir);
}

CaseReport run_case(const CaseSpec& spec, const ExperimentConfig& cfg, const CaseOptions& opts) {
  CaseReport r;
  r.id = spec.id;
  r.seed = spec.seed;
  r.mode = opts.mode;
  r.precision = opts.precision;
  r.best = opts.final_override.value_or(spec.final_trial);
  std::ostream* log = opts.log;
  const fs::path& out = opts.out_dir;

  try {
    const Dataset data = case_dataset(spec, cfg);
    if (!out.empty()) {
      const std::string ds = dataset_csv(data);
      const std::string dr = drivers_csv(data);
      write_file_atomic(out / "dataset.csv", ds);
      write_file_atomic(out / "drivers.csv", dr);
      r.artifacts["dataset"] = "dataset.csv";
      r.artifacts["drivers"] = "drivers.csv";
      r.hashes["dataset.csv"] = hash_hex(ds);
      r.hashes["drivers.csv"] = hash_hex(dr);
    }

    if (opts.mode == RunMode::tune_then_final && !opts.final_override) {
      const auto t0 = Clock::now();
      if (log) *log << "case " << spec.id << ": sweeping " << spec.search.size() << " trials\n";
      SearchOptions so;
      so.seed = spec.seed;
      so.workers = opts.workers;
      so.loss = spec.loss;
      so.train = spec.final_train;
      so.gradient = gradient_options(cfg);
      so.eval_rtol = cfg.tune_rtol;
      so.eval_atol = cfg.tune_atol;
      so.precision = opts.precision;
      const SearchResult sr = run_search(spec.search, data, so);
      r.trials = sr.trials;
      r.best = sr.best.config;
      r.tune_ms = ms_since(t0);
      if (log) *log << "case " << spec.id << ": best " << r.best.key() << "\n";
      if (!out.empty()) {
        write_file_atomic(out / "sweep.csv", sweep_csv(r.trials, true));
        write_file_atomic(out / "best.json", trial_to_json(r.best).dump(2) + "\n");
        r.artifacts["sweep"] = "sweep.csv";
        r.artifacts["best"] = "best.json";
        r.hashes["sweep.csv"] = hash_hex(sweep_csv(r.trials, false));
        r.hashes["best.json"] = hash_hex(trial_to_json(r.best).dump(2) + "\n");
      }
    }

    const auto t1 = Clock::now();
    if (log) *log << "case " << spec.id << ": final training " << r.best.key() << "\n";
    const FinalFit fit = final_fit(spec, cfg, data, r.best, opts.precision, opts.fail_iterations, log);
    r.history = fit.history;
    r.final_train_loss = fit.best_loss;
    r.best_iter = fit.best_iter;
    r.final_ms = ms_since(t1);
    if (!out.empty()) {
      write_file_atomic(out / "history.csv", history_csv(r.history, true));
      r.artifacts["history"] = "history.csv";
      r.hashes["history.csv"] = hash_hex(history_csv(r.history, false));
    }

    evaluate_into(r, fit.params, data, cfg, opts.precision, out);
    r.ok = true;
    r.status = "ok";
  } catch (const std::exception& e) {
    r.ok = false;
    r.status = std::string("failed: ") + e.what();
  }

  if (!out.empty()) {
    try {
      write_file_atomic(out / "report.json", report_json(r, spec, cfg).dump(2) + "\n");
      const json timing = {{"tune_ms", r.tune_ms}, {"final_ms", r.final_ms}};
      write_file_atomic(out / "timing.json", timing.dump(2) + "\n");
    } catch (const std::exception& e) {
      r.ok = false;
      r.status = std::string("failed: ") + e.what();
    }
  }
  return r;
}

template std::optional<TrajectoryPair> evaluate_trajectories<double>(const UdeParams<double>&, const Dataset&,
                                                                     const ModelConfig&, int, double, double);
template std::optional<TrajectoryPair> evaluate_trajectories<float>(const UdeParams<float>&, const Dataset&,
                                                                    const ModelConfig&, int, double, double);

}  // namespace socude

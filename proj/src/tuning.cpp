#include "soc_ude/tuning.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <mutex>
#include <thread>

namespace socude {

std::size_t SearchSpace::size() const {
  return h1_options.size() * h2_options.size() * activations.size() * learning_rates.size() *
         loss_weight_options.size();
}

void SearchSpace::validate() const {
  if (h1_options.empty() || h2_options.empty() || activations.empty() || learning_rates.empty() ||
      loss_weight_options.empty())
    throw std::invalid_argument("SearchSpace: every option list must be non-empty");
  for (double lr : learning_rates)
    if (!(lr > 0.0)) throw std::invalid_argument("SearchSpace: learning rates must be > 0");
  if (adam_iters < 0 || lbfgs_iters < 0) throw std::invalid_argument("SearchSpace: budgets must be >= 0");
}

std::string TrialConfig::key() const {
  char buf[160];
  std::snprintf(buf, sizeof buf, "h1=%d,h2=%d,act=%s,lr=%.6g,term=%.6g,coll=%.6g,wd=%.6g", mlp.h1, mlp.h2,
                to_string(mlp.activation).c_str(), lr, weights.term, weights.coll, weights.wd);
  return buf;
}

std::vector<TrialConfig> enumerate_trials(const SearchSpace& space) {
  space.validate();
  std::vector<TrialConfig> out;
  out.reserve(space.size());
  for (int h1 : space.h1_options)
    for (int h2 : space.h2_options)
      for (Activation act : space.activations)
        for (double lr : space.learning_rates)
          for (const LossWeights& w : space.loss_weight_options) {
            TrialConfig t;
            t.id = int(out.size());
            t.mlp.h1 = h1;
            t.mlp.h2 = h2;
            t.mlp.activation = act;
            t.lr = lr;
            t.weights = w;
            out.push_back(t);
          }
  return out;
}

RandomStream init_stream(std::uint64_t seed, const TrialConfig& trial) {
  return RandomStream(seed, "init/" + trial.key());
}

std::vector<TrialResult> run_trials(const std::vector<TrialConfig>& trials,
                                    const std::function<TrialResult(const TrialConfig&)>& evaluate, int workers) {
  std::vector<TrialResult> results(trials.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < trials.size(); i = next++) {
      try {
        results[i] = evaluate(trials[i]);
      } catch (const std::exception& e) {
        results[i] = TrialResult{};
        results[i].config = trials[i];
        results[i].ok = false;
        results[i].status = std::string("error: ") + e.what();
      }
    }
  };
  const int n = std::clamp(workers, 1, int(std::max<std::size_t>(trials.size(), 1)));
  if (n == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < n; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  return results;
}

const TrialResult& select_best(const std::vector<TrialResult>& results) {
  const TrialResult* best = nullptr;
  auto better = [](const TrialResult& a, const TrialResult& b) {
    if (a.tuning_loss != b.tuning_loss) return a.tuning_loss < b.tuning_loss;
    const Eigen::Index pa = a.config.mlp.param_count(), pb = b.config.mlp.param_count();
    if (pa != pb) return pa < pb;
    if (a.config.lr != b.config.lr) return a.config.lr < b.config.lr;
    return a.config.key() < b.config.key();
  };
  for (const TrialResult& r : results)
    if (r.ok && (!best || better(r, *best))) best = &r;
  if (!best) throw std::runtime_error("select_best: every trial failed");
  return *best;
}

template <typename Scalar>
std::optional<double> terminal_loss(const UdeParams<Scalar>& params, const Dataset& data, const ModelConfig& model,
                                    double rtol, double atol) {
  RhsContext<Scalar> ctx;
  ctx.grid = &data.grid;
  ctx.transport = data.transport;
  ctx.params = &params;
  ctx.drivers = &data.drivers;
  ctx.model = model;
  const Vec<Scalar> u0 = data.initial_profile.values.cast<Scalar>();
  if (data.target_time <= data.t_start) return terminal_mse(u0.template cast<double>(), data.target_profile.values);
  const auto outcome = safe_solve<Scalar>(ctx, u0, {data.t_start, data.target_time}, {},
                                          IntegratorConfig::adaptive(rtol, atol));
  if (!outcome.ok()) return std::nullopt;
  return terminal_mse(outcome.terminal.template cast<double>(), data.target_profile.values);
}

namespace {

template <typename Scalar>
TrialResult run_trial_as(const TrialConfig& trial, const Dataset& data, const SearchSpace& space,
                         const SearchOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  TrialResult r;
  r.config = trial;
  const RandomStream stream = init_stream(opts.seed, trial);
  r.seed = stream.key();

  LossConfig loss = opts.loss;
  loss.lambda_term = trial.weights.term;
  loss.lambda_coll = trial.weights.coll;
  loss.lambda_wd = trial.weights.wd;
  TrainConfig tc = opts.train;
  tc.adam_lr = trial.lr;
  tc.adam_iters = space.adam_iters;
  tc.lbfgs_iters = space.lbfgs_iters;

  const UdeParams<Scalar> init = init_params<Scalar>(trial.mlp, stream);
  const TrainResult<Scalar> tr = train<Scalar>(data, init, loss, tc, opts.gradient);
  r.train_loss = tr.best_loss;
  r.iterations = int(tr.history.records.size());
  const auto score = terminal_loss<Scalar>(tr.params, data, opts.gradient.model, opts.eval_rtol, opts.eval_atol);
  if (score && std::isfinite(*score)) {
    r.ok = true;
    r.tuning_loss = *score;
    r.status = "ok";
  } else {
    r.ok = false;
    r.tuning_loss = kFailureLoss;
    r.status = "solver-failed";
  }
  r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace

TrialResult run_trial(const TrialConfig& trial, const Dataset& data, const SearchSpace& space,
                      const SearchOptions& opts) {
  return opts.precision == Precision::f32 ? run_trial_as<float>(trial, data, space, opts)
                                          : run_trial_as<double>(trial, data, space, opts);
}

SearchResult run_search(const SearchSpace& space, const Dataset& data, const SearchOptions& opts) {
  const std::vector<TrialConfig> trials = enumerate_trials(space);
  SearchResult out;
  out.trials = run_trials(
      trials, [&](const TrialConfig& t) { return run_trial(t, data, space, opts); }, opts.workers);
  out.best = select_best(out.trials);
  return out;
}

template std::optional<double> terminal_loss<double>(const UdeParams<double>&, const Dataset&, const ModelConfig&,
                                                     double, double);
template std::optional<double> terminal_loss<float>(const UdeParams<float>&, const Dataset&, const ModelConfig&,
                                                    double, double);

}  // namespace socude

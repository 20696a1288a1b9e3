#pragma once

// Exhaustive grid search over network shape, activation, learning rate and
// loss weights, with a reduced training budget per trial.

#include <functional>
#include <string>
#include <vector>

#include "soc_ude/training.hpp"

namespace socude {

struct LossWeights {
  double term = 1.0;
  double coll = 1.0;
  double wd = 1e-4;
};

inline bool operator==(const LossWeights& a, const LossWeights& b) {
  return a.term == b.term && a.coll == b.coll && a.wd == b.wd;
}

struct SearchSpace {
  std::vector<int> h1_options{32, 64};
  std::vector<int> h2_options{16, 32};
  std::vector<Activation> activations{Activation::tanh, Activation::gelu};
  std::vector<double> learning_rates{3e-3, 5e-3};
  std::vector<LossWeights> loss_weight_options{LossWeights{}};
  int adam_iters = 200;
  int lbfgs_iters = 100;

  std::size_t size() const;
  void validate() const;
};

struct TrialConfig {
  int id = 0;
  MlpSpec mlp;
  double lr = 3e-3;
  LossWeights weights;

  /// Stable text key of the hyperparameters, independent of the trial id.
  std::string key() const;
};

/// Lexicographic over (h1, h2, activation, lr, weights), in option order.
std::vector<TrialConfig> enumerate_trials(const SearchSpace& space);

/// Initialization stream for a hyperparameter setting; the same stream seeds
/// the tuning trial and the final retraining of that setting.
RandomStream init_stream(std::uint64_t seed, const TrialConfig& trial);

struct TrialResult {
  TrialConfig config;
  double tuning_loss = 0.0;  // terminal MSE with the adaptive integrator
  double train_loss = 0.0;   // best composite training loss
  int iterations = 0;
  double wall_ms = 0.0;
  std::uint64_t seed = 0;  // init stream key
  bool ok = false;
  std::string status;
};

struct SearchOptions {
  std::uint64_t seed = 7;
  int workers = 1;
  LossConfig loss;           // weights are overridden per trial
  TrainConfig train;         // lr and budgets are overridden per trial
  GradientOptions gradient;
  double eval_rtol = 1e-5;
  double eval_atol = 1e-5;
  Precision precision = Precision::f64;
};

struct SearchResult {
  TrialResult best;
  std::vector<TrialResult> trials;  // in trial id order
};

/// Runs evaluate on every trial with a pool of `workers` threads. Results are
/// stored by trial id, so the outcome does not depend on scheduling.
std::vector<TrialResult> run_trials(const std::vector<TrialConfig>& trials,
                                    const std::function<TrialResult(const TrialConfig&)>& evaluate, int workers);

/// Minimal tuning loss among ok trials; ties go to fewer parameters, then
/// lower learning rate, then the lexicographically smaller key. Throws
/// std::runtime_error if every trial failed.
const TrialResult& select_best(const std::vector<TrialResult>& results);

/// Trains one trial and scores it.
TrialResult run_trial(const TrialConfig& trial, const Dataset& data, const SearchSpace& space,
                      const SearchOptions& opts);

SearchResult run_search(const SearchSpace& space, const Dataset& data, const SearchOptions& opts);

/// Terminal MSE of the model integrated with the adaptive solver; nullopt on solver failure.
template <typename Scalar>
std::optional<double> terminal_loss(const UdeParams<Scalar>& params, const Dataset& data, const ModelConfig& model,
                                    double rtol, double atol);

}  // namespace socude

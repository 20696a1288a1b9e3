#pragma once

// Adam and L-BFGS optimizers with early stopping, and the two-phase training
// routine built on them.

#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "soc_ude/gradient.hpp"

namespace socude {

struct TrainConfig {
  double adam_lr = 3e-3;
  int adam_iters = 200;
  int lbfgs_iters = 400;
  int lbfgs_memory = 10;
  int early_stop_patience = 25;
  double early_stop_min_delta = 1e-9;
  /// Global gradient-norm clip for the Adam phase; <= 0 disables.
  double clip_norm = 10.0;
  /// Length of the first L-BFGS step (steepest descent, unit direction).
  double lbfgs_initial_step = 1e-2;
  std::uint64_t seed = 7;

  void validate() const;
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
struct AdamState {
  Vec<Scalar> m;
  Vec<Scalar> v;
  long step = 0;

  static AdamState zeros(Eigen::Index n) { return {Vec<Scalar>::Zero(n), Vec<Scalar>::Zero(n), 0}; }
};

/// One bias-corrected Adam update of params in place.
template <typename Scalar>
void adam_step(AdamState<Scalar>& state, Vec<Scalar>& params, const Vec<Scalar>& grad, double lr,
               const AdamHyper& hp = {}) {
  if (state.m.size() != params.size() || grad.size() != params.size())
    throw std::invalid_argument("adam_step: size mismatch");
  ++state.step;
  const Scalar b1 = Scalar(hp.beta1), b2 = Scalar(hp.beta2);
  state.m = b1 * state.m + (Scalar(1) - b1) * grad;
  state.v = b2 * state.v + (Scalar(1) - b2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(hp.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(hp.beta2, double(state.step));
  const Scalar step = Scalar(lr / c1);
  const Scalar sqrt_c2 = Scalar(std::sqrt(c2));
  params.array() -= step * state.m.array() / (state.v.array().sqrt() / sqrt_c2 + Scalar(hp.eps));
}

struct HistoryRecord {
  int iter = 0;
  std::string phase;  // "adam" or "lbfgs"
  double loss = 0.0;
  double grad_norm = 0.0;
  bool failed = false;
  bool clipped = false;
  double wall_ms = 0.0;
};

struct TrainHistory {
  std::vector<HistoryRecord> records;
};

/// Objective value and gradient at a point; failed marks a penalty evaluation.
template <typename Scalar>
struct Evaluation {
  double loss = 0.0;
  Vec<Scalar> grad;
  bool failed = false;
};

struct LbfgsOptions {
  int iters = 100;
  int memory = 10;
  double c1 = 1e-4;
  double shrink = 0.5;
  int max_backtracks = 25;
  double grad_tol = 1e-10;
  double initial_step = 1e-2;
};

template <typename Scalar>
struct LbfgsResult {
  Vec<Scalar> x;
  double loss = 0.0;
  int iterations = 0;
  std::string stop_reason;
};

/// Two-loop L-BFGS with backtracking Armijo search. objective(x) returns an
/// Evaluation. on_iter(iter, eval, accepted_x) is called once per accepted
/// step and returns false to stop. Accepted losses never increase.
template <typename Scalar>
LbfgsResult<Scalar> lbfgs_minimize(
    const std::function<Evaluation<Scalar>(const Vec<Scalar>&)>& objective, const Vec<Scalar>& x0,
    const LbfgsOptions& opt,
    const std::function<bool(int, const Evaluation<Scalar>&, const Vec<Scalar>&)>& on_iter = {});

/// Fault injection and progress reporting for train().
struct TrainHooks {
  /// Global iteration numbers whose evaluation is forced to fail.
  std::set<int> fail_iterations;
  std::function<void(const HistoryRecord&)> on_record;
};

template <typename Scalar>
struct TrainResult {
  UdeParams<Scalar> params;  // best-loss parameters
  TrainHistory history;
  double best_loss = kFailureLoss;
  int best_iter = -1;
  bool stopped_early = false;
};

/// init -> Adam -> L-BFGS. Each phase stops early when the best loss has not
/// improved by min_delta for `patience` iterations.
template <typename Scalar>
TrainResult<Scalar> train(const Dataset& data, const UdeParams<Scalar>& init, const LossConfig& loss_cfg,
                          const TrainConfig& cfg, const GradientOptions& grad_opts = {},
                          const TrainHooks& hooks = {});

/// L-BFGS phase alone on the composite loss.
template <typename Scalar>
UdeParams<Scalar> lbfgs_refine(const UdeParams<Scalar>& params, const Dataset& data, const LossConfig& loss_cfg,
                               int iters, int memory, const GradientOptions& grad_opts = {});

}  // namespace socude

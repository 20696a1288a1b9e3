#include "soc_ude/training.hpp"

#include <chrono>
#include <deque>

namespace socude {

void TrainConfig::validate() const {
  if (!(adam_lr > 0.0)) throw std::invalid_argument("TrainConfig: adam_lr must be > 0");
  if (adam_iters < 0 || lbfgs_iters < 0) throw std::invalid_argument("TrainConfig: iteration counts must be >= 0");
  if (lbfgs_memory < 1) throw std::invalid_argument("TrainConfig: lbfgs_memory must be >= 1");
  if (early_stop_patience < 1) throw std::invalid_argument("TrainConfig: patience must be >= 1");
  if (!(early_stop_min_delta >= 0.0)) throw std::invalid_argument("TrainConfig: min_delta must be >= 0");
  if (!(lbfgs_initial_step > 0.0)) throw std::invalid_argument("TrainConfig: lbfgs_initial_step must be > 0");
}

template <typename Scalar>
LbfgsResult<Scalar> lbfgs_minimize(
    const std::function<Evaluation<Scalar>(const Vec<Scalar>&)>& objective, const Vec<Scalar>& x0,
    const LbfgsOptions& opt,
    const std::function<bool(int, const Evaluation<Scalar>&, const Vec<Scalar>&)>& on_iter) {
  LbfgsResult<Scalar> res;
  res.x = x0;
  if (opt.iters <= 0) {
    res.stop_reason = "budget";
    return res;
  }
  Evaluation<Scalar> cur = objective(x0);
  res.loss = cur.loss;
  if (cur.failed) {
    res.stop_reason = "solver failure at start";
    return res;
  }

  std::deque<Vec<Scalar>> s_hist, y_hist;
  std::deque<double> rho_hist;
  Vec<Scalar> x = x0;

  for (int it = 0; it < opt.iters; ++it) {
    const double gnorm = double(cur.grad.norm());
    if (gnorm <= opt.grad_tol) {
      res.stop_reason = "gradient tolerance";
      break;
    }

    // Two-loop recursion.
    Vec<Scalar> q = -cur.grad;
    const std::size_t m = s_hist.size();
    std::vector<double> alpha(m);
    for (std::size_t i = m; i-- > 0;) {
      alpha[i] = rho_hist[i] * double(s_hist[i].dot(q));
      q -= Scalar(alpha[i]) * y_hist[i];
    }
    if (m > 0) {
      const double gamma = double(s_hist.back().dot(y_hist.back())) / double(y_hist.back().squaredNorm());
      q *= Scalar(gamma);
    } else {
      q *= Scalar(opt.initial_step / gnorm);
    }
    for (std::size_t i = 0; i < m; ++i) {
      const double beta = rho_hist[i] * double(y_hist[i].dot(q));
      q += Scalar(alpha[i] - beta) * s_hist[i];
    }
    Vec<Scalar> d = std::move(q);
    double slope = double(cur.grad.dot(d));
    if (!(slope < 0.0)) {
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      d = -cur.grad * Scalar(opt.initial_step / gnorm);
      slope = double(cur.grad.dot(d));
    }

    double step = 1.0;
    bool accepted = false;
    Evaluation<Scalar> trial;
    Vec<Scalar> x_new;
    for (int bt = 0; bt <= opt.max_backtracks; ++bt) {
      x_new = x + Scalar(step) * d;
      trial = objective(x_new);
      if (!trial.failed && trial.loss <= cur.loss + opt.c1 * step * slope) {
        accepted = true;
        break;
      }
      step *= opt.shrink;
    }
    if (!accepted) {
      res.stop_reason = "line search failure";
      break;
    }

    const Vec<Scalar> s = x_new - x;
    const Vec<Scalar> y = trial.grad - cur.grad;
    const double sy = double(s.dot(y));
    if (sy > 1e-12 * double(y.squaredNorm()) && sy > 0.0) {
      s_hist.push_back(s);
      y_hist.push_back(y);
      rho_hist.push_back(1.0 / sy);
      if (int(s_hist.size()) > opt.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    x = std::move(x_new);
    cur = std::move(trial);
    res.x = x;
    res.loss = cur.loss;
    res.iterations = it + 1;
    if (on_iter && !on_iter(it, cur, x)) {
      res.stop_reason = "stopped by caller";
      break;
    }
  }
  if (res.stop_reason.empty()) res.stop_reason = "budget";
  return res;
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

// Tracks the best loss and the patience counter of one phase.
struct EarlyStop {
  int patience;
  double min_delta;
  double phase_best = std::numeric_limits<double>::infinity();
  int stale = 0;

  // Returns true when the phase should stop.
  bool update(double loss, bool failed) {
    if (!failed && loss < phase_best - min_delta) {
      phase_best = loss;
      stale = 0;
      return false;
    }
    if (!failed && loss < phase_best) phase_best = loss;
    return ++stale >= patience;
  }
};

}  // namespace

template <typename Scalar>
TrainResult<Scalar> train(const Dataset& data, const UdeParams<Scalar>& init, const LossConfig& loss_cfg,
                          const TrainConfig& cfg, const GradientOptions& grad_opts, const TrainHooks& hooks) {
  cfg.validate();
  loss_cfg.validate();
  const MlpSpec spec = init.spec;
  TrainResult<Scalar> out;
  out.params = init;
  Vec<Scalar> theta = init.flatten();
  int iter = 0;

  auto evaluate = [&](const Vec<Scalar>& x, bool inject) {
    GradientOptions o = grad_opts;
    if (inject) o.fault_time = -std::numeric_limits<double>::infinity();
    const GradientReport<Scalar> r = loss_and_grad<Scalar>(UdeParams<Scalar>::unflatten(spec, x), data, loss_cfg, o);
    return Evaluation<Scalar>{r.loss, r.grad, r.solver_failed};
  };
  auto record = [&](HistoryRecord rec, const Vec<Scalar>& x) {
    if (!rec.failed && rec.loss < out.best_loss) {
      out.best_loss = rec.loss;
      out.best_iter = rec.iter;
      out.params = UdeParams<Scalar>::unflatten(spec, x);
    }
    out.history.records.push_back(rec);
    if (hooks.on_record) hooks.on_record(out.history.records.back());
  };

  // Adam phase.
  {
    AdamState<Scalar> state = AdamState<Scalar>::zeros(theta.size());
    EarlyStop stop{cfg.early_stop_patience, cfg.early_stop_min_delta};
    for (int k = 0; k < cfg.adam_iters; ++k, ++iter) {
      const auto t0 = Clock::now();
      Evaluation<Scalar> e = evaluate(theta, hooks.fail_iterations.count(iter) > 0);
      HistoryRecord rec;
      rec.iter = iter;
      rec.phase = "adam";
      rec.loss = e.loss;
      rec.failed = e.failed;
      rec.grad_norm = double(e.grad.norm());
      const Vec<Scalar> evaluated = theta;
      if (!e.failed) {
        if (cfg.clip_norm > 0.0 && rec.grad_norm > cfg.clip_norm) {
          e.grad *= Scalar(cfg.clip_norm / rec.grad_norm);
          rec.clipped = true;
        }
        adam_step<Scalar>(state, theta, e.grad, cfg.adam_lr);
        if (!theta.allFinite()) throw std::runtime_error("train: Adam produced non-finite parameters");
      }
      rec.wall_ms = ms_since(t0);
      record(rec, evaluated);
      if (stop.update(e.loss, e.failed)) {
        out.stopped_early = true;
        ++iter;
        break;
      }
    }
  }

  // L-BFGS phase, restarted from the best Adam iterate.
  if (cfg.lbfgs_iters > 0) {
    if (out.best_iter >= 0) theta = out.params.flatten();
    EarlyStop stop{cfg.early_stop_patience, cfg.early_stop_min_delta};
    LbfgsOptions opt;
    opt.iters = cfg.lbfgs_iters;
    opt.memory = cfg.lbfgs_memory;
    opt.initial_step = cfg.lbfgs_initial_step;

    // Forced failures land on the first evaluation belonging to that iteration.
    auto t_iter = Clock::now();
    int pending = iter;
    std::function<Evaluation<Scalar>(const Vec<Scalar>&)> objective = [&](const Vec<Scalar>& x) {
      const bool inject = hooks.fail_iterations.count(pending) > 0;
      if (inject) {
        HistoryRecord rec;
        rec.iter = pending;
        rec.phase = "lbfgs";
        rec.loss = kFailureLoss;
        rec.failed = true;
        rec.wall_ms = ms_since(t_iter);
        record(rec, x);
        ++pending;
        t_iter = Clock::now();
      }
      return evaluate(x, inject);
    };
    std::function<bool(int, const Evaluation<Scalar>&, const Vec<Scalar>&)> on_iter =
        [&](int, const Evaluation<Scalar>& e, const Vec<Scalar>& x) {
          HistoryRecord rec;
          rec.iter = pending++;
          rec.phase = "lbfgs";
          rec.loss = e.loss;
          rec.grad_norm = double(e.grad.norm());
          rec.wall_ms = ms_since(t_iter);
          record(rec, x);
          t_iter = Clock::now();
          if (stop.update(e.loss, false)) {
            out.stopped_early = true;
            return false;
          }
          return pending - iter < cfg.lbfgs_iters;
        };
    // Evaluation at the starting point also counts towards the best loss.
    Evaluation<Scalar> first = evaluate(theta, false);
    if (!first.failed && first.loss < out.best_loss) {
      out.best_loss = first.loss;
      out.params = UdeParams<Scalar>::unflatten(spec, theta);
    }
    if (!first.failed) lbfgs_minimize<Scalar>(objective, theta, opt, on_iter);
  }
  return out;
}

template <typename Scalar>
UdeParams<Scalar> lbfgs_refine(const UdeParams<Scalar>& params, const Dataset& data, const LossConfig& loss_cfg,
                               int iters, int memory, const GradientOptions& grad_opts) {
  if (iters < 0) throw std::invalid_argument("lbfgs_refine: iters must be >= 0");
  if (iters == 0) return params;
  LbfgsOptions opt;
  opt.iters = iters;
  opt.memory = memory;
  const MlpSpec spec = params.spec;
  std::function<Evaluation<Scalar>(const Vec<Scalar>&)> objective = [&](const Vec<Scalar>& x) {
    const GradientReport<Scalar> r =
        loss_and_grad<Scalar>(UdeParams<Scalar>::unflatten(spec, x), data, loss_cfg, grad_opts);
    return Evaluation<Scalar>{r.loss, r.grad, r.solver_failed};
  };
  return UdeParams<Scalar>::unflatten(spec, lbfgs_minimize<Scalar>(objective, params.flatten(), opt).x);
}

template LbfgsResult<double> lbfgs_minimize<double>(
    const std::function<Evaluation<double>(const Vec<double>&)>&, const Vec<double>&, const LbfgsOptions&,
    const std::function<bool(int, const Evaluation<double>&, const Vec<double>&)>&);
template LbfgsResult<float> lbfgs_minimize<float>(
    const std::function<Evaluation<float>(const Vec<float>&)>&, const Vec<float>&, const LbfgsOptions&,
    const std::function<bool(int, const Evaluation<float>&, const Vec<float>&)>&);
template TrainResult<double> train<double>(const Dataset&, const UdeParams<double>&, const LossConfig&,
                                           const TrainConfig&, const GradientOptions&, const TrainHooks&);
template TrainResult<float> train<float>(const Dataset&, const UdeParams<float>&, const LossConfig&,
                                         const TrainConfig&, const GradientOptions&, const TrainHooks&);
template UdeParams<double> lbfgs_refine<double>(const UdeParams<double>&, const Dataset&, const LossConfig&, int,
                                                int, const GradientOptions&);
template UdeParams<float> lbfgs_refine<float>(const UdeParams<float>&, const Dataset&, const LossConfig&, int,
                                              int, const GradientOptions&);

}  // namespace socude

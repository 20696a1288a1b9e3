#include "soc_ude/gradient.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace socude {

void LossConfig::validate() const {
  if (!(lambda_term >= 0.0 && lambda_coll >= 0.0 && lambda_wd >= 0.0))
    throw std::invalid_argument("LossConfig: weights must be >= 0");
  if (collocation_stride < 1) throw std::invalid_argument("LossConfig: collocation stride must be >= 1");
  if (!(collocation_delta > 0.0)) throw std::invalid_argument("LossConfig: collocation delta must be > 0");
  if (lambda_coll > 0.0 && collocation_times.empty())
    throw std::invalid_argument("LossConfig: collocation weight set but no collocation times");
}

std::string to_string(AdjointMode m) {
  return m == AdjointMode::store_stages ? "store-stages" : "recompute-stages";
}

double terminal_mse(const Eigen::VectorXd& pred, const Eigen::VectorXd& target) {
  if (pred.size() != target.size()) throw std::invalid_argument("terminal_mse: length mismatch");
  if (pred.size() == 0) return 0.0;
  return (pred - target).squaredNorm() / double(pred.size());
}

double terminal_mse(const SocProfile& pred, const SocProfile& target) {
  return terminal_mse(pred.values, target.values);
}

DerivativeStencil derivative_stencil(double t, double delta, double t_start, double t_end) {
  const double slack = 1e-12 * std::max(1.0, std::abs(t_end));
  DerivativeStencil s;
  s.size = 3;
  if (t + delta <= t_end + slack && t - delta >= t_start - slack) {
    s.size = 2;
    s.times = {t + delta, t - delta, 0.0};
    s.coeffs = {0.5 / delta, -0.5 / delta, 0.0};
  } else if (t + delta > t_end + slack) {
    s.times = {t, t - delta, t - 2.0 * delta};
    s.coeffs = {1.5 / delta, -2.0 / delta, 0.5 / delta};
  } else {
    s.times = {t, t + delta, t + 2.0 * delta};
    s.coeffs = {-1.5 / delta, 2.0 / delta, -0.5 / delta};
  }
  return s;
}

std::vector<int> collocation_nodes(int nz, int stride) {
  std::vector<int> nodes;
  for (int i = 0; i < nz; i += std::max(stride, 1)) nodes.push_back(i);
  return nodes;
}

namespace {

template <typename Scalar>
struct ForwardPass {
  RhsContext<Scalar> ctx;
  Trajectory<Scalar> traj;
  std::vector<std::array<Vec<Scalar>, 4>> stages;
  LossBreakdown parts;
  // Collocation intermediates, one entry per collocation time.
  std::vector<Vec<Scalar>> colloc_state;
  std::vector<Vec<Scalar>> colloc_resid;
  std::vector<int> nodes;
  Vec<Scalar> pred;
  double target_time = 0.0;
};

template <typename Scalar>
void fail(ForwardPass<Scalar>& fp, std::string why) {
  fp.parts = LossBreakdown{};
  fp.parts.total = kFailureLoss;
  fp.parts.solver_failed = true;
  fp.parts.failure_reason = std::move(why);
}

template <typename Scalar>
ForwardPass<Scalar> run_forward(const UdeParams<Scalar>& params, const Dataset& data, const LossConfig& cfg,
                                const GradientOptions& opts, bool keep_stages) {
  cfg.validate();
  ForwardPass<Scalar> fp;
  fp.ctx.grid = &data.grid;
  fp.ctx.transport = data.transport;
  fp.ctx.params = &params;
  fp.ctx.drivers = &data.drivers;
  fp.ctx.model = opts.model;
  fp.ctx.fault_time = opts.fault_time;
  fp.ctx.validate();
  fp.target_time = cfg.target_time.value_or(data.target_time);

  const Eigen::Index np = params.spec.param_count();
  if (params.production.size() != np || params.respiration.size() != np)
    throw std::invalid_argument("loss: parameter length does not match spec");
  if (!params.production.allFinite() || !params.respiration.allFinite()) {
    fail(fp, "non-finite parameters");
    return fp;
  }

  fp.traj.times = fixed_step_times(data.t_start, data.t_end, opts.dt);
  const std::size_t steps = fp.traj.times.size() - 1;
  fp.traj.states.resize(steps + 1);
  fp.traj.states[0] = data.initial_profile.values.cast<Scalar>();
  if (keep_stages) fp.stages.resize(steps);

  auto f = [&fp](const Vec<Scalar>& u, double t) { return rhs<Scalar>(u, t, fp.ctx); };
  try {
    for (std::size_t n = 0; n < steps; ++n) {
      const double t = fp.traj.times[n];
      const double h = fp.traj.times[n + 1] - t;
      fp.traj.states[n + 1] =
          rk4_step<Scalar>(f, fp.traj.states[n], t, h, keep_stages ? &fp.stages[n] : nullptr);
      if (!fp.traj.states[n + 1].allFinite()) {
        fail(fp, "non-finite state at t=" + std::to_string(fp.traj.times[n + 1]));
        return fp;
      }
    }
  } catch (const SolverFailure& e) {
    fail(fp, e.what());
    return fp;
  }

  LossBreakdown& parts = fp.parts;
  fp.pred = fp.traj.at(fp.target_time);
  if (cfg.lambda_term > 0.0)
    parts.terminal = terminal_mse(fp.pred.template cast<double>(), data.target_profile.values);

  if (cfg.lambda_coll > 0.0) {
    fp.nodes = collocation_nodes(data.grid.nz, cfg.collocation_stride);
    double acc = 0.0;
    for (double tk : cfg.collocation_times) {
      const DerivativeStencil st =
          derivative_stencil(tk, cfg.collocation_delta, data.t_start, data.t_end);
      Vec<Scalar> du = Vec<Scalar>::Zero(data.grid.nz);
      for (int j = 0; j < st.size; ++j) du += Scalar(st.coeffs[j]) * fp.traj.at(st.times[j]);
      Vec<Scalar> uk = fp.traj.at(tk);
      Vec<Scalar> r;
      try {
        r = du - f(uk, tk);
      } catch (const SolverFailure& e) {
        fail(fp, e.what());
        return fp;
      }
      for (int i : fp.nodes) acc += double(r[i]) * double(r[i]);
      fp.colloc_state.push_back(std::move(uk));
      fp.colloc_resid.push_back(std::move(r));
    }
    parts.collocation = acc / double(cfg.collocation_times.size() * fp.nodes.size());
  }

  parts.weight_decay = params.production.template cast<double>().squaredNorm() +
                       params.respiration.template cast<double>().squaredNorm();
  parts.total = cfg.lambda_term * parts.terminal + cfg.lambda_coll * parts.collocation +
                cfg.lambda_wd * parts.weight_decay;
  if (!std::isfinite(parts.total)) fail(fp, "non-finite loss");
  return fp;
}

// Adds coeff * v to the cotangent of the interpolated state at time t.
template <typename Scalar>
void inject(std::vector<Vec<Scalar>>& bar, const std::vector<double>& times, double t, const Vec<Scalar>& v) {
  const auto [j, w] = bracket(times, t);
  if (w == 0.0) {
    bar[j] += v;
  } else if (w == 1.0) {
    bar[j + 1] += v;
  } else {
    bar[j] += (Scalar(1) - Scalar(w)) * v;
    bar[j + 1] += Scalar(w) * v;
  }
}

}  // namespace

template <typename Scalar>
LossBreakdown evaluate_loss(const UdeParams<Scalar>& params, const Dataset& data, const LossConfig& cfg,
                            const GradientOptions& opts) {
  return run_forward(params, data, cfg, opts, false).parts;
}

template <typename Scalar>
double collocation_residual(const UdeParams<Scalar>& params, const Dataset& data, const LossConfig& cfg,
                            const GradientOptions& opts) {
  LossConfig c = cfg;
  c.lambda_coll = 1.0;
  if (c.collocation_times.empty()) return 0.0;
  return run_forward(params, data, c, opts, false).parts.collocation;
}

template <typename Scalar>
GradientReport<Scalar> loss_and_grad(const UdeParams<Scalar>& params, const Dataset& data,
                                     const LossConfig& cfg, const GradientOptions& opts) {
  const bool store = opts.adjoint == AdjointMode::store_stages;
  ForwardPass<Scalar> fp = run_forward(params, data, cfg, opts, store);

  GradientReport<Scalar> report;
  report.parts = fp.parts;
  report.loss = fp.parts.total;
  report.solver_failed = fp.parts.solver_failed;
  report.grad = Vec<Scalar>::Zero(params.size());
  if (report.solver_failed) return report;

  const Eigen::Index nz = data.grid.nz;
  const std::vector<double>& times = fp.traj.times;
  const std::size_t steps = times.size() - 1;
  std::vector<Vec<Scalar>> bar(steps + 1, Vec<Scalar>::Zero(nz));
  Vec<Scalar>& theta_bar = report.grad;

  if (cfg.lambda_term > 0.0) {
    const Vec<Scalar> diff = fp.pred - data.target_profile.values.cast<Scalar>();
    inject<Scalar>(bar, times, fp.target_time, Scalar(2.0 * cfg.lambda_term / double(nz)) * diff);
  }

  if (cfg.lambda_coll > 0.0) {
    const double scale = 2.0 * cfg.lambda_coll / double(cfg.collocation_times.size() * fp.nodes.size());
    for (std::size_t k = 0; k < cfg.collocation_times.size(); ++k) {
      const double tk = cfg.collocation_times[k];
      Vec<Scalar> w = Vec<Scalar>::Zero(nz);
      for (int i : fp.nodes) w[i] = Scalar(scale) * fp.colloc_resid[k][i];
      const DerivativeStencil st =
          derivative_stencil(tk, cfg.collocation_delta, data.t_start, data.t_end);
      for (int j = 0; j < st.size; ++j) inject<Scalar>(bar, times, st.times[j], Vec<Scalar>(Scalar(st.coeffs[j]) * w));
      Vec<Scalar> uk_bar = Vec<Scalar>::Zero(nz);
      rhs_vjp<Scalar>(fp.colloc_state[k], tk, fp.ctx, Vec<Scalar>(-w), uk_bar, &theta_bar);
      inject<Scalar>(bar, times, tk, uk_bar);
    }
  }

  if (cfg.lambda_wd > 0.0) theta_bar += Scalar(2.0 * cfg.lambda_wd) * params.flatten();

  auto f = [&fp](const Vec<Scalar>& u, double t) { return rhs<Scalar>(u, t, fp.ctx); };
  std::array<Vec<Scalar>, 4> recomputed;
  Vec<Scalar> lam = bar[steps];
  Vec<Scalar> y_bar(nz);
  for (std::size_t n = steps; n-- > 0;) {
    const double t = times[n];
    const double h = times[n + 1] - t;
    if (!store) rk4_step<Scalar>(f, fp.traj.states[n], t, h, &recomputed);
    const std::array<Vec<Scalar>, 4>& y = store ? fp.stages[n] : recomputed;
    const std::array<double, 4> tau{t, t + 0.5 * h, t + 0.5 * h, t + h};
    auto stage_vjp = [&](std::size_t s, const Vec<Scalar>& w) {
      y_bar.setZero();
      rhs_vjp<Scalar>(y[s], tau[s], fp.ctx, w, y_bar, &theta_bar);
    };
    const Scalar hs = Scalar(h);
    Vec<Scalar> k4_bar = (hs / Scalar(6)) * lam;
    Vec<Scalar> k3_bar = (hs / Scalar(3)) * lam;
    Vec<Scalar> k2_bar = (hs / Scalar(3)) * lam;
    Vec<Scalar> k1_bar = (hs / Scalar(6)) * lam;
    Vec<Scalar> u_bar = lam;

    stage_vjp(3, k4_bar);
    u_bar += y_bar;
    k3_bar += hs * y_bar;

    stage_vjp(2, k3_bar);
    u_bar += y_bar;
    k2_bar += (Scalar(0.5) * hs) * y_bar;

    stage_vjp(1, k2_bar);
    u_bar += y_bar;
    k1_bar += (Scalar(0.5) * hs) * y_bar;

    stage_vjp(0, k1_bar);
    u_bar += y_bar;

    lam = u_bar + bar[n];
  }

  if (!theta_bar.allFinite()) {
    report.parts = LossBreakdown{};
    report.parts.total = kFailureLoss;
    report.parts.solver_failed = true;
    report.parts.failure_reason = "non-finite gradient";
    report.loss = kFailureLoss;
    report.solver_failed = true;
    theta_bar.setZero();
  }
  return report;
}

Eigen::VectorXd finite_diff_grad(const UdeParams<double>& params, const Dataset& data, const LossConfig& cfg,
                                 const GradientOptions& opts, const std::vector<Eigen::Index>& coords,
                                 double h) {
  auto loss = [&](const Eigen::VectorXd& theta) {
    return evaluate_loss<double>(UdeParams<double>::unflatten(params.spec, theta), data, cfg, opts).total;
  };
  return finite_diff_grad(loss, params.flatten(), coords, h);
}

GradCheckProblem make_gradcheck_problem(std::uint64_t seed) {
  const RandomStream root(seed, "gradcheck");
  GradCheckProblem p;
  Dataset& d = p.data;
  d.grid = make_grid(5, 0.0, 1.0);
  d.t_start = 0.0;
  d.t_end = 1.0;
  d.target_time = 1.0;
  d.drivers = sample_drivers(d.grid, {0.0, 1.0});
  d.initial_profile = initial_soc(d.grid);
  d.clean_target = d.initial_profile;
  d.clean_target.time = 1.0;
  const Eigen::VectorXd jitter = gaussian_draws(root.child("target"), d.grid.nz);
  d.target_profile.values = d.initial_profile.values.array() * (1.0 + 0.3 * jitter.array());
  d.target_profile.time = 1.0;

  MlpSpec spec;
  spec.h1 = 4;
  spec.h2 = 4;
  p.params.spec = spec;
  const Eigen::Index n = spec.param_count();
  p.params.production = 0.5 * gaussian_draws(root.child("production"), n);
  p.params.respiration = 0.5 * gaussian_draws(root.child("respiration"), n);

  p.loss.lambda_term = 1.0;
  p.loss.lambda_coll = 0.5;
  p.loss.lambda_wd = 1e-3;
  p.loss.collocation_times = {0.5, 1.0};
  p.loss.collocation_stride = 1;
  p.options.dt = 0.1;
  // Larger rates make the source visible against the target mismatch.
  p.options.model.rate_scale = 1.0;
  return p;
}

GradCheckResult gradient_check(const GradCheckProblem& problem, int n_coords, double h, std::uint64_t seed) {
  const GradientReport<double> report =
      loss_and_grad<double>(problem.params, problem.data, problem.loss, problem.options);
  if (report.solver_failed) throw std::runtime_error("gradient_check: solver failed on the check problem");

  const Eigen::Index total = problem.params.size();
  std::vector<Eigen::Index> all(static_cast<std::size_t>(total));
  std::iota(all.begin(), all.end(), Eigen::Index{0});
  std::mt19937_64 rng(RandomStream(seed, "gradcheck/coords").key());
  std::shuffle(all.begin(), all.end(), rng);

  GradCheckResult out;
  out.coords.assign(all.begin(), all.begin() + std::min<Eigen::Index>(n_coords, total));
  out.numeric = finite_diff_grad(problem.params, problem.data, problem.loss, problem.options, out.coords, h);
  out.analytic.resize(out.numeric.size());
  out.rel_error.resize(out.numeric.size());
  for (Eigen::Index k = 0; k < out.numeric.size(); ++k) {
    const double g = report.grad[out.coords[std::size_t(k)]];
    const double fd = out.numeric[k];
    out.analytic[k] = g;
    out.rel_error[k] = std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), 1e-8});
  }
  out.max_rel_error = out.rel_error.size() ? out.rel_error.maxCoeff() : 0.0;
  return out;
}

template LossBreakdown evaluate_loss<double>(const UdeParams<double>&, const Dataset&, const LossConfig&,
                                             const GradientOptions&);
template LossBreakdown evaluate_loss<float>(const UdeParams<float>&, const Dataset&, const LossConfig&,
                                            const GradientOptions&);
template double collocation_residual<double>(const UdeParams<double>&, const Dataset&, const LossConfig&,
                                             const GradientOptions&);
template double collocation_residual<float>(const UdeParams<float>&, const Dataset&, const LossConfig&,
                                            const GradientOptions&);
template GradientReport<double> loss_and_grad<double>(const UdeParams<double>&, const Dataset&,
                                                      const LossConfig&, const GradientOptions&);
template GradientReport<float> loss_and_grad<float>(const UdeParams<float>&, const Dataset&, const LossConfig&,
                                                    const GradientOptions&);

}  // namespace socude

#pragma once

// Composite training loss and its exact gradient through the fixed-step RK4
// trajectory (discretize-then-optimize reverse sweep).

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "soc_ude/dynamics.hpp"
#include "soc_ude/integrator.hpp"
#include "soc_ude/mlp.hpp"
#include "soc_ude/synthetic.hpp"

namespace socude {

/// Loss returned for any parameter vector whose trajectory cannot be integrated.
inline constexpr double kFailureLoss = 1e6;

struct LossConfig {
  double lambda_term = 1.0;
  double lambda_coll = 1.0;
  double lambda_wd = 1e-4;
  std::vector<double> collocation_times{10.0, 20.0, 30.0, 40.0, 50.0};
  int collocation_stride = 3;
  double collocation_delta = 0.25;
  /// Defaults to the dataset's target time.
  std::optional<double> target_time;

  void validate() const;
};

enum class AdjointMode { store_stages, recompute_stages };

std::string to_string(AdjointMode m);

struct GradientOptions {
  ModelConfig model;
  double dt = 0.1;
  AdjointMode adjoint = AdjointMode::store_stages;
  /// Fault injection: the rhs returns NaN from this time on.
  std::optional<double> fault_time;
};

struct LossBreakdown {
  double terminal = 0.0;     // unweighted terminal MSE
  double collocation = 0.0;  // unweighted mean squared residual
  double weight_decay = 0.0; // ||theta||^2
  double total = 0.0;
  bool solver_failed = false;
  std::string failure_reason;
};

template <typename Scalar>
struct GradientReport {
  /// Same layout as UdeParams::flatten().
  Vec<Scalar> grad;
  double loss = 0.0;
  bool solver_failed = false;
  LossBreakdown parts;
};

/// Mean squared difference. Throws std::invalid_argument on length mismatch.
double terminal_mse(const Eigen::VectorXd& pred, const Eigen::VectorXd& target);
double terminal_mse(const SocProfile& pred, const SocProfile& target);

/// States on an ascending time grid, read by linear interpolation.
template <typename Scalar>
struct Trajectory {
  std::vector<double> times;
  std::vector<Vec<Scalar>> states;

  Vec<Scalar> at(double t) const {
    const auto [j, w] = bracket(times, t);
    if (times.size() < 2 || w == 0.0) return states[j];
    if (w == 1.0) return states[j + 1];
    return (Scalar(1) - Scalar(w)) * states[j] + Scalar(w) * states[j + 1];
  }
};

/// Finite-difference weights for du/dt at t: central when t +/- delta lies
/// inside [t_start, t_end], otherwise a one-sided second-order stencil.
struct DerivativeStencil {
  std::array<double, 3> times{};
  std::array<double, 3> coeffs{};
  int size = 0;
};

DerivativeStencil derivative_stencil(double t, double delta, double t_start, double t_end);

/// Depth nodes sampled by the collocation term: 0, stride, 2 stride, ...
std::vector<int> collocation_nodes(int nz, int stride);

/// Mean over sampled (node, time) of (du/dt - f(u, t))^2 where du/dt is the
/// finite difference of the trajectory.
template <typename Scalar, typename F>
double collocation_residual(const Trajectory<Scalar>& traj, F&& f, const std::vector<double>& times,
                            int stride, double delta) {
  if (times.empty()) return 0.0;
  const Eigen::Index n = traj.states.front().size();
  const std::vector<int> nodes = collocation_nodes(int(n), stride);
  double acc = 0.0;
  for (double tk : times) {
    const DerivativeStencil st = derivative_stencil(tk, delta, traj.times.front(), traj.times.back());
    Vec<Scalar> du = Vec<Scalar>::Zero(n);
    for (int j = 0; j < st.size; ++j) du += Scalar(st.coeffs[j]) * traj.at(st.times[j]);
    const Vec<Scalar> fk = f(traj.at(tk), tk);
    for (int i : nodes) {
      const double r = double(du[i]) - double(fk[i]);
      acc += r * r;
    }
  }
  return acc / double(times.size() * nodes.size());
}

/// Forward-only evaluation of the composite loss.
template <typename Scalar>
LossBreakdown evaluate_loss(const UdeParams<Scalar>& params, const Dataset& data, const LossConfig& cfg,
                            const GradientOptions& opts = {});

template <typename Scalar>
double total_loss(const UdeParams<Scalar>& params, const Dataset& data, const LossConfig& cfg,
                  const GradientOptions& opts = {}) {
  return evaluate_loss(params, data, cfg, opts).total;
}

/// Unweighted collocation residual of the model trajectory.
template <typename Scalar>
double collocation_residual(const UdeParams<Scalar>& params, const Dataset& data, const LossConfig& cfg,
                            const GradientOptions& opts = {});

/// Loss and d loss / d theta. Solver failure gives loss kFailureLoss and a zero gradient.
template <typename Scalar>
GradientReport<Scalar> loss_and_grad(const UdeParams<Scalar>& params, const Dataset& data,
                                     const LossConfig& cfg, const GradientOptions& opts = {});

/// Central differences (L(theta + h e_i) - L(theta - h e_i)) / 2h at the given coordinates.
template <typename Fn>
Eigen::VectorXd finite_diff_grad(Fn&& loss, const Eigen::VectorXd& theta, const std::vector<Eigen::Index>& coords,
                                 double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_grad: h must be > 0");
  Eigen::VectorXd out(Eigen::Index(coords.size()));
  Eigen::VectorXd probe = theta;
  for (std::size_t k = 0; k < coords.size(); ++k) {
    const Eigen::Index i = coords[k];
    probe[i] = theta[i] + h;
    const double up = loss(probe);
    probe[i] = theta[i] - h;
    const double down = loss(probe);
    probe[i] = theta[i];
    out[Eigen::Index(k)] = (up - down) / (2.0 * h);
  }
  return out;
}

Eigen::VectorXd finite_diff_grad(const UdeParams<double>& params, const Dataset& data, const LossConfig& cfg,
                                 const GradientOptions& opts, const std::vector<Eigen::Index>& coords,
                                 double h);

/// Small problem for gradient verification: nz = 5, ten RK4 steps over one
/// year, both networks 4 x 4, random parameters and target.
struct GradCheckProblem {
  Dataset data;
  UdeParams<double> params;
  LossConfig loss;
  GradientOptions options;
};

GradCheckProblem make_gradcheck_problem(std::uint64_t seed);

struct GradCheckResult {
  std::vector<Eigen::Index> coords;
  Eigen::VectorXd analytic;
  Eigen::VectorXd numeric;
  Eigen::VectorXd rel_error;
  double max_rel_error = 0.0;
};

/// |g - fd| / max(|g|, |fd|, 1e-8) on n_coords random coordinates.
GradCheckResult gradient_check(const GradCheckProblem& problem, int n_coords, double h, std::uint64_t seed);

}  // namespace socude

#pragma once

// Method-of-lines right-hand side: central-difference transport with
// reflected ghost nodes (zero gradient at both ends) plus the neural source.

#include <limits>
#include <optional>
#include <stdexcept>

#include "soc_ude/core.hpp"
#include "soc_ude/mlp.hpp"
#include "soc_ude/synthetic.hpp"

namespace socude {

/// Raised by the right-hand side when the state is no longer finite.
class SolverFailure : public std::runtime_error {
 public:
  SolverFailure(const std::string& what, double time) : std::runtime_error(what), time_(time) {}
  double time() const { return time_; }

 private:
  double time_;
};

namespace detail {
inline void require_profile(Eigen::Index n) {
  if (n < 3) throw std::invalid_argument("finite differences need at least 3 nodes");
}
}  // namespace detail

/// Interior (u[i+1] - 2u[i] + u[i-1]) / dz^2; ends use u[-1] = u[1], u[n] = u[n-2].
template <typename Scalar>
Vec<Scalar> second_derivative(const Vec<Scalar>& u, Scalar dz) {
  const Eigen::Index n = u.size();
  detail::require_profile(n);
  const Scalar inv = Scalar(1) / (dz * dz);
  Vec<Scalar> out(n);
  out[0] = Scalar(2) * (u[1] - u[0]) * inv;
  for (Eigen::Index i = 1; i + 1 < n; ++i) out[i] = (u[i + 1] - Scalar(2) * u[i] + u[i - 1]) * inv;
  out[n - 1] = Scalar(2) * (u[n - 2] - u[n - 1]) * inv;
  return out;
}

/// Interior (u[i+1] - u[i-1]) / (2 dz); zero at both ends.
template <typename Scalar>
Vec<Scalar> first_derivative(const Vec<Scalar>& u, Scalar dz) {
  const Eigen::Index n = u.size();
  detail::require_profile(n);
  const Scalar inv = Scalar(1) / (Scalar(2) * dz);
  Vec<Scalar> out(n);
  out[0] = Scalar(0);
  for (Eigen::Index i = 1; i + 1 < n; ++i) out[i] = (u[i + 1] - u[i - 1]) * inv;
  out[n - 1] = Scalar(0);
  return out;
}

/// out = D u_zz - v u_z.
template <typename Scalar>
void apply_transport(const Vec<Scalar>& u, Scalar dz, Scalar diffusion, Scalar advection,
                     Vec<Scalar>& out) {
  const Eigen::Index n = u.size();
  detail::require_profile(n);
  const Scalar kd = diffusion / (dz * dz);
  const Scalar ka = advection / (Scalar(2) * dz);
  out.resize(n);
  out[0] = kd * Scalar(2) * (u[1] - u[0]);
  for (Eigen::Index i = 1; i + 1 < n; ++i)
    out[i] = kd * (u[i + 1] - Scalar(2) * u[i] + u[i - 1]) - ka * (u[i + 1] - u[i - 1]);
  out[n - 1] = kd * Scalar(2) * (u[n - 2] - u[n - 1]);
}

/// out += A^T w where A is the operator of apply_transport.
template <typename Scalar>
void add_transport_transpose(const Vec<Scalar>& w, Scalar dz, Scalar diffusion, Scalar advection,
                             Vec<Scalar>& out) {
  const Eigen::Index n = w.size();
  detail::require_profile(n);
  const Scalar kd = diffusion / (dz * dz);
  const Scalar ka = advection / (Scalar(2) * dz);
  out[0] -= Scalar(2) * kd * w[0];
  out[1] += Scalar(2) * kd * w[0];
  for (Eigen::Index i = 1; i + 1 < n; ++i) {
    out[i - 1] += (kd + ka) * w[i];
    out[i] -= Scalar(2) * kd * w[i];
    out[i + 1] += (kd - ka) * w[i];
  }
  out[n - 2] += Scalar(2) * kd * w[n - 1];
  out[n - 1] -= Scalar(2) * kd * w[n - 1];
}

template <typename Scalar>
struct RhsContext {
  const DepthGrid* grid = nullptr;
  TransportParams transport;
  /// Null means the source term is identically zero.
  const UdeParams<Scalar>* params = nullptr;
  const DriverField* drivers = nullptr;
  ModelConfig model;
  /// Fault injection for tests: the rhs returns NaN for t >= fault_time.
  std::optional<double> fault_time;

  void validate() const {
    if (!grid) throw std::invalid_argument("RhsContext: missing grid");
    transport.validate();
    if (params) {
      if (!drivers) throw std::invalid_argument("RhsContext: neural source needs a driver field");
      if (drivers->grid().nz != grid->nz || drivers->grid().dz != grid->dz)
        throw std::invalid_argument("RhsContext: driver grid does not match the depth grid");
    }
  }
};

/// Scaled network inputs for every node (6 x nz).
template <typename Scalar>
Mat<Scalar> node_features(const Vec<Scalar>& u, double t, const RhsContext<Scalar>& ctx) {
  const Eigen::Index n = u.size();
  const FeatureScaling& s = ctx.model.scaling;
  const Eigen::Matrix<double, 3, Eigen::Dynamic> d = ctx.drivers->sample_nodes(t);
  Mat<Scalar> x(6, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double z = ctx.grid->nodes[i];
    x(0, i) = Scalar((d(0, i) - s.shift[0]) / s.scale[0]);
    x(1, i) = (u[i] - Scalar(s.shift[1])) / Scalar(s.scale[1]);
    x(2, i) = Scalar((d(1, i) - s.shift[2]) / s.scale[2]);
    x(3, i) = Scalar((d(2, i) - s.shift[3]) / s.scale[3]);
    x(4, i) = Scalar((z - s.shift[4]) / s.scale[4]);
    x(5, i) = Scalar((t - s.shift[5]) / s.scale[5]);
  }
  return x;
}

/// Network intermediates of one rhs evaluation.
template <typename Scalar>
struct RhsTape {
  Mat<Scalar> x;
  MlpTape<Scalar> production, respiration;
};

/// du/dt = D u_zz - v u_z + rate_scale (NN_P - NN_R). Out-of-place; throws
/// SolverFailure when u is not finite.
template <typename Scalar>
Vec<Scalar> rhs(const Vec<Scalar>& u, double t, const RhsContext<Scalar>& ctx) {
  if (!u.allFinite()) throw SolverFailure("non-finite state", t);
  const Eigen::Index n = u.size();
  if (ctx.fault_time && t >= *ctx.fault_time)
    return Vec<Scalar>::Constant(n, std::numeric_limits<Scalar>::quiet_NaN());

  Vec<Scalar> out;
  apply_transport<Scalar>(u, Scalar(ctx.grid->dz), Scalar(ctx.transport.diffusion),
                          Scalar(ctx.transport.advection), out);
  if (ctx.params) {
    const Mat<Scalar> x = node_features(u, t, ctx);
    const MlpSpec& spec = ctx.params->spec;
    const RowVec<Scalar> p = forward_batch<Scalar>(spec, ctx.params->production.data(), x);
    const RowVec<Scalar> r = forward_batch<Scalar>(spec, ctx.params->respiration.data(), x);
    out += Scalar(ctx.model.rate_scale) * (p - r).transpose();
  }
  return out;
}

namespace detail {

template <typename Scalar>
void source_vjp(const RhsContext<Scalar>& ctx, const RhsTape<Scalar>& tape, const Vec<Scalar>& w,
                Vec<Scalar>& u_bar, Vec<Scalar>* theta_bar) {
  const MlpSpec& spec = ctx.params->spec;
  const Eigen::Index np = spec.param_count();
  const RowVec<Scalar> w_row = Scalar(ctx.model.rate_scale) * w.transpose();

  Vec<Scalar> scratch;
  if (!theta_bar) scratch = Vec<Scalar>::Zero(2 * np);
  Scalar* grad = theta_bar ? theta_bar->data() : scratch.data();

  Mat<Scalar> x_bar;
  backward_batch<Scalar>(spec, ctx.params->production.data(), tape.x, tape.production, w_row, grad, &x_bar);
  RowVec<Scalar> oc_bar = x_bar.row(1);
  backward_batch<Scalar>(spec, ctx.params->respiration.data(), tape.x, tape.respiration, RowVec<Scalar>(-w_row),
                         grad + np, &x_bar);
  oc_bar += x_bar.row(1);

  u_bar += oc_bar.transpose() / Scalar(ctx.model.scaling.scale[1]);
}

}  // namespace detail

/// Vector-Jacobian product of rhs at (u, t) with cotangent w:
/// u_bar += (d rhs / du)^T w and theta_bar += (d rhs / d theta)^T w, where
/// theta_bar is laid out as [production; respiration].
template <typename Scalar>
void rhs_vjp(const Vec<Scalar>& u, double t, const RhsContext<Scalar>& ctx, const Vec<Scalar>& w,
             Vec<Scalar>& u_bar, Vec<Scalar>* theta_bar) {
  add_transport_transpose<Scalar>(w, Scalar(ctx.grid->dz), Scalar(ctx.transport.diffusion),
                                  Scalar(ctx.transport.advection), u_bar);
  if (!ctx.params) return;
  RhsTape<Scalar> tape;
  tape.x = node_features(u, t, ctx);
  forward_batch<Scalar>(ctx.params->spec, ctx.params->production.data(), tape.x, &tape.production);
  forward_batch<Scalar>(ctx.params->spec, ctx.params->respiration.data(), tape.x, &tape.respiration);
  detail::source_vjp(ctx, tape, w, u_bar, theta_bar);
}

}  // namespace socude

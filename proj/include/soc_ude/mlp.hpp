#pragma once

// Production and respiration networks: 6 -> h1 -> h2 -> 1 perceptrons with a
// softplus head, stored as flat parameter vectors.

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

#include "soc_ude/core.hpp"

namespace socude {

enum class Activation { tanh, gelu };

std::string to_string(Activation a);
Activation parse_activation(const std::string& text);

struct MlpSpec {
  static constexpr int input_dim = 6;
  int h1 = 32;
  int h2 = 16;
  Activation activation = Activation::tanh;

  void validate() const;
  Eigen::Index param_count() const;
};

inline bool operator==(const MlpSpec& a, const MlpSpec& b) {
  return a.h1 == b.h1 && a.h2 == b.h2 && a.activation == b.activation;
}

/// Offsets of each block inside a network's flat vector. Weight blocks are
/// column-major (rows = fan_out).
struct LayerOffsets {
  Eigen::Index w1, b1, w2, b2, w3, b3, total;
};

LayerOffsets layer_offsets(const MlpSpec& spec);

/// Affine standardization of [pH, OC, CEC, clay, z, t]: (x - shift) / scale.
struct FeatureScaling {
  std::array<double, 6> shift{6.0, 0.0, 0.5, 25.0, 0.0, 0.0};
  std::array<double, 6> scale{1.0, 1.2, 0.2, 5.0, 1.0, 50.0};
};

struct ModelConfig {
  FeatureScaling scaling;
  /// Multiplies each network output (1/yr).
  double rate_scale = 0.05;
};

template <typename Scalar>
struct UdeParams {
  MlpSpec spec;
  Vec<Scalar> production;
  Vec<Scalar> respiration;

  Eigen::Index size() const { return production.size() + respiration.size(); }

  Vec<Scalar> flatten() const {
    Vec<Scalar> flat(size());
    flat << production, respiration;
    return flat;
  }

  static UdeParams unflatten(const MlpSpec& spec, const Vec<Scalar>& flat) {
    const Eigen::Index n = spec.param_count();
    if (flat.size() != 2 * n) throw std::invalid_argument("unflatten: length does not match layout");
    return {spec, flat.head(n), flat.tail(n)};
  }

  template <typename Other>
  UdeParams<Other> cast() const {
    return {spec, production.template cast<Other>(), respiration.template cast<Other>()};
  }
};

/// Glorot-uniform weights, zero biases. Production draws from
/// stream.child("production"), respiration from stream.child("respiration").
template <typename Scalar>
UdeParams<Scalar> init_params(const MlpSpec& spec, const RandomStream& stream);

/// All-zero parameters (both networks output softplus(0) = ln 2).
template <typename Scalar>
UdeParams<Scalar> zero_params(const MlpSpec& spec) {
  const Eigen::Index n = spec.param_count();
  return {spec, Vec<Scalar>::Zero(n), Vec<Scalar>::Zero(n)};
}

namespace detail {

template <typename Scalar>
struct NetworkView {
  Eigen::Map<const Mat<Scalar>> w1;
  Eigen::Map<const Vec<Scalar>> b1;
  Eigen::Map<const Mat<Scalar>> w2;
  Eigen::Map<const Vec<Scalar>> b2;
  Eigen::Map<const RowVec<Scalar>> w3;
  Scalar b3;

  NetworkView(const MlpSpec& s, const Scalar* p, const LayerOffsets& o)
      : w1(p + o.w1, s.h1, MlpSpec::input_dim),
        b1(p + o.b1, s.h1),
        w2(p + o.w2, s.h2, s.h1),
        b2(p + o.b2, s.h2),
        w3(p + o.w3, s.h2),
        b3(p[o.b3]) {}
};

template <typename Scalar>
struct NetworkGradView {
  Eigen::Map<Mat<Scalar>> w1;
  Eigen::Map<Vec<Scalar>> b1;
  Eigen::Map<Mat<Scalar>> w2;
  Eigen::Map<Vec<Scalar>> b2;
  Eigen::Map<RowVec<Scalar>> w3;
  Scalar& b3;

  NetworkGradView(const MlpSpec& s, Scalar* p, const LayerOffsets& o)
      : w1(p + o.w1, s.h1, MlpSpec::input_dim),
        b1(p + o.b1, s.h1),
        w2(p + o.w2, s.h2, s.h1),
        b2(p + o.b2, s.h2),
        w3(p + o.w3, s.h2),
        b3(p[o.b3]) {}
};

// Elementwise kernels on the SIMD math library; in and out may alias.
// vector_tanh uses tanh(x) = 1 - 2 / (exp(2x) + 1).
void vector_exp(const double* in, double* out, Eigen::Index n);
void vector_exp(const float* in, float* out, Eigen::Index n);
void vector_tanh(const double* in, double* out, Eigen::Index n);
void vector_tanh(const float* in, float* out, Eigen::Index n);

template <typename Scalar>
void tanh_into(const Mat<Scalar>& z, Mat<Scalar>& out) {
  out.resize(z.rows(), z.cols());
  vector_tanh(z.data(), out.data(), z.size());
}

// Activation value and derivative, evaluated in place. The GELU is the tanh
// approximation 0.5 z (1 + tanh(sqrt(2/pi) (z + 0.044715 z^3))).
template <typename Scalar>
void activate(Activation act, const Mat<Scalar>& z, Mat<Scalar>& a, Mat<Scalar>* da) {
  if (act == Activation::tanh) {
    tanh_into(z, a);
    if (da) *da = (Scalar(1) - a.array().square()).matrix();
    return;
  }
  const Scalar c = Scalar(0.7978845608028654);
  const Scalar k = Scalar(0.044715);
  Mat<Scalar> t = (c * (z.array() + k * z.array().cube())).matrix();
  vector_tanh(t.data(), t.data(), t.size());
  a = (Scalar(0.5) * z.array() * (Scalar(1) + t.array())).matrix();
  if (da) {
    *da = (Scalar(0.5) * (Scalar(1) + t.array()) +
           Scalar(0.5) * z.array() * (Scalar(1) - t.array().square()) * c *
               (Scalar(1) + Scalar(3) * k * z.array().square()))
              .matrix();
  }
}

// y = softplus(z) = max(z, 0) + log1p(exp(-|z|)); when sig is given it
// receives the derivative sigmoid(z), from the same exp.
template <typename Scalar>
void softplus_into(const RowVec<Scalar>& z, RowVec<Scalar>& y, RowVec<Scalar>* sig) {
  RowVec<Scalar> e = -z.cwiseAbs();
  vector_exp(e.data(), e.data(), e.size());
  y = (z.array().max(Scalar(0)) + e.array().log1p()).matrix();
  if (sig) {
    const auto inv = (Scalar(1) + e.array()).inverse();
    *sig = (z.array() >= Scalar(0)).select(inv, e.array() * inv).matrix();
  }
}

}  // namespace detail

/// Intermediate values of a batched forward pass, kept for the backward pass.
template <typename Scalar>
struct MlpTape {
  Mat<Scalar> a1, da1, a2, da2;
  RowVec<Scalar> sig3;  // sigmoid of the output pre-activation
};

/// Forward pass over the columns of x (6 x n). Returns softplus outputs (1 x n).
template <typename Scalar>
RowVec<Scalar> forward_batch(const MlpSpec& spec, const Scalar* theta, const Mat<Scalar>& x,
                             MlpTape<Scalar>* tape = nullptr) {
  const LayerOffsets off = layer_offsets(spec);
  const detail::NetworkView<Scalar> net(spec, theta, off);

  Mat<Scalar> z1 = net.w1 * x;
  z1.colwise() += net.b1;
  Mat<Scalar> a1, da1;
  detail::activate<Scalar>(spec.activation, z1, a1, tape ? &da1 : nullptr);

  Mat<Scalar> z2 = net.w2 * a1;
  z2.colwise() += net.b2;
  Mat<Scalar> a2, da2;
  detail::activate<Scalar>(spec.activation, z2, a2, tape ? &da2 : nullptr);

  RowVec<Scalar> z3 = net.w3 * a2;
  z3.array() += net.b3;

  RowVec<Scalar> y;
  detail::softplus_into<Scalar>(z3, y, tape ? &tape->sig3 : nullptr);

  if (tape) {
    tape->a1 = std::move(a1);
    tape->da1 = std::move(da1);
    tape->a2 = std::move(a2);
    tape->da2 = std::move(da2);
  }
  return y;
}

/// Reverse pass for forward_batch. Accumulates dL/dtheta into theta_bar
/// (same layout as theta) and, when x_bar is given, writes dL/dx (6 x n).
template <typename Scalar>
void backward_batch(const MlpSpec& spec, const Scalar* theta, const Mat<Scalar>& x,
                    const MlpTape<Scalar>& tape, const RowVec<Scalar>& y_bar, Scalar* theta_bar,
                    Mat<Scalar>* x_bar = nullptr) {
  const LayerOffsets off = layer_offsets(spec);
  const detail::NetworkView<Scalar> net(spec, theta, off);
  detail::NetworkGradView<Scalar> grad(spec, theta_bar, off);

  const RowVec<Scalar> dz3 = y_bar.cwiseProduct(tape.sig3);

  grad.b3 += dz3.sum();
  grad.w3.noalias() += dz3 * tape.a2.transpose();

  Mat<Scalar> dz2 = (net.w3.transpose() * dz3).cwiseProduct(tape.da2);
  grad.b2 += dz2.rowwise().sum();
  grad.w2.noalias() += dz2 * tape.a1.transpose();

  Mat<Scalar> dz1 = (net.w2.transpose() * dz2).cwiseProduct(tape.da1);
  grad.b1 += dz1.rowwise().sum();
  grad.w1.noalias() += dz1 * x.transpose();

  if (x_bar) x_bar->noalias() = net.w1.transpose() * dz1;
}

/// Single-sample forward on an already-scaled input. Throws
/// std::invalid_argument on non-finite input.
template <typename Scalar>
Scalar forward(const MlpSpec& spec, const Vec<Scalar>& theta, const Vec<Scalar>& input) {
  if (theta.size() != spec.param_count())
    throw std::invalid_argument("forward: parameter length does not match spec");
  if (input.size() != MlpSpec::input_dim) throw std::invalid_argument("forward: input must have 6 entries");
  if (!input.allFinite()) throw std::invalid_argument("forward: non-finite input");
  Mat<Scalar> x = input;
  return forward_batch<Scalar>(spec, theta.data(), x)[0];
}

/// Scaled network input for one node.
template <typename Scalar>
Vec<Scalar> scaled_features(const FeatureScaling& s, double ph, double oc, double cec, double clay,
                            double z, double t) {
  const std::array<double, 6> raw{ph, oc, cec, clay, z, t};
  Vec<Scalar> x(6);
  for (int k = 0; k < 6; ++k) x[k] = Scalar((raw[k] - s.shift[k]) / s.scale[k]);
  return x;
}

/// rate_scale * (NN_P(x) - NN_R(x)) for the scaled feature vector of
/// (pH, OC, CEC, clay, z, t).
template <typename Scalar>
Scalar net_source(const UdeParams<Scalar>& params, const ModelConfig& model, double state_oc,
                  const DriverSample& drivers, double z, double t) {
  const Vec<Scalar> x =
      scaled_features<Scalar>(model.scaling, drivers.ph, state_oc, drivers.cec, drivers.clay, z, t);
  const Scalar p = forward<Scalar>(params.spec, params.production, x);
  const Scalar r = forward<Scalar>(params.spec, params.respiration, x);
  return Scalar(model.rate_scale) * (p - r);
}

}  // namespace socude

#include "soc_ude/mlp.hpp"

namespace socude {

std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "gelu"; }

Activation parse_activation(const std::string& text) {
  if (text == "tanh") return Activation::tanh;
  if (text == "gelu") return Activation::gelu;
  throw std::invalid_argument("unknown activation '" + text + "' (expected tanh or gelu)");
}

void MlpSpec::validate() const {
  if (h1 < 1 || h2 < 1) throw std::invalid_argument("MlpSpec: hidden widths must be >= 1");
}

Eigen::Index MlpSpec::param_count() const { return layer_offsets(*this).total; }

LayerOffsets layer_offsets(const MlpSpec& spec) {
  LayerOffsets o{};
  o.w1 = 0;
  o.b1 = o.w1 + Eigen::Index(spec.h1) * MlpSpec::input_dim;
  o.w2 = o.b1 + spec.h1;
  o.b2 = o.w2 + Eigen::Index(spec.h2) * spec.h1;
  o.w3 = o.b2 + spec.h2;
  o.b3 = o.w3 + spec.h2;
  o.total = o.b3 + 1;
  return o;
}

namespace {

template <typename Scalar>
Vec<Scalar> glorot_network(const MlpSpec& spec, NormalSampler& rng) {
  const LayerOffsets off = layer_offsets(spec);
  Vec<Scalar> theta = Vec<Scalar>::Zero(off.total);
  auto fill = [&](Eigen::Index start, int fan_out, int fan_in) {
    const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
    for (Eigen::Index k = 0; k < Eigen::Index(fan_out) * fan_in; ++k)
      theta[start + k] = Scalar((2.0 * rng.uniform() - 1.0) * limit);
  };
  fill(off.w1, spec.h1, MlpSpec::input_dim);
  fill(off.w2, spec.h2, spec.h1);
  fill(off.w3, 1, spec.h2);
  return theta;
}

}  // namespace

template <typename Scalar>
UdeParams<Scalar> init_params(const MlpSpec& spec, const RandomStream& stream) {
  spec.validate();
  NormalSampler p_rng = stream.child("production").sampler();
  NormalSampler r_rng = stream.child("respiration").sampler();
  return {spec, glorot_network<Scalar>(spec, p_rng), glorot_network<Scalar>(spec, r_rng)};
}

template UdeParams<float> init_params<float>(const MlpSpec&, const RandomStream&);
template UdeParams<double> init_params<double>(const MlpSpec&, const RandomStream&);

}  // namespace socude

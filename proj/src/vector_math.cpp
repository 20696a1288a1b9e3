// Built with -ffast-math so the loops below map onto the vector exp of libmvec.

#include <cmath>

#include "soc_ude/mlp.hpp"

namespace socude::detail {

void vector_exp(const double* in, double* out, Eigen::Index n) {
  for (Eigen::Index i = 0; i < n; ++i) out[i] = std::exp(in[i]);
}

void vector_exp(const float* in, float* out, Eigen::Index n) {
  for (Eigen::Index i = 0; i < n; ++i) out[i] = std::exp(in[i]);
}

void vector_tanh(const double* in, double* out, Eigen::Index n) {
  for (Eigen::Index i = 0; i < n; ++i) out[i] = 1.0 - 2.0 / (std::exp(2.0 * in[i]) + 1.0);
}

void vector_tanh(const float* in, float* out, Eigen::Index n) {
  for (Eigen::Index i = 0; i < n; ++i) out[i] = 1.0f - 2.0f / (std::exp(2.0f * in[i]) + 1.0f);
}

}  // namespace socude::detail

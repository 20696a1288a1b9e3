#include "soc_ude/core.hpp"

#include <cmath>
#include <numbers>

namespace socude {

std::string to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

Precision parse_precision(const std::string& text) {
  if (text == "f32") return Precision::f32;
  if (text == "f64") return Precision::f64;
  throw std::invalid_argument("unknown precision '" + text + "' (expected f32 or f64)");
}

DepthGrid make_grid(int nz, double z_min, double z_max) {
  if (nz < 3) throw std::invalid_argument("make_grid: nz must be >= 3");
  if (!(z_max > z_min)) throw std::invalid_argument("make_grid: z_max must exceed z_min");
  DepthGrid grid;
  grid.nz = nz;
  grid.z_min = z_min;
  grid.z_max = z_max;
  grid.dz = (z_max - z_min) / static_cast<double>(nz - 1);
  grid.nodes.resize(nz);
  for (int i = 0; i < nz; ++i) grid.nodes[i] = z_min + grid.dz * static_cast<double>(i);
  grid.nodes[nz - 1] = z_max;
  return grid;
}

void TransportParams::validate() const {
  if (!(diffusion >= 0.0) || !std::isfinite(diffusion))
    throw std::invalid_argument("transport: diffusion must be finite and >= 0");
  if (!std::isfinite(advection)) throw std::invalid_argument("transport: advection must be finite");
}

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t basis) {
  auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t h = basis;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a64(const std::string& text) { return fnv1a64(text.data(), text.size()); }

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t RandomStream::key() const {
  return splitmix64(splitmix64(seed_) ^ fnv1a64(label_));
}

NormalSampler RandomStream::sampler() const { return NormalSampler(key()); }

double NormalSampler::uniform() {
  // (k + 0.5) / 2^53 never hits 0 or 1.
  const std::uint64_t bits = engine_() >> 11;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

double NormalSampler::normal() {
  if (spare_) {
    const double v = *spare_;
    spare_.reset();
    return v;
  }
  const double u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  return radius * std::cos(angle);
}

Eigen::VectorXd gaussian_draws(const RandomStream& stream, Eigen::Index n) {
  if (n < 0) throw std::invalid_argument("gaussian_draws: n must be >= 0");
  NormalSampler sampler = stream.sampler();
  Eigen::VectorXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = sampler.normal();
  return out;
}

double profile_mass(const Eigen::VectorXd& u, double dz) {
  if (u.size() == 0) return 0.0;
  return dz * (u.sum() - 0.5 * (u[0] + u[u.size() - 1]));
}

}  // namespace socude

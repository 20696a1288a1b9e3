#pragma once

// Shared domain types: depth grid, profiles, driver samples, transport
// coefficients and the keyed random streams every other module draws from.

#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace socude {

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

enum class Precision { f32, f64 };

std::string to_string(Precision p);
Precision parse_precision(const std::string& text);

/// Uniform discretization of [z_min, z_max] with nz nodes.
struct DepthGrid {
  int nz = 0;
  double z_min = 0.0;
  double z_max = 0.0;
  double dz = 0.0;
  Eigen::VectorXd nodes;
};

/// Throws std::invalid_argument when nz < 3 or z_max <= z_min.
DepthGrid make_grid(int nz, double z_min, double z_max);

/// Trapezoid-rule integral of a nodal profile (half weight on both end nodes).
double profile_mass(const Eigen::VectorXd& u, double dz);

/// SOC concentration per grid node at one time (dimensionless synthetic units).
struct SocProfile {
  Eigen::VectorXd values;
  double time = 0.0;
};

struct DriverSample {
  double ph = 0.0;
  double cec = 0.0;
  double clay = 0.0;
};

/// Diffusion D (m^2/yr) and advection velocity v (m/yr).
struct TransportParams {
  double diffusion = 1e-3;
  double advection = 1e-3;

  void validate() const;
};

class NormalSampler;

/// A (seed, label) pair naming an independent, reproducible draw sequence.
///
/// The label is hashed together with the seed (FNV-1a then SplitMix64) to
/// seed a std::mt19937_64, whose output sequence is fixed by the standard.
/// Normals come from a Box-Muller transform written here because
/// std::normal_distribution is implementation-defined.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::string label)
      : seed_(seed), label_(std::move(label)) {}

  std::uint64_t seed() const { return seed_; }
  const std::string& label() const { return label_; }

  /// Derived stream "<label>/<suffix>" under the same seed.
  RandomStream child(const std::string& suffix) const {
    return RandomStream(seed_, label_ + "/" + suffix);
  }

  std::uint64_t key() const;
  NormalSampler sampler() const;

 private:
  std::uint64_t seed_;
  std::string label_;
};

class NormalSampler {
 public:
  explicit NormalSampler(std::uint64_t key) : engine_(key) {}

  /// Uniform on the open interval (0, 1), 53 random bits.
  double uniform();
  double normal();

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

/// First n standard-normal draws of the stream.
Eigen::VectorXd gaussian_draws(const RandomStream& stream, Eigen::Index n);

std::uint64_t fnv1a64(const void* data, std::size_t size,
                      std::uint64_t basis = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(const std::string& text);
std::uint64_t splitmix64(std::uint64_t x);

}  // namespace socude

#pragma once

// Synthetic soil drivers, initial SOC profile, noise models and the
// zero-source ground truth used for supervision.

#include <optional>
#include <utility>
#include <string>
#include <vector>

#include "soc_ude/core.hpp"

namespace socude {

struct InitialProfileParams {
  double c0 = 1.2;
  double k_decay = 0.02;
  double depth_scale = 100.0;
};

/// values[i] = c0 * exp(-k_decay * z_i * depth_scale), time 0.
SocProfile initial_soc(const DepthGrid& grid, double c0, double k_decay, double depth_scale);
SocProfile initial_soc(const DepthGrid& grid, const InitialProfileParams& p = {});

double ph_at(double z, double t);
double cec_at(double z, double t);
double clay_at(double z, double t);
DriverSample clean_drivers_at(double z, double t);

enum class NoiseKind { multiplicative_iid, multiplicative_ar1 };

std::string to_string(NoiseKind kind);
NoiseKind parse_noise_kind(const std::string& text);

struct NoiseSpec {
  NoiseKind kind = NoiseKind::multiplicative_iid;
  double level = 0.0;  // eta, relative
  double rho = 0.8;    // depth correlation, ar1 only
  /// Entries are clipped below at this value after noising; nullopt disables.
  std::optional<double> floor = 0.0;

  void validate() const;
};

/// Entrywise x * (1 + eta * eps) with eps iid N(0,1), drawn in row-major order.
Eigen::MatrixXd apply_multiplicative_noise(const Eigen::MatrixXd& field, const NoiseSpec& spec,
                                           const RandomStream& stream);

/// Per row: eps_0 = xi_0, eps_i = rho * eps_{i-1} + sqrt(1 - rho^2) * xi_i.
Eigen::MatrixXd apply_ar1_noise(const Eigen::MatrixXd& field, const NoiseSpec& spec,
                                const RandomStream& stream);

/// Dispatches on spec.kind.
Eigen::MatrixXd apply_noise(const Eigen::MatrixXd& field, const NoiseSpec& spec,
                            const RandomStream& stream);

struct DriverProvenance {
  bool noisy = false;
  NoiseKind kind = NoiseKind::multiplicative_iid;
  double level = 0.0;
  std::uint64_t seed = 0;
};

/// pH/CEC/clay on a [time x depth] lattice.
///
/// Clean fields are evaluated analytically at any (node, t). Noisy fields keep
/// the multiplicative factor (1 + eta * eps) on the lattice; the factor is
/// linearly interpolated in time (clamped outside the lattice) and applied to
/// the analytic value.
class DriverField {
 public:
  DriverField() = default;

  const DepthGrid& grid() const { return grid_; }
  const std::vector<double>& times() const { return times_; }
  const Eigen::MatrixXd& ph() const { return ph_; }
  const Eigen::MatrixXd& cec() const { return cec_; }
  const Eigen::MatrixXd& clay() const { return clay_; }
  const DriverProvenance& provenance() const { return provenance_; }
  bool is_clean() const { return !provenance_.noisy; }

  DriverSample sample(int node, double t) const;
  /// sample() for every node at once; rows are pH, CEC and clay.
  Eigen::Matrix<double, 3, Eigen::Dynamic> sample_nodes(double t) const;

  friend DriverField sample_drivers(const DepthGrid& grid, const std::vector<double>& times);
  friend DriverField corrupt_drivers(const DriverField& clean, const NoiseSpec& spec,
                                     const RandomStream& stream);

 private:
  DepthGrid grid_;
  std::vector<double> times_;
  Eigen::MatrixXd ph_, cec_, clay_;
  Eigen::MatrixXd ph_factor_, cec_factor_, clay_factor_;
  Eigen::VectorXd sin_z_, cos_z_;  // sin(2 pi z), cos(2 pi z) per node
  DriverProvenance provenance_;

  std::pair<std::size_t, double> lattice_weight(double t) const;
};

/// Clean field from the closed-form driver formulas. times must be non-empty and ascending.
DriverField sample_drivers(const DepthGrid& grid, const std::vector<double>& times);

/// Noisy copy of a clean field; pH, CEC and clay use the child streams "ph", "cec", "clay".
DriverField corrupt_drivers(const DriverField& clean, const NoiseSpec& spec,
                            const RandomStream& stream);

/// Simulation-wide constants shared by dataset generation and training.
struct SimulationConfig {
  int nz = 30;
  double z_min = 0.0;
  double z_max = 1.0;
  double t_end = 50.0;
  InitialProfileParams initial;
  TransportParams transport;
  int driver_lattice_times = 51;
  bool clip_noisy_target = true;
  double eval_rtol = 1e-6;
  double eval_atol = 1e-6;

  DepthGrid grid() const { return make_grid(nz, z_min, z_max); }
  std::vector<double> lattice_times() const;
};

/// Integrates the transport-only system (no neural source) from the initial
/// profile to t_end with the adaptive evaluation integrator. Throws
/// std::runtime_error if the solver fails.
SocProfile generate_clean_target(const DepthGrid& grid, const TransportParams& transport,
                                 double t_end, const InitialProfileParams& initial = {},
                                 double rtol = 1e-6, double atol = 1e-6);

/// Which observations a dataset carries and how they are corrupted.
struct DataSpec {
  double target_time = 50.0;  // 0 or t_end
  std::optional<NoiseSpec> driver_noise;
  std::optional<NoiseSpec> target_noise;
  std::uint64_t seed = 7;
};

struct Dataset {
  DepthGrid grid;
  double t_start = 0.0;
  double t_end = 50.0;
  TransportParams transport;
  DriverField drivers;
  /// Model initial condition. For t = 0 targets this is the observed profile.
  SocProfile initial_profile;
  SocProfile target_profile;
  double target_time = 50.0;
  /// Noise-free profile at target_time, kept for benchmarking.
  SocProfile clean_target;
};

/// Clean drivers and clean target are always computed first; noise is applied
/// afterwards from streams under (spec.seed, "data/...").
Dataset build_case_dataset(const DataSpec& spec, const SimulationConfig& sim);

}  // namespace socude

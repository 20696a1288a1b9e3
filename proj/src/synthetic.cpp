#include "soc_ude/synthetic.hpp"

#include <array>
#include <cmath>
#include <numbers>

#include "soc_ude/integrator.hpp"

namespace socude {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
}

SocProfile initial_soc(const DepthGrid& grid, double c0, double k_decay, double depth_scale) {
  if (!(c0 > 0.0)) throw std::invalid_argument("initial_soc: c0 must be > 0");
  SocProfile p;
  p.time = 0.0;
  p.values = (grid.nodes.array() * (-k_decay * depth_scale)).exp() * c0;
  return p;
}

SocProfile initial_soc(const DepthGrid& grid, const InitialProfileParams& p) {
  return initial_soc(grid, p.c0, p.k_decay, p.depth_scale);
}

double ph_at(double z, double t) { return 6.5 - 0.5 * z + 0.10 * std::sin(kTwoPi * t / 1.0); }

double cec_at(double z, double t) {
  return 0.5 + 0.1 * std::sin(kTwoPi * z) + 0.05 * std::cos(kTwoPi * t / 5.0);
}

double clay_at(double z, double t) {
  return 25.0 + 5.0 * std::cos(kTwoPi * z) + 0.5 * std::sin(kTwoPi * t / 10.0);
}

DriverSample clean_drivers_at(double z, double t) { return {ph_at(z, t), cec_at(z, t), clay_at(z, t)}; }

std::string to_string(NoiseKind kind) {
  return kind == NoiseKind::multiplicative_iid ? "multiplicative-iid" : "multiplicative-ar1";
}

NoiseKind parse_noise_kind(const std::string& text) {
  if (text == "multiplicative-iid") return NoiseKind::multiplicative_iid;
  if (text == "multiplicative-ar1") return NoiseKind::multiplicative_ar1;
  throw std::invalid_argument("unknown noise kind '" + text + "'");
}

void NoiseSpec::validate() const {
  if (!(level >= 0.0 && level <= 1.0)) throw std::invalid_argument("NoiseSpec: level must lie in [0, 1]");
  if (!(rho >= 0.0 && rho < 1.0)) throw std::invalid_argument("NoiseSpec: rho must lie in [0, 1)");
}

namespace {

Eigen::MatrixXd finish(const Eigen::MatrixXd& field, const Eigen::MatrixXd& eps, const NoiseSpec& spec) {
  Eigen::MatrixXd out = field.array() * (1.0 + spec.level * eps.array());
  if (spec.floor) out = out.cwiseMax(*spec.floor);
  return out;
}

}  // namespace

Eigen::MatrixXd apply_multiplicative_noise(const Eigen::MatrixXd& field, const NoiseSpec& spec,
                                           const RandomStream& stream) {
  spec.validate();
  if (spec.level == 0.0) return field;
  NormalSampler rng = stream.sampler();
  Eigen::MatrixXd eps(field.rows(), field.cols());
  for (Eigen::Index r = 0; r < field.rows(); ++r)
    for (Eigen::Index c = 0; c < field.cols(); ++c) eps(r, c) = rng.normal();
  return finish(field, eps, spec);
}

Eigen::MatrixXd apply_ar1_noise(const Eigen::MatrixXd& field, const NoiseSpec& spec,
                                const RandomStream& stream) {
  spec.validate();
  if (spec.level == 0.0) return field;
  NormalSampler rng = stream.sampler();
  const double innovation = std::sqrt(1.0 - spec.rho * spec.rho);
  Eigen::MatrixXd eps(field.rows(), field.cols());
  for (Eigen::Index r = 0; r < field.rows(); ++r) {
    for (Eigen::Index c = 0; c < field.cols(); ++c) {
      const double xi = rng.normal();
      eps(r, c) = c == 0 ? xi : spec.rho * eps(r, c - 1) + innovation * xi;
    }
  }
  return finish(field, eps, spec);
}

Eigen::MatrixXd apply_noise(const Eigen::MatrixXd& field, const NoiseSpec& spec, const RandomStream& stream) {
  return spec.kind == NoiseKind::multiplicative_iid ? apply_multiplicative_noise(field, spec, stream)
                                                    : apply_ar1_noise(field, spec, stream);
}

std::pair<std::size_t, double> DriverField::lattice_weight(double t) const {
  if (times_.size() < 2) return {0, 0.0};
  if (t >= times_.back()) return {times_.size() - 2, 1.0};
  if (t <= times_.front()) return {0, 0.0};
  auto it = std::upper_bound(times_.begin(), times_.end(), t);
  const std::size_t j = std::size_t(it - times_.begin()) - 1;
  return {j, (t - times_[j]) / (times_[j + 1] - times_[j])};
}

DriverSample DriverField::sample(int node, double t) const {
  const double z = grid_.nodes[node];
  DriverSample d = clean_drivers_at(z, t);
  if (!provenance_.noisy) return d;

  const auto [j, w] = lattice_weight(t);
  auto factor = [&](const Eigen::MatrixXd& f) {
    if (times_.size() == 1) return f(0, node);
    return (1.0 - w) * f(Eigen::Index(j), node) + w * f(Eigen::Index(j) + 1, node);
  };
  d.ph *= factor(ph_factor_);
  d.cec *= factor(cec_factor_);
  d.clay *= factor(clay_factor_);
  return d;
}

Eigen::Matrix<double, 3, Eigen::Dynamic> DriverField::sample_nodes(double t) const {
  const int n = grid_.nz;
  const double ph_t = 0.10 * std::sin(kTwoPi * t / 1.0);
  const double cec_t = 0.05 * std::cos(kTwoPi * t / 5.0);
  const double clay_t = 0.5 * std::sin(kTwoPi * t / 10.0);
  Eigen::Matrix<double, 3, Eigen::Dynamic> out(3, n);
  for (int i = 0; i < n; ++i) {
    out(0, i) = 6.5 - 0.5 * grid_.nodes[i] + ph_t;
    out(1, i) = 0.5 + 0.1 * sin_z_[i] + cec_t;
    out(2, i) = 25.0 + 5.0 * cos_z_[i] + clay_t;
  }
  if (!provenance_.noisy) return out;

  const auto [j, w] = lattice_weight(t);
  const Eigen::Index r = Eigen::Index(j);
  const std::array<const Eigen::MatrixXd*, 3> factors{&ph_factor_, &cec_factor_, &clay_factor_};
  for (int k = 0; k < 3; ++k) {
    const Eigen::MatrixXd& f = *factors[std::size_t(k)];
    for (int i = 0; i < n; ++i)
      out(k, i) *= times_.size() == 1 ? f(0, i) : (1.0 - w) * f(r, i) + w * f(r + 1, i);
  }
  return out;
}

DriverField sample_drivers(const DepthGrid& grid, const std::vector<double>& times) {
  if (times.empty()) throw std::invalid_argument("sample_drivers: times must be non-empty");
  if (!std::is_sorted(times.begin(), times.end()))
    throw std::invalid_argument("sample_drivers: times must be ascending");
  DriverField f;
  f.grid_ = grid;
  f.times_ = times;
  const Eigen::Index nt = Eigen::Index(times.size());
  f.ph_.resize(nt, grid.nz);
  f.cec_.resize(nt, grid.nz);
  f.clay_.resize(nt, grid.nz);
  f.sin_z_.resize(grid.nz);
  f.cos_z_.resize(grid.nz);
  for (int i = 0; i < grid.nz; ++i) {
    f.sin_z_[i] = std::sin(kTwoPi * grid.nodes[i]);
    f.cos_z_[i] = std::cos(kTwoPi * grid.nodes[i]);
  }
  for (Eigen::Index k = 0; k < nt; ++k) {
    for (int i = 0; i < grid.nz; ++i) {
      const DriverSample d = clean_drivers_at(grid.nodes[i], times[k]);
      f.ph_(k, i) = d.ph;
      f.cec_(k, i) = d.cec;
      f.clay_(k, i) = d.clay;
    }
  }
  return f;
}

DriverField corrupt_drivers(const DriverField& clean, const NoiseSpec& spec, const RandomStream& stream) {
  if (!clean.is_clean()) throw std::invalid_argument("corrupt_drivers: field is already noisy");
  DriverField f = clean;
  const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(clean.ph_.rows(), clean.ph_.cols());
  // Factors are clipped at zero; for positive fields that equals clipping the
  // noisy value itself.
  NoiseSpec factor_spec = spec;
  if (spec.floor) factor_spec.floor = 0.0;
  f.ph_factor_ = apply_noise(ones, factor_spec, stream.child("ph"));
  f.cec_factor_ = apply_noise(ones, factor_spec, stream.child("cec"));
  f.clay_factor_ = apply_noise(ones, factor_spec, stream.child("clay"));
  f.ph_ = clean.ph_.cwiseProduct(f.ph_factor_);
  f.cec_ = clean.cec_.cwiseProduct(f.cec_factor_);
  f.clay_ = clean.clay_.cwiseProduct(f.clay_factor_);
  f.provenance_ = {true, spec.kind, spec.level, stream.seed()};
  return f;
}

std::vector<double> SimulationConfig::lattice_times() const {
  std::vector<double> times(std::max(driver_lattice_times, 1));
  if (times.size() == 1) return {0.0};
  for (std::size_t k = 0; k < times.size(); ++k)
    times[k] = t_end * double(k) / double(times.size() - 1);
  return times;
}

SocProfile generate_clean_target(const DepthGrid& grid, const TransportParams& transport, double t_end,
                                 const InitialProfileParams& initial, double rtol, double atol) {
  if (!(t_end >= 0.0)) throw std::invalid_argument("generate_clean_target: t_end must be >= 0");
  SocProfile start = initial_soc(grid, initial);
  if (t_end == 0.0) return start;
  RhsContext<double> ctx;
  ctx.grid = &grid;
  ctx.transport = transport;
  ctx.validate();
  const auto outcome = safe_solve<double>(ctx, start.values, {0.0, t_end}, {},
                                          IntegratorConfig::adaptive(rtol, atol));
  if (!outcome.ok())
    throw std::runtime_error("generate_clean_target: solver failed (" + outcome.failure_reason + ")");
  return {outcome.terminal, t_end};
}

Dataset build_case_dataset(const DataSpec& spec, const SimulationConfig& sim) {
  Dataset ds;
  ds.grid = sim.grid();
  ds.t_start = 0.0;
  ds.t_end = sim.t_end;
  ds.transport = sim.transport;
  ds.target_time = spec.target_time;
  if (!(spec.target_time == 0.0 || spec.target_time == sim.t_end))
    throw std::invalid_argument("build_case_dataset: target time must be 0 or t_end");

  const RandomStream root(spec.seed, "data");
  const DriverField clean = sample_drivers(ds.grid, sim.lattice_times());
  ds.drivers = spec.driver_noise ? corrupt_drivers(clean, *spec.driver_noise, root.child("drivers")) : clean;

  const SocProfile start = initial_soc(ds.grid, sim.initial);
  ds.clean_target = spec.target_time == 0.0
                        ? start
                        : generate_clean_target(ds.grid, sim.transport, spec.target_time, sim.initial,
                                                sim.eval_rtol, sim.eval_atol);

  ds.target_profile = ds.clean_target;
  if (spec.target_noise) {
    NoiseSpec target_spec = *spec.target_noise;
    target_spec.floor = sim.clip_noisy_target ? std::optional<double>(0.0) : std::nullopt;
    const Eigen::MatrixXd row = ds.clean_target.values.transpose();
    ds.target_profile.values = apply_noise(row, target_spec, root.child("target")).transpose();
  }
  ds.initial_profile = spec.target_time == 0.0 ? ds.target_profile : start;
  return ds;
}

}  // namespace socude

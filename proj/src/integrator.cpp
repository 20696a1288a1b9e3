#include "soc_ude/integrator.hpp"

namespace socude {

std::string to_string(IntegratorMethod m) {
  return m == IntegratorMethod::rk4_fixed ? "rk4-fixed" : "tsit5-adaptive";
}

void IntegratorConfig::validate() const {
  if (method == IntegratorMethod::rk4_fixed && !(dt > 0.0))
    throw std::invalid_argument("IntegratorConfig: dt must be > 0");
  if (method == IntegratorMethod::tsit5_adaptive && !(rtol > 0.0 && atol > 0.0))
    throw std::invalid_argument("IntegratorConfig: rtol and atol must be > 0");
  if (max_steps < 1) throw std::invalid_argument("IntegratorConfig: max_steps must be >= 1");
}

std::vector<double> fixed_step_times(double t0, double t1, double dt) {
  if (!(dt > 0.0) || !(t1 > t0)) throw std::invalid_argument("fixed_step_times: bad span or dt");
  const long n = std::max(1L, long(std::ceil((t1 - t0) / dt - 1e-9)));
  std::vector<double> times(n + 1);
  for (long i = 0; i < n; ++i) times[i] = t0 + double(i) * dt;
  times[n] = t1;
  return times;
}

std::pair<std::size_t, double> bracket(const std::vector<double>& times, double t) {
  if (times.size() < 2) return {0, 0.0};
  if (t <= times.front()) return {0, 0.0};
  if (t >= times.back()) return {times.size() - 2, 1.0};
  auto it = std::upper_bound(times.begin(), times.end(), t);
  const std::size_t j = std::size_t(it - times.begin()) - 1;
  const double w = (t - times[j]) / (times[j + 1] - times[j]);
  return {j, w};
}

}  // namespace socude

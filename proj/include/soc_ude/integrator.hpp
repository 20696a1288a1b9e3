#pragma once

// Explicit Runge-Kutta integration of the semi-discrete system: classic RK4
// on a fixed step sequence (training path) and the Tsitouras 5(4) pair with
// PI step control (evaluation path).

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "soc_ude/core.hpp"
#include "soc_ude/dynamics.hpp"

namespace socude {

enum class IntegratorMethod { rk4_fixed, tsit5_adaptive };

std::string to_string(IntegratorMethod m);

struct IntegratorConfig {
  IntegratorMethod method = IntegratorMethod::rk4_fixed;
  double dt = 0.1;
  double rtol = 1e-6;
  double atol = 1e-6;
  long max_steps = 200000;

  static IntegratorConfig rk4(double dt) {
    IntegratorConfig c;
    c.dt = dt;
    return c;
  }
  static IntegratorConfig adaptive(double rtol, double atol) {
    IntegratorConfig c;
    c.method = IntegratorMethod::tsit5_adaptive;
    c.rtol = rtol;
    c.atol = atol;
    return c;
  }

  void validate() const;
};

enum class SolveStatus { ok, failed };

struct SolveStats {
  long steps = 0;
  long rejected = 0;
  long rhs_evals = 0;
};

template <typename Scalar>
struct SolveOutcome {
  SolveStatus status = SolveStatus::ok;
  Vec<Scalar> terminal;
  /// One entry per requested save time, in request order (ok only).
  std::vector<Vec<Scalar>> saved;
  SolveStats stats;
  double failure_time = std::numeric_limits<double>::quiet_NaN();
  std::string failure_reason;

  bool ok() const { return status == SolveStatus::ok; }
};

/// Step boundaries t0, t0 + dt, ..., t1; the last step is truncated to land on t1.
std::vector<double> fixed_step_times(double t0, double t1, double dt);

/// Locates t in an ascending time grid: returns (j, w) with
/// u(t) ~ (1 - w) u[j] + w u[j + 1]. t is clamped into the grid.
std::pair<std::size_t, double> bracket(const std::vector<double>& times, double t);

/// One classic RK4 step. stage_inputs, when given, receives the four
/// arguments at which f was evaluated.
template <typename Scalar, typename F>
Vec<Scalar> rk4_step(F& f, const Vec<Scalar>& u, double t, double h,
                     std::array<Vec<Scalar>, 4>* stage_inputs = nullptr) {
  const Scalar hs = Scalar(h);
  const Scalar half = Scalar(0.5) * hs;
  Vec<Scalar> y = u;
  if (stage_inputs) (*stage_inputs)[0] = y;
  const Vec<Scalar> k1 = f(y, t);
  y = u + half * k1;
  if (stage_inputs) (*stage_inputs)[1] = y;
  const Vec<Scalar> k2 = f(y, t + 0.5 * h);
  y = u + half * k2;
  if (stage_inputs) (*stage_inputs)[2] = y;
  const Vec<Scalar> k3 = f(y, t + 0.5 * h);
  y = u + hs * k3;
  if (stage_inputs) (*stage_inputs)[3] = y;
  const Vec<Scalar> k4 = f(y, t + h);
  return u + (hs / Scalar(6)) * (k1 + Scalar(2) * k2 + Scalar(2) * k3 + k4);
}

namespace detail {

// Tsitouras (2011) 5(4) tableau; b = row 7 of a (FSAL).
struct Tsit5Tableau {
  static constexpr double c2 = 0.161, c3 = 0.327, c4 = 0.9, c5 = 0.9800255409045097;
  static constexpr double a21 = 0.161;
  static constexpr double a31 = -0.008480655492356989, a32 = 0.335480655492357;
  static constexpr double a41 = 2.897153057105493, a42 = -6.359448489975075,
                          a43 = 4.3622954328695815;
  static constexpr double a51 = 5.325864828439257, a52 = -11.748883564062828,
                          a53 = 7.4955393428898365, a54 = -0.09249506636175525;
  static constexpr double a61 = 5.86145544294642, a62 = -12.92096931784711,
                          a63 = 8.159367898576159, a64 = -0.071584973281401,
                          a65 = -0.028269050394068383;
  static constexpr double a71 = 0.09646076681806523, a72 = 0.01, a73 = 0.4798896504144996,
                          a74 = 1.379008574103742, a75 = -3.290069515436081,
                          a76 = 2.324710524099774;
  // Error weights: b - b_hat.
  static constexpr double e1 = -0.00178001105222577714, e2 = -0.0008164344596567469,
                          e3 = 0.007880878010261995, e4 = -0.1447110071732629,
                          e5 = 0.5823571654525552, e6 = -0.45808210592918697,
                          e7 = 0.015151515151515152;
};

template <typename Scalar>
class SaveCursor {
 public:
  SaveCursor(const std::vector<double>& save_at, std::vector<Vec<Scalar>>& saved)
      : save_at_(save_at), saved_(saved), order_(save_at.size()) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::stable_sort(order_.begin(), order_.end(),
                     [&](std::size_t a, std::size_t b) { return save_at_[a] < save_at_[b]; });
    saved_.assign(save_at.size(), Vec<Scalar>());
  }

  // Fills every pending save time in [ta, tb] by linear interpolation.
  void advance(double ta, const Vec<Scalar>& ua, double tb, const Vec<Scalar>& ub, bool last) {
    while (next_ < order_.size()) {
      const double ts = save_at_[order_[next_]];
      if (ts > tb && !last) break;
      const double w = tb > ta ? std::clamp((ts - ta) / (tb - ta), 0.0, 1.0) : 1.0;
      saved_[order_[next_]] = w == 0.0 ? ua : w == 1.0 ? ub : Vec<Scalar>((Scalar(1) - Scalar(w)) * ua + Scalar(w) * ub);
      ++next_;
    }
  }

  void at_start(double t0, const Vec<Scalar>& u0) {
    while (next_ < order_.size() && save_at_[order_[next_]] <= t0) {
      saved_[order_[next_]] = u0;
      ++next_;
    }
  }

 private:
  const std::vector<double>& save_at_;
  std::vector<Vec<Scalar>>& saved_;
  std::vector<std::size_t> order_;
  std::size_t next_ = 0;
};

template <typename Scalar>
double scaled_rms(const Vec<Scalar>& err, const Vec<Scalar>& ua, const Vec<Scalar>& ub, double rtol,
                  double atol) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < err.size(); ++i) {
    const double sc = atol + rtol * std::max(std::abs(double(ua[i])), std::abs(double(ub[i])));
    const double r = double(err[i]) / sc;
    acc += r * r;
  }
  return std::sqrt(acc / double(std::max<Eigen::Index>(err.size(), 1)));
}

}  // namespace detail

/// Integrates du/dt = f(u, t) over [t_span.first, t_span.second]. f returns
/// Vec<Scalar> and may throw SolverFailure. Non-finite states, step underflow
/// and exhausting max_steps yield status failed; never throws.
template <typename Scalar, typename F>
  requires std::invocable<F&, const Vec<Scalar>&, double>
SolveOutcome<Scalar> integrate(F&& f, const Vec<Scalar>& u0, std::pair<double, double> t_span,
                               const std::vector<double>& save_at, const IntegratorConfig& cfg) {
  SolveOutcome<Scalar> out;
  const auto [t0, t1] = t_span;
  auto fail = [&](double t, std::string why) {
    out.status = SolveStatus::failed;
    out.failure_time = t;
    out.failure_reason = std::move(why);
    out.saved.clear();
    out.terminal.resize(0);
    return out;
  };
  if (!(t1 > t0)) return fail(t0, "empty time span");
  if (!u0.allFinite()) return fail(t0, "non-finite initial state");
  for (double ts : save_at)
    if (ts < t0 - 1e-12 || ts > t1 + 1e-12) return fail(t0, "save time outside the time span");

  auto eval = [&](const Vec<Scalar>& u, double t) {
    ++out.stats.rhs_evals;
    return f(u, t);
  };

  detail::SaveCursor<Scalar> cursor(save_at, out.saved);
  cursor.at_start(t0, u0);
  Vec<Scalar> u = u0;
  double t = t0;

  try {
    if (cfg.method == IntegratorMethod::rk4_fixed) {
      const std::vector<double> times = fixed_step_times(t0, t1, cfg.dt);
      if (long(times.size()) - 1 > cfg.max_steps) return fail(t0, "step budget exceeded");
      for (std::size_t k = 0; k + 1 < times.size(); ++k) {
        Vec<Scalar> next = rk4_step<Scalar>(eval, u, times[k], times[k + 1] - times[k]);
        ++out.stats.steps;
        if (!next.allFinite()) return fail(times[k + 1], "non-finite state");
        cursor.advance(times[k], u, times[k + 1], next, k + 2 == times.size());
        u = std::move(next);
        t = times[k + 1];
      }
    } else {
      using T = detail::Tsit5Tableau;
      const double span = t1 - t0;
      Vec<Scalar> k1 = eval(u, t);
      double h;
      {
        const double d0 = detail::scaled_rms<Scalar>(u, u, u, cfg.rtol, cfg.atol);
        const double d1 = detail::scaled_rms<Scalar>(k1, u, u, cfg.rtol, cfg.atol);
        h = (d0 > 1e-5 && d1 > 1e-5) ? 0.01 * d0 / d1 : 1e-6 * span;
        h = std::clamp(h, 1e-10 * span, span);
      }
      double err_prev = 1e-4;
      bool rejected_last = false;
      long attempts = 0;
      while (t < t1) {
        if (++attempts > cfg.max_steps) return fail(t, "step budget exceeded");
        const bool final_step = t + h >= t1 - 1e-12 * std::max(1.0, std::abs(t1));
        if (final_step) h = t1 - t;
        if (h <= 16.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(t)))
          return fail(t, "step size underflow");

        const Scalar hs = Scalar(h);
        const Vec<Scalar> k2 = eval(u + hs * Scalar(T::a21) * k1, t + T::c2 * h);
        const Vec<Scalar> k3 = eval(u + hs * (Scalar(T::a31) * k1 + Scalar(T::a32) * k2), t + T::c3 * h);
        const Vec<Scalar> k4 = eval(
            u + hs * (Scalar(T::a41) * k1 + Scalar(T::a42) * k2 + Scalar(T::a43) * k3), t + T::c4 * h);
        const Vec<Scalar> k5 = eval(u + hs * (Scalar(T::a51) * k1 + Scalar(T::a52) * k2 +
                                              Scalar(T::a53) * k3 + Scalar(T::a54) * k4),
                                    t + T::c5 * h);
        const Vec<Scalar> k6 = eval(u + hs * (Scalar(T::a61) * k1 + Scalar(T::a62) * k2 +
                                              Scalar(T::a63) * k3 + Scalar(T::a64) * k4 +
                                              Scalar(T::a65) * k5),
                                    t + h);
        Vec<Scalar> next = u + hs * (Scalar(T::a71) * k1 + Scalar(T::a72) * k2 + Scalar(T::a73) * k3 +
                                     Scalar(T::a74) * k4 + Scalar(T::a75) * k5 + Scalar(T::a76) * k6);
        bool finite = next.allFinite();
        Vec<Scalar> k7;
        double err = std::numeric_limits<double>::infinity();
        if (finite) {
          k7 = eval(next, t + h);
          finite = k7.allFinite();
        }
        if (finite) {
          const Vec<Scalar> e = hs * (Scalar(T::e1) * k1 + Scalar(T::e2) * k2 + Scalar(T::e3) * k3 +
                                      Scalar(T::e4) * k4 + Scalar(T::e5) * k5 + Scalar(T::e6) * k6 +
                                      Scalar(T::e7) * k7);
          err = detail::scaled_rms<Scalar>(e, u, next, cfg.rtol, cfg.atol);
          if (!std::isfinite(err)) err = std::numeric_limits<double>::infinity();
        }

        if (err <= 1.0) {
          ++out.stats.steps;
          const double t_next = final_step ? t1 : t + h;
          cursor.advance(t, u, t_next, next, final_step);
          u = std::move(next);
          k1 = std::move(k7);
          t = t_next;
          const double e = std::max(err, 1e-10);
          double fac = 0.9 * std::pow(e, -0.7 / 5.0) * std::pow(err_prev, 0.4 / 5.0);
          fac = std::clamp(fac, 0.2, 10.0);
          if (rejected_last) fac = std::min(fac, 1.0);
          h *= fac;
          err_prev = e;
          rejected_last = false;
        } else {
          ++out.stats.rejected;
          const double fac = std::isfinite(err) ? std::max(0.2, 0.9 * std::pow(err, -0.2)) : 0.25;
          h *= fac;
          rejected_last = true;
        }
      }
    }
  } catch (const SolverFailure& e) {
    return fail(e.time(), e.what());
  }

  out.terminal = std::move(u);
  return out;
}

template <typename Scalar>
SolveOutcome<Scalar> integrate(const RhsContext<Scalar>& ctx, const Vec<Scalar>& u0,
                               std::pair<double, double> t_span, const std::vector<double>& save_at,
                               const IntegratorConfig& cfg) {
  auto f = [&ctx](const Vec<Scalar>& u, double t) { return rhs<Scalar>(u, t, ctx); };
  return integrate<Scalar>(f, u0, t_span, save_at, cfg);
}

/// integrate() behind a catch-all: any exception becomes a failed outcome
/// with its message as the reason.
template <typename Scalar, typename F>
  requires std::invocable<F&, const Vec<Scalar>&, double>
SolveOutcome<Scalar> safe_solve(F&& f, const Vec<Scalar>& u0, std::pair<double, double> t_span,
                                const std::vector<double>& save_at, const IntegratorConfig& cfg) noexcept {
  try {
    return integrate<Scalar>(std::forward<F>(f), u0, t_span, save_at, cfg);
  } catch (const std::exception& e) {
    SolveOutcome<Scalar> out;
    out.status = SolveStatus::failed;
    out.failure_time = t_span.first;
    out.failure_reason = e.what();
    return out;
  } catch (...) {
    SolveOutcome<Scalar> out;
    out.status = SolveStatus::failed;
    out.failure_time = t_span.first;
    out.failure_reason = "unknown error";
    return out;
  }
}

template <typename Scalar>
SolveOutcome<Scalar> safe_solve(const RhsContext<Scalar>& ctx, const Vec<Scalar>& u0,
                                std::pair<double, double> t_span, const std::vector<double>& save_at,
                                const IntegratorConfig& cfg) noexcept {
  auto f = [&ctx](const Vec<Scalar>& u, double t) { return rhs<Scalar>(u, t, ctx); };
  return safe_solve<Scalar>(f, u0, t_span, save_at, cfg);
}

}  // namespace socude

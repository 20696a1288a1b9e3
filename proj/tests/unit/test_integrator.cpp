/// @file test_integrator.cpp
/// @brief Fixed-step RK4, adaptive Tsit5 and the failure-safe wrapper.

#include <gtest/gtest.h>

#include <cmath>

#include "soc_ude/integrator.hpp"
#include "soc_ude/synthetic.hpp"

using namespace socude;

namespace {

auto decay = [](const Eigen::VectorXd& u, double) -> Eigen::VectorXd { return -u; };

double decay_error(const IntegratorConfig& cfg) {
  const Eigen::VectorXd u0 = Eigen::VectorXd::Constant(4, 2.0);
  const auto out = integrate<double>(decay, u0, {0.0, 1.0}, {}, cfg);
  EXPECT_TRUE(out.ok());
  return std::abs(out.terminal[0] - 2.0 * std::exp(-1.0));
}

struct Diffusion {
  DepthGrid grid = make_grid(30, 0.0, 1.0);
  RhsContext<double> ctx;
  Diffusion(double d, double v) {
    ctx.grid = &grid;
    ctx.transport = {d, v};
  }
};

}  // namespace

TEST(StepTimes, LastStepTruncated) {
  const auto t = fixed_step_times(0.0, 1.0, 0.3);
  ASSERT_EQ(t.size(), 5u);
  EXPECT_DOUBLE_EQ(t[3], 0.9);
  EXPECT_EQ(t.back(), 1.0);
  EXPECT_EQ(fixed_step_times(0.0, 50.0, 0.1).size(), 501u);
  EXPECT_EQ(fixed_step_times(0.0, 50.0, 0.1).back(), 50.0);
}

TEST(StepTimes, Bracket) {
  const std::vector<double> t{0.0, 1.0, 2.0};
  auto [j, w] = bracket(t, 1.25);
  EXPECT_EQ(j, 1u);
  EXPECT_DOUBLE_EQ(w, 0.25);
  std::tie(j, w) = bracket(t, 5.0);
  EXPECT_EQ(j, 1u);
  EXPECT_DOUBLE_EQ(w, 1.0);
}

TEST(Integrate, ZeroRhsKeepsState) {
  const Eigen::VectorXd u0 = Eigen::VectorXd::LinSpaced(5, 1.0, 2.0);
  auto zero = [](const Eigen::VectorXd& u, double) -> Eigen::VectorXd { return Eigen::VectorXd::Zero(u.size()); };
  for (const IntegratorConfig& cfg : {IntegratorConfig::rk4(0.1), IntegratorConfig::adaptive(1e-6, 1e-6)}) {
    const auto out = integrate<double>(zero, u0, {0.0, 50.0}, {}, cfg);
    ASSERT_TRUE(out.ok());
    EXPECT_EQ(out.terminal, u0);
  }
}

TEST(Integrate, ExponentialDecay) {
  const double want = 2.0 * std::exp(-1.0);
  EXPECT_LE(decay_error(IntegratorConfig::adaptive(1e-6, 1e-6)) / want, 1e-6);
  EXPECT_LE(decay_error(IntegratorConfig::rk4(0.1)) / want, 1e-6);
}

TEST(Integrate, Rk4FourthOrder) {
  const double e1 = decay_error(IntegratorConfig::rk4(0.1));
  const double e2 = decay_error(IntegratorConfig::rk4(0.05));
  const double e3 = decay_error(IntegratorConfig::rk4(0.025));
  EXPECT_GE(std::log2(e1 / e2), 3.9);
  EXPECT_GE(std::log2(e2 / e3), 3.9);
}

TEST(Integrate, TighterToleranceIsMoreAccurate) {
  const double loose = decay_error(IntegratorConfig::adaptive(1e-4, 1e-4));
  const double mid = decay_error(IntegratorConfig::adaptive(1e-6, 1e-6));
  const double tight = decay_error(IntegratorConfig::adaptive(1e-8, 1e-8));
  EXPECT_LE(mid, loose);
  EXPECT_LE(tight, mid);
}

TEST(Integrate, FixedAndAdaptiveAgree) {
  Diffusion p(1e-3, 1e-3);
  const Eigen::VectorXd u0 = initial_soc(p.grid).values;
  const auto a = integrate<double>(p.ctx, u0, {0.0, 50.0}, {}, IntegratorConfig::rk4(0.1));
  const auto b = integrate<double>(p.ctx, u0, {0.0, 50.0}, {}, IntegratorConfig::adaptive(1e-8, 1e-8));
  ASSERT_TRUE(a.ok() && b.ok());
  EXPECT_LE((a.terminal - b.terminal).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(Integrate, PureDiffusionConservesMass) {
  Diffusion p(1e-3, 0.0);
  const Eigen::VectorXd u0 = initial_soc(p.grid).values;
  const double m0 = profile_mass(u0, p.grid.dz);
  for (const IntegratorConfig& cfg : {IntegratorConfig::rk4(0.1), IntegratorConfig::adaptive(1e-6, 1e-6)}) {
    const auto out = integrate<double>(p.ctx, u0, {0.0, 50.0}, {}, cfg);
    ASSERT_TRUE(out.ok());
    EXPECT_LE(std::abs(profile_mass(out.terminal, p.grid.dz) - m0) / m0, 1e-6);
  }
}

TEST(Integrate, SavedStatesInRequestOrder) {
  const Eigen::VectorXd u0 = Eigen::VectorXd::Ones(3);
  const auto out = integrate<double>(decay, u0, {0.0, 2.0}, {2.0, 0.0, 1.0}, IntegratorConfig::rk4(0.01));
  ASSERT_TRUE(out.ok());
  ASSERT_EQ(out.saved.size(), 3u);
  EXPECT_EQ(out.saved[0], out.terminal);
  EXPECT_EQ(out.saved[1], u0);
  EXPECT_NEAR(out.saved[2][0], std::exp(-1.0), 1e-9);
}

TEST(Integrate, StepBudgetExhausted) {
  IntegratorConfig cfg = IntegratorConfig::rk4(0.1);
  cfg.max_steps = 10;
  const auto out = integrate<double>(decay, Eigen::VectorXd::Ones(2), {0.0, 5.0}, {}, cfg);
  EXPECT_FALSE(out.ok());
  IntegratorConfig ad = IntegratorConfig::adaptive(1e-10, 1e-10);
  ad.max_steps = 3;
  EXPECT_FALSE(integrate<double>(decay, Eigen::VectorXd::Ones(2), {0.0, 5.0}, {}, ad).ok());
}

TEST(Integrate, InvalidConfig) {
  EXPECT_THROW(IntegratorConfig::rk4(0.0).validate(), std::invalid_argument);
  EXPECT_THROW(IntegratorConfig::adaptive(-1.0, 1e-6).validate(), std::invalid_argument);
}

TEST(SafeSolve, InjectedFaultReportsTime) {
  Diffusion p(1e-3, 1e-3);
  p.ctx.fault_time = 10.0;
  const Eigen::VectorXd u0 = initial_soc(p.grid).values;
  for (const IntegratorConfig& cfg : {IntegratorConfig::rk4(0.1), IntegratorConfig::adaptive(1e-6, 1e-6)}) {
    const auto out = safe_solve<double>(p.ctx, u0, {0.0, 50.0}, {}, cfg);
    EXPECT_FALSE(out.ok());
    EXPECT_NEAR(out.failure_time, 10.0, 0.5);
    EXPECT_FALSE(out.failure_reason.empty());
  }
}

TEST(SafeSolve, ExceptionBecomesFailure) {
  auto boom = [](const Eigen::VectorXd&, double t) -> Eigen::VectorXd {
    if (t > 0.5) throw std::runtime_error("boom");
    return Eigen::VectorXd::Zero(2);
  };
  const auto out = safe_solve<double>(boom, Eigen::VectorXd::Ones(2), {0.0, 1.0}, {}, IntegratorConfig::rk4(0.1));
  EXPECT_FALSE(out.ok());
  EXPECT_EQ(out.failure_reason, "boom");
}

TEST(SafeSolve, HealthyIsBitwisePassThrough) {
  Diffusion p(1e-3, 1e-3);
  const Eigen::VectorXd u0 = initial_soc(p.grid).values;
  const IntegratorConfig cfg = IntegratorConfig::adaptive(1e-6, 1e-6);
  const auto a = integrate<double>(p.ctx, u0, {0.0, 50.0}, {25.0}, cfg);
  const auto b = safe_solve<double>(p.ctx, u0, {0.0, 50.0}, {25.0}, cfg);
  ASSERT_TRUE(a.ok() && b.ok());
  EXPECT_EQ(a.terminal, b.terminal);
  EXPECT_EQ(a.saved[0], b.saved[0]);
  EXPECT_EQ(a.stats.steps, b.stats.steps);
}

/// @file test_gradient.cpp
/// @brief Composite loss, collocation residual and the reverse sweep through RK4.

#include <gtest/gtest.h>

#include <cmath>

#include "soc_ude/gradient.hpp"

using namespace socude;

namespace {

Dataset clean_dataset() { return build_case_dataset(DataSpec{}, SimulationConfig{}); }

// Terminal target equal to the zero-source RK4 trajectory, bit for bit.
Dataset exact_baseline() {
  Dataset d = clean_dataset();
  RhsContext<double> ctx;
  ctx.grid = &d.grid;
  ctx.transport = d.transport;
  const auto out = integrate<double>(ctx, d.initial_profile.values, {0.0, 50.0}, {}, IntegratorConfig::rk4(0.1));
  d.target_profile.values = out.terminal;
  return d;
}

LossConfig weights(double term, double coll, double wd) {
  LossConfig c;
  c.lambda_term = term;
  c.lambda_coll = coll;
  c.lambda_wd = wd;
  return c;
}

}  // namespace

// ---------------------------------------------------------------- terminal term

TEST(TerminalMse, Examples) {
  Eigen::VectorXd a(2), b(2);
  a << 1, 2;
  b << 2, 4;
  EXPECT_DOUBLE_EQ(terminal_mse(a, b), 2.5);
  EXPECT_EQ(terminal_mse(a, a), 0.0);
  EXPECT_THROW(terminal_mse(a, Eigen::VectorXd::Zero(3)), std::invalid_argument);
}

// ---------------------------------------------------------------- collocation

TEST(Stencil, CentralInside) {
  const DerivativeStencil s = derivative_stencil(20.0, 0.25, 0.0, 50.0);
  ASSERT_EQ(s.size, 2);
  EXPECT_DOUBLE_EQ(s.coeffs[0] + s.coeffs[1], 0.0);
  EXPECT_DOUBLE_EQ(s.times[0], 20.25);
  EXPECT_DOUBLE_EQ(s.times[1], 19.75);
}

TEST(Stencil, OneSidedAtEnds) {
  const DerivativeStencil back = derivative_stencil(50.0, 0.25, 0.0, 50.0);
  ASSERT_EQ(back.size, 3);
  EXPECT_NEAR(back.coeffs[0] + back.coeffs[1] + back.coeffs[2], 0.0, 1e-15);
  const DerivativeStencil fwd = derivative_stencil(0.0, 0.25, 0.0, 50.0);
  ASSERT_EQ(fwd.size, 3);
  EXPECT_GT(fwd.times[2], fwd.times[0]);
  // Both are exact for quadratics.
  for (const DerivativeStencil& s : {back, fwd}) {
    double d = 0.0;
    for (int j = 0; j < 3; ++j) d += s.coeffs[j] * s.times[j] * s.times[j];
    EXPECT_NEAR(d, 2.0 * s.times[0], 1e-9);
  }
}

TEST(Stencil, Nodes) {
  EXPECT_EQ(collocation_nodes(30, 3), (std::vector<int>{0, 3, 6, 9, 12, 15, 18, 21, 24, 27}));
  EXPECT_EQ(collocation_nodes(5, 1).size(), 5u);
}

TEST(Collocation, LinearInTimeStub) {
  Trajectory<double> traj;
  const Eigen::VectorXd a = Eigen::VectorXd::LinSpaced(6, 1.0, 2.0);
  const Eigen::VectorXd b = Eigen::VectorXd::LinSpaced(6, -0.3, 0.4);
  for (int k = 0; k <= 500; ++k) {
    const double t = 0.1 * k;
    traj.times.push_back(t);
    traj.states.push_back(a + t * b);
  }
  auto f = [&](const Eigen::VectorXd&, double) -> Eigen::VectorXd { return b; };
  EXPECT_LE(collocation_residual(traj, f, {10, 20, 30, 40, 50}, 1, 0.25), 1e-8);
  EXPECT_EQ(collocation_residual(traj, f, {}, 1, 0.25), 0.0);
}

TEST(Collocation, CleanBaselineIsSmall) {
  const Dataset d = clean_dataset();
  const auto p = zero_params<double>(MlpSpec{});
  EXPECT_LE(collocation_residual(p, d, LossConfig{}), 1e-4);
}

// ---------------------------------------------------------------- composite loss

TEST(Loss, WeightDecayOnly) {
  const Dataset d = exact_baseline();
  const auto p = init_params<double>(MlpSpec{8, 4, Activation::tanh}, RandomStream(1, "wd"));
  const LossBreakdown l = evaluate_loss(p, d, weights(1.0, 0.0, 1e-4));
  EXPECT_NEAR(l.total, 1e-4 * p.flatten().squaredNorm() + l.terminal, 1e-15);
}

TEST(Loss, PerfectFitLeavesWeightDecay) {
  const Dataset d = exact_baseline();
  const auto z = zero_params<double>(MlpSpec{8, 4, Activation::tanh});
  const LossBreakdown l = evaluate_loss(z, d, weights(1.0, 0.0, 1e-4));
  EXPECT_EQ(l.terminal, 0.0);
  EXPECT_EQ(l.total, 0.0);
}

TEST(Loss, AllWeightsZero) {
  const Dataset d = clean_dataset();
  const auto p = init_params<double>(MlpSpec{8, 4, Activation::tanh}, RandomStream(1, "z"));
  EXPECT_EQ(total_loss(p, d, weights(0, 0, 0)), 0.0);
}

TEST(Loss, ForcedFailure) {
  const Dataset d = clean_dataset();
  const auto p = init_params<double>(MlpSpec{8, 4, Activation::tanh}, RandomStream(1, "f"));
  GradientOptions opts;
  opts.fault_time = 10.0;
  const LossBreakdown l = evaluate_loss(p, d, LossConfig{}, opts);
  EXPECT_TRUE(l.solver_failed);
  EXPECT_EQ(l.total, kFailureLoss);
  const auto g = loss_and_grad(p, d, LossConfig{}, opts);
  EXPECT_TRUE(g.solver_failed);
  EXPECT_EQ(g.loss, 1e6);
  ASSERT_EQ(g.grad.size(), p.size());
  EXPECT_EQ(g.grad.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Loss, RejectsNegativeWeights) {
  EXPECT_THROW(weights(-1, 0, 0).validate(), std::invalid_argument);
  LossConfig c;
  c.collocation_stride = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

// ---------------------------------------------------------------- gradients

TEST(Gradient, WeightDecayOnlyIsTwoTheta) {
  const Dataset d = clean_dataset();
  const auto p = init_params<double>(MlpSpec{8, 4, Activation::gelu}, RandomStream(2, "wd"));
  const auto g = loss_and_grad(p, d, weights(0, 0, 1));
  EXPECT_EQ(g.grad, (2.0 * p.flatten()).eval());
}

TEST(Gradient, ZeroAtExactBaseline) {
  const Dataset d = exact_baseline();
  const auto z = zero_params<double>(MlpSpec{32, 16, Activation::tanh});
  const auto g = loss_and_grad(z, d, weights(1, 0, 0));
  EXPECT_FALSE(g.solver_failed);
  EXPECT_LE(g.grad.norm(), 1e-8);
}

TEST(Gradient, QuadraticProbe) {
  Eigen::VectorXd e1 = Eigen::VectorXd::Zero(4);
  e1[0] = 1.0;
  auto q = [](const Eigen::VectorXd& x) { return x.squaredNorm(); };
  EXPECT_NEAR(finite_diff_grad(q, e1, {0}, 1e-6)[0], 2.0, 1e-8);
}

TEST(Gradient, MatchesFiniteDifferences) {
  const GradCheckResult r = gradient_check(make_gradcheck_problem(7), 20, 1e-6, 7);
  EXPECT_EQ(r.coords.size(), 20u);
  EXPECT_LE(r.max_rel_error, 1e-5);
}

TEST(Gradient, MatchesFiniteDifferencesFullProblem) {
  Dataset d = clean_dataset();
  d.target_profile.values *= 1.05;
  const auto p = init_params<double>(MlpSpec{6, 4, Activation::gelu}, RandomStream(5, "full"));
  const LossConfig cfg = weights(1.0, 1.0, 1e-3);
  const auto g = loss_and_grad(p, d, cfg);
  const std::vector<Eigen::Index> coords{0, 9, 40, 61, 70, 100, 131, 140};
  const Eigen::VectorXd fd = finite_diff_grad(p, d, cfg, GradientOptions{}, coords, 1e-6);
  for (std::size_t k = 0; k < coords.size(); ++k) {
    const double a = g.grad[coords[k]], n = fd[Eigen::Index(k)];
    EXPECT_LE(std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8}), 1e-5) << coords[k];
  }
}

TEST(Gradient, Deterministic) {
  const GradCheckProblem pb = make_gradcheck_problem(3);
  const auto a = loss_and_grad(pb.params, pb.data, pb.loss, pb.options);
  const auto b = loss_and_grad(pb.params, pb.data, pb.loss, pb.options);
  EXPECT_EQ(a.grad, b.grad);
  EXPECT_EQ(a.loss, b.loss);
}

TEST(Gradient, StoredAndRecomputedStagesAgree) {
  const GradCheckProblem pb = make_gradcheck_problem(4);
  GradientOptions rec = pb.options;
  rec.adjoint = AdjointMode::recompute_stages;
  const auto a = loss_and_grad(pb.params, pb.data, pb.loss, pb.options);
  const auto b = loss_and_grad(pb.params, pb.data, pb.loss, rec);
  EXPECT_EQ(a.grad, b.grad);
  EXPECT_EQ(a.loss, b.loss);
}

TEST(Gradient, LossMatchesForwardEvaluation) {
  const GradCheckProblem pb = make_gradcheck_problem(5);
  const auto g = loss_and_grad(pb.params, pb.data, pb.loss, pb.options);
  EXPECT_EQ(g.loss, total_loss(pb.params, pb.data, pb.loss, pb.options));
}

TEST(Gradient, SinglePrecisionIsClose) {
  const GradCheckProblem pb = make_gradcheck_problem(6);
  const auto gd = loss_and_grad(pb.params, pb.data, pb.loss, pb.options);
  const auto gf = loss_and_grad(pb.params.cast<float>(), pb.data, pb.loss, pb.options);
  EXPECT_NEAR(gf.loss, gd.loss, 1e-4 * std::abs(gd.loss));
  EXPECT_LE((gf.grad.cast<double>() - gd.grad).norm(), 1e-3 * gd.grad.norm());
}

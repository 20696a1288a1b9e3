/// @file test_mlp_dynamics.cpp
/// @brief Neural source terms and the method-of-lines right-hand side.

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "soc_ude/dynamics.hpp"

using namespace socude;

namespace {

// Plain-loop forward pass used as an oracle for the Eigen implementation.
double oracle_forward(const MlpSpec& s, const Eigen::VectorXd& th, const Eigen::VectorXd& x) {
  const LayerOffsets o = layer_offsets(s);
  auto act = [&](double z) {
    if (s.activation == Activation::tanh) return std::tanh(z);
    const double c = std::sqrt(2.0 / std::numbers::pi);
    return 0.5 * z * (1.0 + std::tanh(c * (z + 0.044715 * z * z * z)));
  };
  std::vector<double> a1(s.h1), a2(s.h2);
  for (int r = 0; r < s.h1; ++r) {
    double z = th[o.b1 + r];
    for (int c = 0; c < 6; ++c) z += th[o.w1 + c * s.h1 + r] * x[c];
    a1[r] = act(z);
  }
  for (int r = 0; r < s.h2; ++r) {
    double z = th[o.b2 + r];
    for (int c = 0; c < s.h1; ++c) z += th[o.w2 + c * s.h2 + r] * a1[c];
    a2[r] = act(z);
  }
  double z = th[o.b3];
  for (int c = 0; c < s.h2; ++c) z += th[o.w3 + c] * a2[c];
  return std::log1p(std::exp(z));
}

Eigen::VectorXd pinned_theta(const MlpSpec& s) {
  Eigen::VectorXd th(s.param_count());
  for (Eigen::Index k = 0; k < th.size(); ++k) th[k] = 0.4 * std::sin(0.7 * double(k) + 0.3);
  return th;
}

Eigen::VectorXd pinned_input() {
  Eigen::VectorXd x(6);
  x << 0.3, -0.2, 0.5, -1.0, 0.25, 0.8;
  return x;
}

Eigen::VectorXd vec3(double a, double b, double c) {
  Eigen::VectorXd v(3);
  v << a, b, c;
  return v;
}

}  // namespace

// ---------------------------------------------------------------- networks

TEST(Mlp, LayoutSizes) {
  const MlpSpec s{32, 16, Activation::tanh};
  EXPECT_EQ(s.param_count(), 32 * 6 + 32 + 16 * 32 + 16 + 16 + 1);
  const LayerOffsets o = layer_offsets(s);
  EXPECT_EQ(o.w1, 0);
  EXPECT_EQ(o.b1, 192);
  EXPECT_EQ(o.total, s.param_count());
  EXPECT_THROW((MlpSpec{0, 4, Activation::tanh}.validate()), std::invalid_argument);
}

TEST(Mlp, ZeroWeightsGiveLn2) {
  const MlpSpec s{8, 4, Activation::tanh};
  const Eigen::VectorXd th = Eigen::VectorXd::Zero(s.param_count());
  EXPECT_NEAR(forward<double>(s, th, pinned_input()), std::log(2.0), 1e-15);
  EXPECT_NEAR(std::log(2.0), 0.693147, 1e-6);
}

TEST(Mlp, OutputIsNonNegative) {
  for (Activation a : {Activation::tanh, Activation::gelu}) {
    const MlpSpec s{6, 5, a};
    Eigen::VectorXd th = -5.0 * pinned_theta(s).cwiseAbs();
    EXPECT_GE(forward<double>(s, th, pinned_input()), 0.0);
  }
}

TEST(Mlp, GoldenVectorMatchesOracle) {
  for (Activation a : {Activation::tanh, Activation::gelu}) {
    const MlpSpec s{5, 3, a};
    const Eigen::VectorXd th = pinned_theta(s);
    const double got = forward<double>(s, th, pinned_input());
    const double want = oracle_forward(s, th, pinned_input());
    EXPECT_NEAR(got, want, 1e-12 * std::abs(want)) << to_string(a);
  }
}

TEST(Mlp, RejectsNonFiniteInput) {
  const MlpSpec s{4, 4, Activation::tanh};
  Eigen::VectorXd x = pinned_input();
  x[2] = std::nan("");
  EXPECT_THROW(forward<double>(s, Eigen::VectorXd::Zero(s.param_count()), x), std::invalid_argument);
}

TEST(Mlp, InitIsDeterministic) {
  const MlpSpec s{32, 16, Activation::gelu};
  const auto a = init_params<double>(s, RandomStream(7, "init"));
  const auto b = init_params<double>(s, RandomStream(7, "init"));
  EXPECT_EQ(a.flatten(), b.flatten());
  EXPECT_NE(a.production, a.respiration);
  const LayerOffsets o = layer_offsets(s);
  EXPECT_EQ(a.production.segment(o.b1, s.h1).cwiseAbs().maxCoeff(), 0.0);
  const double limit = std::sqrt(6.0 / (6 + 32));
  EXPECT_LE(a.production.segment(o.w1, 6 * 32).cwiseAbs().maxCoeff(), limit);
}

TEST(Mlp, FlattenRoundTrip) {
  const MlpSpec s{4, 3, Activation::tanh};
  const auto p = init_params<double>(s, RandomStream(1, "x"));
  const auto q = UdeParams<double>::unflatten(s, p.flatten());
  EXPECT_EQ(p.production, q.production);
  EXPECT_EQ(p.respiration, q.respiration);
  EXPECT_THROW(UdeParams<double>::unflatten(s, Eigen::VectorXd::Zero(3)), std::invalid_argument);
}

TEST(NetSource, SymmetricAndZeroCases) {
  const MlpSpec s{6, 4, Activation::tanh};
  const ModelConfig m;
  const DriverSample d = clean_drivers_at(0.3, 2.0);
  UdeParams<double> same{s, pinned_theta(s), pinned_theta(s)};
  EXPECT_EQ(net_source(same, m, 0.8, d, 0.3, 2.0), 0.0);
  EXPECT_EQ(net_source(zero_params<double>(s), m, 0.8, d, 0.3, 2.0), 0.0);
}

TEST(NetSource, GoldenDifference) {
  const MlpSpec s{5, 3, Activation::gelu};
  const ModelConfig m;
  UdeParams<double> p{s, pinned_theta(s), -0.5 * pinned_theta(s)};
  const DriverSample d = clean_drivers_at(0.4, 3.0);
  const Eigen::VectorXd x = scaled_features<double>(m.scaling, d.ph, 0.7, d.cec, d.clay, 0.4, 3.0);
  const double want = m.rate_scale * (oracle_forward(s, p.production, x) - oracle_forward(s, p.respiration, x));
  EXPECT_NEAR(net_source(p, m, 0.7, d, 0.4, 3.0), want, 1e-12 * std::abs(want));
}

// ---------------------------------------------------------------- finite differences

TEST(Derivatives, SecondDerivativeExample) {
  const Eigen::VectorXd d2 = second_derivative<double>(vec3(1, 2, 4), 1.0);
  EXPECT_EQ(d2, vec3(2, 1, -4));
}

TEST(Derivatives, FirstDerivativeExample) {
  const Eigen::VectorXd d1 = first_derivative<double>(vec3(1, 2, 4), 1.0);
  EXPECT_EQ(d1, vec3(0, 1.5, 0));
}

TEST(Derivatives, ConstantProfile) {
  const Eigen::VectorXd c = Eigen::VectorXd::Constant(7, 3.3);
  EXPECT_EQ(second_derivative<double>(c, 0.1).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(first_derivative<double>(c, 0.1).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Derivatives, LinearProfile) {
  const DepthGrid g = make_grid(30, 0.0, 1.0);
  const Eigen::VectorXd u = (0.7 + 2.5 * g.nodes.array()).matrix();
  const Eigen::VectorXd d2 = second_derivative<double>(u, g.dz);
  const Eigen::VectorXd d1 = first_derivative<double>(u, g.dz);
  for (int i = 1; i + 1 < g.nz; ++i) {
    EXPECT_NEAR(d2[i], 0.0, 1e-10);
    EXPECT_NEAR(d1[i], 2.5, 1e-10);
  }
}

TEST(Derivatives, TooShort) {
  Eigen::VectorXd u(2);
  u << 1, 2;
  EXPECT_THROW(second_derivative<double>(u, 1.0), std::invalid_argument);
  EXPECT_THROW(first_derivative<double>(u, 1.0), std::invalid_argument);
}

TEST(Derivatives, SecondOrderConvergence) {
  // cos(pi z) has zero slope at both ends, matching the reflected ghost nodes.
  auto error = [](int nz) {
    const DepthGrid g = make_grid(nz, 0.0, 1.0);
    const Eigen::VectorXd u = (std::numbers::pi * g.nodes.array()).cos().matrix();
    const Eigen::VectorXd exact = (-std::numbers::pi * std::numbers::pi * u.array()).matrix();
    return (second_derivative<double>(u, g.dz) - exact).cwiseAbs().maxCoeff();
  };
  const double e1 = error(21), e2 = error(41), e3 = error(81);
  EXPECT_GE(std::log2(e1 / e2), 1.9);
  EXPECT_GE(std::log2(e2 / e3), 1.9);
}

// ---------------------------------------------------------------- rhs

namespace {

struct RhsFixture {
  DepthGrid grid;
  DriverField drivers;
  UdeParams<double> params;
  RhsContext<double> ctx;

  explicit RhsFixture(int nz, bool with_params) {
    grid = make_grid(nz, 0.0, 1.0);
    drivers = sample_drivers(grid, {0.0, 25.0, 50.0});
    const MlpSpec s{5, 4, Activation::gelu};
    params = init_params<double>(s, RandomStream(3, "rhs"));
    params.production *= 2.0;
    ctx.grid = &grid;
    ctx.drivers = &drivers;
    ctx.params = with_params ? &params : nullptr;
  }
};

}  // namespace

TEST(Rhs, ConstantStateWithoutSource) {
  RhsFixture f(10, false);
  const Eigen::VectorXd u = Eigen::VectorXd::Constant(10, 0.9);
  EXPECT_EQ(rhs<double>(u, 1.0, f.ctx).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Rhs, TransportExample) {
  DepthGrid g = make_grid(3, 0.0, 2.0);
  ASSERT_EQ(g.dz, 1.0);
  RhsContext<double> ctx;
  ctx.grid = &g;
  ctx.transport = {1.0, 1.0};
  EXPECT_EQ(rhs<double>(vec3(1, 2, 4), 0.0, ctx), vec3(2, -0.5, -4));
}

TEST(Rhs, ZeroParamsEqualTransportOnly) {
  RhsFixture f(12, true);
  const UdeParams<double> z = zero_params<double>(f.params.spec);
  f.ctx.params = &z;
  RhsContext<double> bare = f.ctx;
  bare.params = nullptr;
  const Eigen::VectorXd u = initial_soc(f.grid).values;
  EXPECT_EQ(rhs<double>(u, 7.0, f.ctx), rhs<double>(u, 7.0, bare));
}

TEST(Rhs, NonFiniteStateSignalsFailure) {
  RhsFixture f(6, true);
  Eigen::VectorXd u = Eigen::VectorXd::Ones(6);
  u[3] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(rhs<double>(u, 1.0, f.ctx), SolverFailure);
}

TEST(Rhs, TransportIsLinear) {
  RhsFixture f(15, false);
  f.ctx.transport = {2e-3, 5e-4};
  const Eigen::VectorXd a = initial_soc(f.grid).values;
  const Eigen::VectorXd b = (f.grid.nodes.array() * 3.0).sin().matrix();
  const Eigen::VectorXd lhs = rhs<double>((2.0 * a - 0.5 * b).eval(), 0.0, f.ctx);
  const Eigen::VectorXd rhs_sum = 2.0 * rhs<double>(a, 0.0, f.ctx) - 0.5 * rhs<double>(b, 0.0, f.ctx);
  EXPECT_LE((lhs - rhs_sum).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Rhs, DiffusionConservesTrapezoidMass) {
  RhsFixture f(20, false);
  f.ctx.transport = {1e-2, 0.0};
  const Eigen::VectorXd du = rhs<double>(initial_soc(f.grid).values, 0.0, f.ctx);
  EXPECT_NEAR(profile_mass(du, f.grid.dz), 0.0, 1e-15);
}

TEST(Rhs, VjpMatchesFiniteDifference) {
  RhsFixture f(8, true);
  const Eigen::VectorXd u = initial_soc(f.grid).values;
  Eigen::VectorXd w(8);
  for (int i = 0; i < 8; ++i) w[i] = std::cos(1.3 * i);
  Eigen::VectorXd u_bar = Eigen::VectorXd::Zero(8);
  Eigen::VectorXd th_bar = Eigen::VectorXd::Zero(f.params.size());
  rhs_vjp<double>(u, 4.0, f.ctx, w, u_bar, &th_bar);

  const double h = 1e-6;
  for (int i = 0; i < 8; ++i) {
    Eigen::VectorXd up = u, um = u;
    up[i] += h;
    um[i] -= h;
    const double fd = w.dot(rhs<double>(up, 4.0, f.ctx) - rhs<double>(um, 4.0, f.ctx)) / (2 * h);
    EXPECT_NEAR(u_bar[i], fd, 1e-7 * std::max(1.0, std::abs(fd)));
  }
  const Eigen::VectorXd flat = f.params.flatten();
  for (Eigen::Index k = 0; k < flat.size(); k += 7) {
    Eigen::VectorXd tp = flat, tm = flat;
    tp[k] += h;
    tm[k] -= h;
    const auto pp = UdeParams<double>::unflatten(f.params.spec, tp);
    const auto pm = UdeParams<double>::unflatten(f.params.spec, tm);
    RhsContext<double> cp = f.ctx, cm = f.ctx;
    cp.params = &pp;
    cm.params = &pm;
    const double fd = w.dot(rhs<double>(u, 4.0, cp) - rhs<double>(u, 4.0, cm)) / (2 * h);
    EXPECT_NEAR(th_bar[k], fd, 1e-7 * std::max(1.0, std::abs(fd)));
  }
}

TEST(Rhs, FaultTimeProducesNaN) {
  RhsFixture f(6, false);
  f.ctx.fault_time = 10.0;
  const Eigen::VectorXd u = Eigen::VectorXd::Ones(6);
  EXPECT_TRUE(rhs<double>(u, 9.9, f.ctx).allFinite());
  EXPECT_FALSE(rhs<double>(u, 10.0, f.ctx).allFinite());
}

TEST(Rhs, SinglePrecisionTracksDouble) {
  RhsFixture f(10, true);
  const UdeParams<float> pf = f.params.cast<float>();
  RhsContext<float> cf;
  cf.grid = &f.grid;
  cf.drivers = &f.drivers;
  cf.params = &pf;
  const Eigen::VectorXd u = initial_soc(f.grid).values;
  const Eigen::VectorXf got = rhs<float>(u.cast<float>(), 5.0, cf);
  const Eigen::VectorXd want = rhs<double>(u, 5.0, f.ctx);
  EXPECT_LE((got.cast<double>() - want).cwiseAbs().maxCoeff(), 1e-4 * std::max(1.0, want.cwiseAbs().maxCoeff()));
}

/// @file test_core_synthetic.cpp
/// @brief Grid, random streams, drivers, noise and dataset assembly.

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "soc_ude/synthetic.hpp"

using namespace socude;

// ---------------------------------------------------------------- grid

TEST(DepthGrid, DefaultSpacing) {
  const DepthGrid g = make_grid(30, 0.0, 1.0);
  EXPECT_EQ(g.nz, 30);
  EXPECT_NEAR(g.dz, 1.0 / 29.0, 1e-15);
  EXPECT_NEAR(g.dz, 0.034483, 5e-7);
  EXPECT_DOUBLE_EQ(g.nodes[0], 0.0);
  EXPECT_DOUBLE_EQ(g.nodes[29], 1.0);
  for (int i = 0; i + 1 < g.nz; ++i)
    EXPECT_LE(std::abs(g.nodes[i + 1] - g.nodes[i] - g.dz), 1e-12 * g.dz);
}

TEST(DepthGrid, SmallestGrid) {
  const DepthGrid g = make_grid(3, 0.0, 1.0);
  ASSERT_EQ(g.nodes.size(), 3);
  EXPECT_DOUBLE_EQ(g.nodes[0], 0.0);
  EXPECT_DOUBLE_EQ(g.nodes[1], 0.5);
  EXPECT_DOUBLE_EQ(g.nodes[2], 1.0);
}

TEST(DepthGrid, RejectsDegenerate) {
  EXPECT_THROW(make_grid(2, 0.0, 1.0), std::invalid_argument);
  EXPECT_THROW(make_grid(10, 1.0, 1.0), std::invalid_argument);
  EXPECT_THROW(make_grid(10, 1.0, 0.0), std::invalid_argument);
}

TEST(ProfileMass, TrapezoidWeights) {
  Eigen::VectorXd u(3);
  u << 1.0, 2.0, 4.0;
  EXPECT_DOUBLE_EQ(profile_mass(u, 0.5), 0.5 * (0.5 + 2.0 + 2.0));
}

// ---------------------------------------------------------------- random streams

TEST(RandomStream, EmptyDraw) { EXPECT_EQ(gaussian_draws(RandomStream(42, "noise"), 0).size(), 0); }

TEST(RandomStream, Deterministic) {
  const Eigen::VectorXd a = gaussian_draws(RandomStream(42, "noise"), 5);
  const Eigen::VectorXd b = gaussian_draws(RandomStream(42, "noise"), 5);
  ASSERT_EQ(a.size(), 5);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(RandomStream, Moments) {
  const Eigen::VectorXd x = gaussian_draws(RandomStream(42, "noise"), 100000);
  const double mean = x.mean();
  const double var = (x.array() - mean).square().sum() / double(x.size() - 1);
  EXPECT_NEAR(mean, 0.0, 0.02);
  EXPECT_NEAR(var, 1.0, 0.03);
}

TEST(RandomStream, LabelsAreIndependent) {
  const Eigen::VectorXd a = gaussian_draws(RandomStream(42, "a"), 100000);
  const Eigen::VectorXd b = gaussian_draws(RandomStream(42, "b"), 100000);
  const double corr = ((a.array() - a.mean()) * (b.array() - b.mean())).mean() /
                      std::sqrt((a.array() - a.mean()).square().mean() *
                                (b.array() - b.mean()).square().mean());
  EXPECT_LT(std::abs(corr), 0.02);
  EXPECT_NE(RandomStream(42, "a").key(), RandomStream(42, "b").key());
  EXPECT_NE(RandomStream(42, "a").key(), RandomStream(43, "a").key());
}

TEST(RandomStream, ChildLabel) {
  EXPECT_EQ(RandomStream(1, "data").child("target").label(), "data/target");
}

// ---------------------------------------------------------------- initial profile and drivers

TEST(InitialProfile, ExponentialDecay) {
  const SocProfile p = initial_soc(make_grid(3, 0.0, 1.0));
  EXPECT_DOUBLE_EQ(p.values[0], 1.2);
  EXPECT_NEAR(p.values[1], 0.441455, 1e-6);
  EXPECT_NEAR(p.values[2], 0.162402, 1e-6);
  EXPECT_NEAR(p.values[1], 1.2 * std::exp(-1.0), 1e-14);
  EXPECT_EQ(p.time, 0.0);
}

TEST(Drivers, PhFormula) {
  EXPECT_DOUBLE_EQ(ph_at(0, 0), 6.5);
  EXPECT_DOUBLE_EQ(ph_at(1, 0), 6.0);
  EXPECT_NEAR(ph_at(0.5, 0.25), 6.35, 1e-12);
}

TEST(Drivers, CecFormula) {
  EXPECT_NEAR(cec_at(0, 0), 0.55, 1e-12);
  EXPECT_NEAR(cec_at(0.25, 0), 0.65, 1e-12);
  EXPECT_NEAR(cec_at(0.5, 1.25), 0.5, 1e-12);
}

TEST(Drivers, ClayFormula) {
  EXPECT_NEAR(clay_at(0, 0), 30.0, 1e-12);
  EXPECT_NEAR(clay_at(0.5, 0), 20.0, 1e-12);
  EXPECT_NEAR(clay_at(0.25, 2.5), 25.5, 1e-12);
}

TEST(Drivers, SampledLattice) {
  const DriverField f = sample_drivers(make_grid(3, 0.0, 1.0), {0.0});
  ASSERT_EQ(f.ph().rows(), 1);
  ASSERT_EQ(f.ph().cols(), 3);
  EXPECT_NEAR(f.ph()(0, 0), 6.5, 1e-12);
  EXPECT_NEAR(f.ph()(0, 1), 6.25, 1e-12);
  EXPECT_NEAR(f.ph()(0, 2), 6.0, 1e-12);
  EXPECT_NEAR(f.clay()(0, 0), 30.0, 1e-12);
  EXPECT_NEAR(f.clay()(0, 2), 30.0, 1e-12);
  EXPECT_TRUE(f.is_clean());
}

TEST(Drivers, CleanSampleMatchesFormulaBetweenLatticeTimes) {
  const DepthGrid g = make_grid(5, 0.0, 1.0);
  const DriverField f = sample_drivers(g, {0.0, 10.0, 20.0});
  const DriverSample s = f.sample(2, 10.0);
  EXPECT_NEAR(s.ph, ph_at(0.5, 10.0), 1e-12);
  EXPECT_NEAR(s.cec, cec_at(0.5, 10.0), 1e-12);
  EXPECT_NEAR(s.clay, clay_at(0.5, 10.0), 1e-12);
}

TEST(Drivers, BatchedSampleEqualsPointwise) {
  const DepthGrid g = make_grid(7, 0.0, 1.0);
  const DriverField clean = sample_drivers(g, {0.0, 25.0, 50.0});
  const DriverField noisy =
      corrupt_drivers(clean, NoiseSpec{NoiseKind::multiplicative_ar1, 0.2, 0.8}, RandomStream(3, "drv"));
  for (const DriverField* f : {&clean, &noisy}) {
    for (double t : {0.0, 3.7, 25.0, 49.9, 50.0, 60.0}) {
      const auto all = f->sample_nodes(t);
      for (int i = 0; i < g.nz; ++i) {
        const DriverSample s = f->sample(i, t);
        EXPECT_EQ(all(0, i), s.ph);
        EXPECT_EQ(all(1, i), s.cec);
        EXPECT_EQ(all(2, i), s.clay);
      }
    }
  }
}

// ---------------------------------------------------------------- noise

TEST(Noise, ZeroLevelIsIdentity) {
  Eigen::MatrixXd x(2, 3);
  x << 1, 2, 3, 4, 5, 6;
  NoiseSpec iid{NoiseKind::multiplicative_iid, 0.0};
  NoiseSpec ar1{NoiseKind::multiplicative_ar1, 0.0};
  EXPECT_EQ(apply_noise(x, iid, RandomStream(1, "n")), x);
  EXPECT_EQ(apply_noise(x, ar1, RandomStream(1, "n")), x);
}

TEST(Noise, MultiplicativeFormula) {
  EXPECT_NEAR(2.0 * (1.0 + 0.07 * 1.0), 2.14, 1e-15);
  Eigen::MatrixXd x = Eigen::MatrixXd::Constant(1, 1, 2.0);
  NoiseSpec spec{NoiseKind::multiplicative_iid, 0.07, 0.8, std::nullopt};
  const RandomStream s(3, "n");
  const double eps = gaussian_draws(s, 1)[0];
  EXPECT_NEAR(apply_noise(x, spec, s)(0, 0), 2.0 * (1.0 + 0.07 * eps), 1e-15);
}

TEST(Noise, Ar1WithZeroRhoMatchesIid) {
  const Eigen::MatrixXd x = Eigen::MatrixXd::Constant(3, 7, 1.5);
  NoiseSpec iid{NoiseKind::multiplicative_iid, 0.2, 0.0, std::nullopt};
  NoiseSpec ar1{NoiseKind::multiplicative_ar1, 0.2, 0.0, std::nullopt};
  const RandomStream s(9, "n");
  const Eigen::MatrixXd a = apply_noise(x, iid, s);
  const Eigen::MatrixXd b = apply_noise(x, ar1, s);
  EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Noise, Ar1LagOneCorrelation) {
  const Eigen::Index n = 100000;
  const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(1, n);
  NoiseSpec spec{NoiseKind::multiplicative_ar1, 1.0, 0.8, std::nullopt};
  const Eigen::VectorXd eps = (apply_noise(ones, spec, RandomStream(5, "ar1")).row(0).array() - 1.0).matrix().transpose();
  const double mean = eps.mean();
  const Eigen::ArrayXd c = eps.array() - mean;
  const double lag1 = (c.head(n - 1) * c.tail(n - 1)).sum() / c.square().sum();
  EXPECT_NEAR(lag1, 0.8, 0.02);
  EXPECT_NEAR(c.square().mean(), 1.0, 0.05);
}

TEST(Noise, FloorClipsNegativeValues) {
  const Eigen::MatrixXd x = Eigen::MatrixXd::Constant(1, 1000, 1.0);
  NoiseSpec spec{NoiseKind::multiplicative_iid, 1.0, 0.8, 0.0};
  const Eigen::MatrixXd y = apply_noise(x, spec, RandomStream(1, "n"));
  EXPECT_GE(y.minCoeff(), 0.0);
  EXPECT_EQ(y.minCoeff(), 0.0);
}

TEST(Noise, RejectsInvalidSpec) {
  NoiseSpec bad{NoiseKind::multiplicative_ar1, 0.1, 1.5};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  NoiseSpec neg{NoiseKind::multiplicative_iid, -0.1};
  EXPECT_THROW(neg.validate(), std::invalid_argument);
}

// ---------------------------------------------------------------- clean target

TEST(CleanTarget, ZeroHorizonIsInitialProfile) {
  const DepthGrid g = make_grid(30, 0.0, 1.0);
  const SocProfile t = generate_clean_target(g, TransportParams{}, 0.0);
  EXPECT_EQ(t.values, initial_soc(g).values);
}

TEST(CleanTarget, ZeroDynamicsKeepsProfile) {
  const DepthGrid g = make_grid(30, 0.0, 1.0);
  const SocProfile t = generate_clean_target(g, TransportParams{0.0, 0.0}, 50.0);
  EXPECT_LE((t.values - initial_soc(g).values).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(CleanTarget, PureDiffusionConservesMass) {
  const DepthGrid g = make_grid(30, 0.0, 1.0);
  const SocProfile t = generate_clean_target(g, TransportParams{1e-3, 0.0}, 50.0);
  const double m0 = profile_mass(initial_soc(g).values, g.dz);
  EXPECT_LE(std::abs(profile_mass(t.values, g.dz) - m0) / m0, 1e-6);
  EXPECT_GT((t.values - initial_soc(g).values).cwiseAbs().maxCoeff(), 1e-3);
}

// ---------------------------------------------------------------- datasets

TEST(Dataset, CleanInitialCase) {
  SimulationConfig sim;
  DataSpec spec;
  spec.target_time = 0.0;
  const Dataset d = build_case_dataset(spec, sim);
  EXPECT_TRUE(d.drivers.is_clean());
  EXPECT_EQ(d.target_time, 0.0);
  EXPECT_EQ(d.target_profile.values, initial_soc(d.grid).values);
  EXPECT_EQ(d.initial_profile.values, d.target_profile.values);
}

TEST(Dataset, NoisyCaseKeepsCleanTarget) {
  SimulationConfig sim;
  DataSpec clean;
  DataSpec noisy;
  noisy.driver_noise = NoiseSpec{NoiseKind::multiplicative_ar1, 0.07, 0.8};
  noisy.target_noise = NoiseSpec{NoiseKind::multiplicative_iid, 0.07};
  const Dataset a = build_case_dataset(clean, sim);
  const Dataset b = build_case_dataset(noisy, sim);
  EXPECT_EQ(a.clean_target.values, b.clean_target.values);
  EXPECT_EQ(a.target_profile.values, a.clean_target.values);
  EXPECT_NE(b.target_profile.values, b.clean_target.values);
  EXPECT_FALSE(b.drivers.is_clean());
  EXPECT_EQ(b.drivers.provenance().kind, NoiseKind::multiplicative_ar1);
  EXPECT_DOUBLE_EQ(b.drivers.provenance().level, 0.07);
  EXPECT_EQ(b.target_time, 50.0);
  EXPECT_EQ(b.initial_profile.values, initial_soc(b.grid).values);
}

TEST(Dataset, BitIdenticalForSameSeed) {
  SimulationConfig sim;
  DataSpec spec;
  spec.driver_noise = NoiseSpec{NoiseKind::multiplicative_ar1, 0.35, 0.8};
  spec.target_noise = NoiseSpec{NoiseKind::multiplicative_iid, 0.35};
  spec.seed = 11;
  const Dataset a = build_case_dataset(spec, sim);
  const Dataset b = build_case_dataset(spec, sim);
  EXPECT_EQ(a.target_profile.values, b.target_profile.values);
  EXPECT_EQ(a.drivers.ph(), b.drivers.ph());
  EXPECT_EQ(a.drivers.clay(), b.drivers.clay());
  spec.seed = 12;
  EXPECT_NE(build_case_dataset(spec, sim).target_profile.values, a.target_profile.values);
}

TEST(Dataset, RejectsIntermediateTargetTime) {
  DataSpec spec;
  spec.target_time = 25.0;
  EXPECT_THROW(build_case_dataset(spec, SimulationConfig{}), std::invalid_argument);
}

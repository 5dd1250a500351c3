#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace taplab;
using taplab::testing::Gen;

TEST(GaussHermite, ReproducesNormalMoments) {
  const auto rule = gauss_hermite(61);
  double w = 0, m2 = 0, m4 = 0, m6 = 0, m8 = 0, odd = 0;
  for (std::size_t i = 0; i < rule.size(); ++i) {
    const double x = rule.nodes[i];
    w += rule.weights[i];
    m2 += rule.weights[i] * x * x;
    m4 += rule.weights[i] * std::pow(x, 4);
    m6 += rule.weights[i] * std::pow(x, 6);
    m8 += rule.weights[i] * std::pow(x, 8);
    odd += rule.weights[i] * std::pow(x, 5);
  }
  EXPECT_NEAR(w, 1.0, 1e-14);
  EXPECT_NEAR(m2, 1.0, 1e-13);
  EXPECT_NEAR(m4, 3.0, 1e-12);
  EXPECT_NEAR(m6, 15.0, 1e-11);
  EXPECT_NEAR(m8, 105.0, 1e-10);
  EXPECT_NEAR(odd, 0.0, 1e-12);
  EXPECT_EQ(rule.nodes[30], 0.0);
}

TEST(GaussHermite, NodesAreSymmetricAndSorted) {
  const auto rule = gauss_hermite(20);
  for (std::size_t i = 0; i < rule.size(); ++i) {
    EXPECT_NEAR(rule.nodes[i], -rule.nodes[rule.size() - 1 - i], 1e-12);
    EXPECT_NEAR(rule.weights[i], rule.weights[rule.size() - 1 - i], 1e-15);
    if (i > 0) EXPECT_LT(rule.nodes[i - 1], rule.nodes[i]);
  }
}

TEST(Prior, RejectsInvalidMeasures) {
  EXPECT_THROW(parse_prior("point-mass:0,0.5;1,0.5"), InvalidPrior);
  EXPECT_THROW(parse_prior("point-mass:0,0.5;1,0.3;2,0.1"), InvalidPrior);
  EXPECT_THROW(parse_prior("point-mass:0,0.5;1,-0.1;2,0.6"), InvalidPrior);
  EXPECT_THROW(parse_prior("point-mass:0,0.5;1,0.5;inf,0.0"), InvalidPrior);
  EXPECT_THROW(parse_prior("cauchy:1"), InvalidPrior);
  EXPECT_THROW(parse_prior("bernoulli-gaussian:1.5,1"), InvalidPrior);
}

TEST(Prior, SortsAndMergesDuplicates) {
  const auto p = parse_prior("point-mass:<1,0.25;-1,0.25;0,0.25;1,0.25>");
  ASSERT_EQ(p.size(), 3u);
  EXPECT_EQ(p.locations()[0], -1.0);
  EXPECT_EQ(p.locations()[2], 1.0);
  EXPECT_DOUBLE_EQ(p.weights()[2], 0.5);
  EXPECT_DOUBLE_EQ(p.zero_mass(), 0.25);
}

TEST(Prior, BernoulliGaussianKeepsPointMassAndMoments) {
  const auto p = parse_prior("bernoulli-gaussian:0.3,2.0");
  EXPECT_EQ(p.kind(), PriorKind::QuadratureOfContinuous);
  EXPECT_DOUBLE_EQ(p.zero_mass(), 0.7);
  EXPECT_NEAR(p.mean(), 0.0, 1e-14);
  EXPECT_NEAR(p.second_moment(), 0.6, 1e-12);
  EXPECT_GE(p.zero_index(), 0);
  // The Gaussian part contributes its own central node at zero.
  EXPECT_GT(p.weights()[p.zero_index()], 0.7);
}

TEST(TiltedMoments, UntiltedThreePoint) {
  const auto p = three_point_prior();
  const auto ts = tilted_moments(p, {0.0, 0.0});
  EXPECT_NEAR(ts.m, 0.0, 1e-15);
  EXPECT_NEAR(ts.s, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(ts.log_partition, 0.0, 1e-15);
}

TEST(TiltedMoments, StrongLinearTiltMatchesThreeTermSum) {
  const double e = std::exp(10.0), ei = std::exp(-10.0);
  const double expected = (e - ei) / (e + 1.0 + ei);
  const auto ts = tilted_moments(three_point_prior(), {10.0, 0.0});
  EXPECT_NEAR(ts.m, expected, 1e-15);
  EXPECT_NEAR(ts.m, 0.9999546, 1e-7);
}

TEST(TiltedMoments, LogPartitionVanishesAtZeroTilt) {
  for (const char* d : {"three-point", "bernoulli-gaussian:0.5,1", "gaussian:2", "point-mass:-2,0.1;0,0.6;3,0.3"}) {
    EXPECT_NEAR(tilted_moments(parse_prior(d), {0.0, 0.0}).log_partition, 0.0, 1e-14) << d;
  }
}

TEST(TiltedMoments, ExtremeParametersStayFinite) {
  const auto p = three_point_prior();
  for (double lam : {-1e6, 0.0, 1e6}) {
    for (double gam : {-1e6, 0.0, 1e6}) {
      const auto ts = tilted_moments(p, {lam, gam});
      EXPECT_TRUE(std::isfinite(ts.m) && std::isfinite(ts.s) && std::isfinite(ts.log_partition));
      EXPECT_GE(ts.m, -1.0);
      EXPECT_LE(ts.m, 1.0);
    }
  }
  EXPECT_THROW(tilted_moments(p, {NAN, 0.0}), DegenerateTilt);
}

TEST(TiltedMoments, JacobianMatchesCovariance) {
  Gen g(11);
  for (const char* d : {"three-point", "bernoulli-gaussian:0.4,1"}) {
    const auto prior = parse_prior(d);
    for (int t = 0; t < 50; ++t) {
      const DualPair dp{g.uniform(-3, 3), g.uniform(0, 3)};
      const auto ts = tilted_moments(prior, dp);
      const double h = 1e-5;
      // Natural coordinates (lambda, -gamma/2).
      const auto lp = tilted_moments(prior, {dp.lambda + h, dp.gamma});
      const auto lm = tilted_moments(prior, {dp.lambda - h, dp.gamma});
      const auto gp = tilted_moments(prior, {dp.lambda, dp.gamma - 2 * h});
      const auto gm = tilted_moments(prior, {dp.lambda, dp.gamma + 2 * h});
      const Eigen::Matrix2d cov = ts.cov_matrix();
      Eigen::Matrix2d fd;
      fd << (lp.m - lm.m) / (2 * h), (gp.m - gm.m) / (2 * h), (lp.s - lm.s) / (2 * h), (gp.s - gm.s) / (2 * h);
      EXPECT_LT((fd - cov).cwiseAbs().maxCoeff(), 1e-5 * std::max(1.0, cov.cwiseAbs().maxCoeff())) << d;
    }
  }
}

TEST(TiltedMoments, MeanIncreasesWithLinearTilt) {
  const auto prior = three_point_prior();
  for (double gam : {-2.0, 0.0, 4.0}) {
    double prev = -2.0;
    for (double lam = -6.0; lam <= 6.0; lam += 0.25) {
      const double m = tilted_moments(prior, {lam, gam}).m;
      EXPECT_GT(m, prev);
      prev = m;
    }
  }
}

TEST(MomentSpace, ClassifiesThreePointExamples) {
  const auto p = three_point_prior();
  EXPECT_EQ(gamma_region(p, {0.5, 0.7}), GammaRegion::Interior);
  EXPECT_EQ(gamma_region(p, {0.5, 1.0}), GammaRegion::Boundary);
  EXPECT_EQ(gamma_region(p, {0.5, 0.5}), GammaRegion::Boundary);
  EXPECT_EQ(gamma_region(p, {1.5, 1.0}), GammaRegion::Exterior);
  EXPECT_EQ(gamma_region(p, {0.5, 0.4}), GammaRegion::Exterior);
  EXPECT_EQ(gamma_region(p, {1.0, 1.0}), GammaRegion::Boundary);
}

TEST(MomentSpace, LowerEnvelopeInterpolatesSquares) {
  const auto p = parse_prior("point-mass:-1,0.2;0.5,0.3;2,0.5");
  // Between 0.5 and 2 the chord of b^2 is 2.5 m - 1.
  EXPECT_DOUBLE_EQ(gamma_lower_envelope(p, 1.0), 1.5);
  EXPECT_DOUBLE_EQ(gamma_lower_envelope(p, 0.5), 0.25);
  // Upper envelope (a + b) m - a b with a = -1, b = 2.
  EXPECT_DOUBLE_EQ(gamma_upper_envelope(p, 1.0), 3.0);
}

TEST(MomentSpace, TiltedMomentsAreInterior) {
  Gen g(5);
  const auto p = parse_prior("point-mass:-1,0.2;0.5,0.3;2,0.5");
  for (int t = 0; t < 200; ++t) {
    const auto ts = tilted_moments(p, {g.uniform(-4, 4), g.uniform(-2, 4)});
    EXPECT_NE(gamma_region(p, {ts.m, ts.s}), GammaRegion::Exterior);
  }
}

TEST(MomentSpace, ProjectionLandsInside) {
  const auto p = three_point_prior();
  for (MomentPair mp : {MomentPair{0.5, 1.0}, MomentPair{0.5, 0.5}, MomentPair{1.0, 1.0}, MomentPair{-2.0, 3.0}}) {
    EXPECT_EQ(gamma_region(p, project_interior(p, mp, 1e-6)), GammaRegion::Interior);
  }
}

TEST(DualSolve, RoundTripAtFixedPoint) {
  const auto p = three_point_prior();
  const auto ts = tilted_moments(p, {0.3, 1.2});
  const auto sol = dual_solve(p, {ts.m, ts.s});
  EXPECT_TRUE(sol.converged);
  EXPECT_NEAR(sol.dual.lambda, 0.3, 1e-8);
  EXPECT_NEAR(sol.dual.gamma, 1.2, 1e-8);
}

TEST(DualSolve, UntiltedMomentsGiveZeroDual) {
  const auto sol = dual_solve(three_point_prior(), {0.0, 2.0 / 3.0});
  EXPECT_NEAR(sol.dual.lambda, 0.0, 1e-12);
  EXPECT_NEAR(sol.dual.gamma, 0.0, 1e-12);
}

TEST(DualSolve, GammaDivergesTowardUpperEnvelope) {
  const auto p = three_point_prior();
  const double g90 = dual_solve(p, {0.0, 0.9}).dual.gamma;
  const double g99 = dual_solve(p, {0.0, 0.99}).dual.gamma;
  const double g999 = dual_solve(p, {0.0, 0.999}).dual.gamma;
  EXPECT_LT(g90, 0.0);
  EXPECT_LT(g99, g90);
  EXPECT_LT(g999, g99);
}

TEST(DualSolve, RejectsNonInteriorPairs) {
  const auto p = three_point_prior();
  EXPECT_THROW(dual_solve(p, {0.5, 1.0}), NotInDomain);
  EXPECT_THROW(dual_solve(p, {1.5, 1.0}), NotInDomain);
}

TEST(DualSolve, RandomRoundTrips) {
  Gen g(2024);
  const auto p = three_point_prior();
  for (int t = 0; t < 500; ++t) {
    const DualPair d{g.uniform(-8, 8), g.uniform(-8, 8)};
    const auto ts = tilted_moments(p, d);
    const auto sol = dual_solve(p, {ts.m, ts.s});
    ASSERT_TRUE(sol.converged) << "case " << t;
    EXPECT_NEAR(sol.dual.lambda, d.lambda, 1e-8) << "case " << t;
    EXPECT_NEAR(sol.dual.gamma, d.gamma, 1e-8) << "case " << t;
  }
}

TEST(DualSolve, WarmStartConverges) {
  const auto p = parse_prior("bernoulli-gaussian:0.5,1");
  const auto ts = tilted_moments(p, {1.5, 2.0});
  const auto sol = dual_solve(p, {ts.m, ts.s}, DualPair{1.4, 2.1});
  EXPECT_TRUE(sol.converged);
  EXPECT_NEAR(sol.dual.lambda, 1.5, 1e-8);
  EXPECT_NEAR(sol.dual.gamma, 2.0, 1e-8);
}

TEST(NegEntropy, ZeroAtPriorMoments) {
  EXPECT_NEAR(neg_entropy(three_point_prior(), {0.0, 2.0 / 3.0}), 0.0, 1e-14);
}

TEST(NegEntropy, MatchesDirectKlSum) {
  const auto p = three_point_prior();
  const MomentPair mp{0.5, 0.7};
  // With atoms {-1, 0, 1}: q(1) - q(-1) = m and q(1) + q(-1) = s.
  const double q1 = 0.5 * (mp.s + mp.m), qm1 = 0.5 * (mp.s - mp.m), q0 = 1.0 - mp.s;
  const double kl = q1 * std::log(3 * q1) + qm1 * std::log(3 * qm1) + q0 * std::log(3 * q0);
  const double value = neg_entropy(p, mp);
  EXPECT_GT(value, 0.0);
  EXPECT_NEAR(value, kl, 1e-12);
}

TEST(NegEntropy, GradientIsDualPair) {
  Gen g(8);
  const auto p = parse_prior("point-mass:-1,0.2;0.5,0.3;2,0.5");
  for (int t = 0; t < 20; ++t) {
    const auto ts = tilted_moments(p, {g.uniform(-2, 2), g.uniform(-1, 2)});
    const MomentPair mp{ts.m, ts.s};
    const auto dual = dual_solve(p, mp).dual;
    const double h = 1e-6;
    const double dm = (neg_entropy(p, {mp.m + h, mp.s}) - neg_entropy(p, {mp.m - h, mp.s})) / (2 * h);
    const double ds = (neg_entropy(p, {mp.m, mp.s + h}) - neg_entropy(p, {mp.m, mp.s - h})) / (2 * h);
    EXPECT_NEAR(dm, dual.lambda, 1e-5 * (1 + std::abs(dual.lambda)));
    EXPECT_NEAR(ds, -0.5 * dual.gamma, 1e-5 * (1 + std::abs(dual.gamma)));
  }
}

TEST(NegEntropy, MidpointConvexity) {
  Gen g(77);
  for (const char* d : {"three-point", "point-mass:-1,0.2;0.5,0.3;2,0.5"}) {
    const auto p = parse_prior(d);
    for (int t = 0; t < 200; ++t) {
      const auto a = tilted_moments(p, {g.uniform(-4, 4), g.uniform(-3, 5)});
      const auto b = tilted_moments(p, {g.uniform(-4, 4), g.uniform(-3, 5)});
      const MomentPair x{a.m, a.s}, y{b.m, b.s}, mid{0.5 * (a.m + b.m), 0.5 * (a.s + b.s)};
      EXPECT_LE(neg_entropy(p, mid), 0.5 * (neg_entropy(p, x) + neg_entropy(p, y)) + 1e-10) << d << " case " << t;
    }
  }
}

TEST(Denoise, SymmetricPriorAtZeroInput) {
  const auto p = three_point_prior();
  const auto [m, s] = denoise(p, Eigen::VectorXd::Zero(3), 2.5);
  const auto ts = tilted_moments(p, {0.0, 2.5});
  for (int j = 0; j < 3; ++j) {
    EXPECT_NEAR(m(j), 0.0, 1e-15);
    EXPECT_DOUBLE_EQ(s(j), ts.s);
  }
}

TEST(Denoise, MonotoneAndBounded) {
  const auto p = three_point_prior();
  Eigen::VectorXd x(5);
  x << -5, -1, 0.5, 2, 5;
  const auto [m, s] = denoise(p, x, 2.0);
  EXPECT_GT(m(4), 0.0);
  EXPECT_LT(m(4), 1.0);
  for (int j = 1; j < 5; ++j) EXPECT_GT(m(j), m(j - 1));
}

TEST(Denoise, ZeroSnrReturnsPriorMean) {
  const auto p = parse_prior("point-mass:-1,0.2;0.5,0.3;2,0.5");
  Eigen::VectorXd x(3);
  x << -10, 0, 10;
  const auto [m, s] = denoise(p, x, 0.0);
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(m(j), p.mean(), 1e-15);
}

TEST(Mmse, LimitsForThreePoint) {
  const auto p = three_point_prior();
  EXPECT_NEAR(mmse(p, 0.0), 2.0 / 3.0, 1e-14);
  EXPECT_LT(mmse(p, 1e6), 1e-3);
}

TEST(Mmse, GaussianPriorMatchesConjugateFormula) {
  const auto p = gaussian_prior(1.0);
  for (double g : {0.0, 0.1, 0.5, 1.0, 3.0, 10.0}) {
    EXPECT_NEAR(mmse(p, g), 1.0 / (1.0 + g), 1e-6) << g;
  }
}

TEST(Mmse, NonincreasingAndBounded) {
  for (const char* d : {"three-point", "bernoulli-gaussian:0.5,1"}) {
    const auto p = parse_prior(d);
    double prev = p.second_moment() + 1e-15;
    for (int i = 0; i <= 60; ++i) {
      const double g = std::pow(10.0, -3.0 + 0.1 * i);
      const double v = mmse(p, g);
      EXPECT_LE(v, prev + 1e-12) << d << " gamma " << g;
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, p.second_moment());
      prev = v;
    }
  }
}

TEST(InclusionProbability, UntiltedSymmetricThreePoint) {
  const auto p = three_point_prior();
  // At lambda = 0 the tilt weights are (e^{-g/2}, 1, e^{-g/2}) / Z.
  const double g = 1.7;
  const double expected = 2 * std::exp(-g / 2) / (1 + 2 * std::exp(-g / 2));
  EXPECT_NEAR(inclusion_probability(p, {0.0, g}), expected, 1e-15);
}

TEST(InclusionProbability, ExcludesGaussianCentralNode) {
  const auto p = parse_prior("bernoulli-gaussian:0.5,1");
  EXPECT_NEAR(inclusion_probability(p, {0.0, 0.0}), 0.5, 1e-14);
}

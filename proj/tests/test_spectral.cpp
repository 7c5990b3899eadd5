#include <gtest/gtest.h>

#include <cmath>

#include "common.hpp"
#include "oracles.hpp"

using namespace superlim;

TEST(Spectral, FellerScalar) {
  const ModelSolution& sol = solution("feller1");
  EXPECT_NEAR(sol.lambda0(), 1.0, 1e-12);
  EXPECT_NEAR(sol.lambda0_star(), -1.0, 1e-12);
}

TEST(Spectral, TwoSiteClosedForm) {
  const Scenario s = scenario("twosite");
  const SpectralData sd = mean_spectral_data(s);
  // Q + diag(alpha) = [[0.5, 1], [1, -0.5]]
  EXPECT_NEAR(sd.lambda0, oracle::top_eigenvalue_2x2(0.5, 1.0, 1.0, -0.5), 1e-12);
  EXPECT_NEAR(sd.lambda1, -sd.lambda0, 1e-10);
  EXPECT_NEAR(inner_m(sd.phi0, sd.psi0, s.m()), 1.0, 1e-12);
  EXPECT_NEAR(norm2_m(sd.phi0, s.m()), 1.0, 1e-12);
}

TEST(Spectral, EigenRelationsThreeSite) {
  const ModelSolution& sol = solution("threesite");
  const Scenario& s = sol.scenario;
  const SpectralData& sd = sol.spectral;
  const Matrix a = mean_generator(s);
  EXPECT_LT(sup_norm(Vector(a * sd.phi0 - sd.lambda0 * sd.phi0)), 1e-12);
  // the left vector is with respect to m
  const Vector left = a.transpose() * sd.psi0.cwiseProduct(s.m());
  EXPECT_LT(sup_norm(Vector(left - sd.lambda0 * sd.psi0.cwiseProduct(s.m()))), 1e-12);
  EXPECT_TRUE((sd.phi0.array() > 0).all());
  EXPECT_TRUE((sd.psi0.array() > 0).all());
  EXPECT_LT(sd.lambda0_star, 0.0);
}

TEST(Spectral, SemigroupMatchesEigenvalue) {
  const ModelSolution& sol = solution("threesite");
  for (double t : {0.5, 2.0}) {
    const Vector tp = semigroup_T(sol.scenario, t) * sol.spectral.phi0;
    EXPECT_LT(sup_norm(Vector(tp - std::exp(sol.lambda0() * t) * sol.spectral.phi0)), 1e-10);
    const Vector ts = tstar_t(sol, sol.spectral.phi0_star, t);
    EXPECT_LT(sup_norm(Vector(ts - std::exp(sol.lambda0_star() * t) * sol.spectral.phi0_star)), 1e-10);
  }
}

TEST(Spectral, UniformIntegrabilityFit) {
  const Scenario s = scenario("threesite");
  const SpectralData sd = mean_spectral_data(s);
  const IuFit fit = iu_fit(s, mean_triple(sd), 1.0);
  EXPECT_FALSE(fit.degenerate);
  EXPECT_GT(fit.gamma, 0.0);
  EXPECT_GE(fit.c, 0.0);
}

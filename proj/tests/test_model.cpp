#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "common.hpp"
#include "superlim/assumptions.hpp"

using namespace superlim;

namespace {

Scenario single(double alpha, double beta, std::vector<Atom> atoms = {}) {
  return make_scenario("s", Vector::Ones(1), Matrix::Zero(1, 1), Vector::Constant(1, alpha),
                       Vector::Constant(1, beta), {atoms}, Vector::Ones(1));
}

}  // namespace

TEST(Phi, FellerIsQuadratic) {
  const Scenario s = single(1.0, 1.0);
  for (double z : {0.0, 0.5, 1.0, 3.0}) EXPECT_DOUBLE_EQ(eval_phi(s, 0, z), -z + z * z);
  EXPECT_NEAR(phi_prime(s, 0, 1.0), 1.0, 1e-14);
}

TEST(Phi, JumpTermSmallArgument) {
  // e^{-zr} - 1 + zr ~ (zr)^2 / 2 for tiny z; a naive formula loses all digits here
  const Scenario s = single(0.0, 0.0, {{2.0, 1.0}});
  const double z = 1e-9;
  EXPECT_NEAR(eval_phi(s, 0, z) / (2.0 * z * z), 1.0, 1e-6);
}

TEST(Phi, ComplexMatchesRealOnAxis) {
  const Scenario s = scenario("threesite");
  for (int x = 0; x < s.sites(); ++x)
    EXPECT_NEAR(std::abs(eval_phi(s, x, Complex(0.7, 0.0)) - eval_phi(s, x, 0.7)), 0.0, 1e-14);
}

TEST(Scenario, RejectsBadFieldsByName) {
  auto expect_field = [](auto&& build, const std::string& field) {
    try {
      build();
      FAIL() << "expected InputError for " << field;
    } catch (const InputError& e) {
      EXPECT_NE(std::string(e.what()).find(field), std::string::npos) << e.what();
    }
  };
  expect_field([] { single(1.0, -1.0); }, "beta");
  expect_field([] { single(1.0, 1.0, {{-1.0, 1.0}}); }, "atoms");
  expect_field(
      [] {
        Matrix q(2, 2);
        q << -1, 1, 0, 0;
        make_scenario("r", Vector::Ones(2), q, Vector::Ones(2), Vector::Ones(2), {}, Vector::Ones(2));
      },
      "irreducible");
  expect_field(
      [] {
        Matrix q(2, 2);
        q << -1, 2, 1, -1;
        make_scenario("r", Vector::Ones(2), q, Vector::Ones(2), Vector::Ones(2), {}, Vector::Ones(2));
      },
      "row sum");
}

TEST(Scenario, JsonRoundTrip) {
  const Scenario s = scenario("heavytail_q3");
  const auto path = std::filesystem::temp_directory_path() / "superlim_roundtrip.json";
  save_scenario(s, path);
  const Scenario r = load_scenario(path);
  EXPECT_EQ(scenario_hash(s), scenario_hash(r));
  ASSERT_TRUE(r.branching.tail.has_value());
  EXPECT_DOUBLE_EQ(r.branching.tail->log_power, 3.0);
  std::filesystem::remove(path);
}

TEST(Scenario, MissingFileIsInputError) {
  EXPECT_THROW(load_scenario("/nonexistent/scenario.json"), InputError);
}

TEST(Assumptions, ShippedScenariosPass) {
  for (const char* name : {"feller1", "poissonic", "twosite", "threesite", "heavytail_q2", "heavytail_q3"}) {
    const AssumptionReport rep = validate_assumptions(scenario(name));
    EXPECT_TRUE(rep.ok()) << name;
  }
}

TEST(Assumptions, SubcriticalFailsGrowth) {
  const AssumptionReport rep = validate_assumptions(single(-0.5, 1.0));
  EXPECT_FALSE(rep.lambda0_positive);
  EXPECT_FALSE(rep.ok());
}

TEST(Assumptions, BranchingBoundSandwich) {
  // e^{-Mt} p <= q <= e^{Mt} p entrywise
  const Scenario s = scenario("threesite");
  const double M = branching_bound_M(s);
  for (double t : {0.5, 1.0, 2.0}) {
    const Matrix p = expm(t * s.Q());
    const Matrix q = semigroup_T(s, t);
    for (int x = 0; x < 3; ++x)
      for (int y = 0; y < 3; ++y) {
        EXPECT_LE(std::exp(-M * t) * p(x, y), q(x, y) * (1 + 1e-12));
        EXPECT_LE(q(x, y), std::exp(M * t) * p(x, y) * (1 + 1e-12));
      }
  }
}

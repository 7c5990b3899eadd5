#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "common.hpp"
#include "oracles.hpp"
#include "superlim/skeleton.hpp"
#include "superlim/stats.hpp"

using namespace superlim;

TEST(Philox, KnownAnswers) {
  using B = Philox4x32::Block;
  using K = Philox4x32::Key;
  EXPECT_EQ(Philox4x32::bijection(B{0, 0, 0, 0}, K{0, 0}), (B{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}));
  EXPECT_EQ(Philox4x32::bijection(B{0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, K{0xa4093822, 0x299f31d0}),
            (B{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}));
}

TEST(Philox, StreamsDiffer) {
  Philox4x32 a(5, 0), b(5, 1), c(5, 0);
  const auto x = a(), y = b(), z = c();
  EXPECT_NE(x, y);
  EXPECT_EQ(x, z);
}

TEST(Philox, UniformMoments) {
  Philox4x32 eng(1, 0);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = uniform_open(eng);
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
    s += u;
    s2 += u * u;
  }
  EXPECT_NEAR(s / n, 0.5, 4.0 * std::sqrt(1.0 / 12 / n));
  EXPECT_NEAR(s2 / n, 1.0 / 3.0, 0.005);
}

TEST(ParallelFor, ThreadCountInvariant) {
  std::vector<double> a(5000), b(5000);
  auto body = [](std::vector<double>& out) {
    return [&out](std::size_t i) {
      Philox4x32 eng(9, i);
      out[i] = exponential(eng, 2.0);
    };
  };
  parallel_for(a.size(), 1, body(a));
  parallel_for(b.size(), 4, body(b));
  EXPECT_EQ(a, b);
}

TEST(Skeleton, OffspringLawFrequencies) {
  const ModelSolution& sol = solution("poissonic");
  const SkeletonModel mdl = build_skeleton(sol);
  Philox4x32 eng(2, 0);
  const int n = 200000;
  std::vector<int> hist(8, 0);
  for (int i = 0; i < n; ++i) {
    const int k = sample_offspring(mdl, 0, eng);
    if (k < 8) ++hist[static_cast<std::size_t>(k)];
  }
  for (int k = 2; k <= 4; ++k) {
    const double p = oracle::poissonic_pn(k);
    EXPECT_NEAR(hist[static_cast<std::size_t>(k)] / double(n), p, 4.0 * std::sqrt(p * (1 - p) / n)) << k;
  }
}

TEST(Skeleton, YuleMeanGrowth) {
  // feller1 skeleton is a rate-1 Yule process: E Z_t = e^t
  const SkeletonModel mdl = build_skeleton(solution("feller1"));
  const int runs = 20000;
  double acc = 0, acc2 = 0;
  for (int i = 0; i < runs; ++i) {
    Philox4x32 eng(4, static_cast<std::uint64_t>(i));
    const double z = static_cast<double>(simulate_skeleton(mdl, 0, 1.5, eng).particles.size());
    acc += z;
    acc2 += z * z;
  }
  const double mean = acc / runs;
  const double se = std::sqrt((acc2 / runs - mean * mean) / runs);
  EXPECT_NEAR(mean, std::exp(1.5), 4.0 * se);
}

TEST(Skeleton, ContinuationMatchesExactLaw) {
  // W^Z of a Yule process is Exp(1); compare the two samplers against that law
  const SkeletonModel mdl = build_skeleton(solution("feller1"));
  for (std::uint64_t threshold : {std::uint64_t{0}, std::uint64_t{64}}) {
    const WZSampler sampler(mdl, 9.0, threshold);
    const int n = 20000;
    std::vector<double> w(n);
    for (int i = 0; i < n; ++i) {
      Philox4x32 eng(6, static_cast<std::uint64_t>(i));
      w[static_cast<std::size_t>(i)] = sampler(0, eng);
    }
    const double mean = std::accumulate(w.begin(), w.end(), 0.0) / n;
    EXPECT_NEAR(mean, 1.0, 0.03) << threshold;
    const double below = std::count_if(w.begin(), w.end(), [](double x) { return x <= 0.5; }) / double(n);
    EXPECT_NEAR(below, 1.0 - std::exp(-0.5), 0.015) << threshold;
  }
}

TEST(Skeleton, ContinuationVarianceFeller) {
  // rate-1 Yule from one particle: Z_s is geometric and Var(e^{-s} Z_s) = 1 - e^{-s}
  const SkeletonModel mdl = build_skeleton(solution("feller1"));
  const WZSampler sampler(mdl, 10.0, 64);
  for (double s : {0.5, 3.0, 8.0}) EXPECT_NEAR(sampler.variance(s)[0], 1.0 - std::exp(-s), 1e-10) << s;
}

TEST(Sampler, HorizonPrecondition) {
  const ModelSolution& sol = solution("feller1");
  const SkeletonModel mdl = build_skeleton(sol);
  SamplerConfig cfg;
  cfg.horizon = 5.0;
  cfg.samples = 10;
  EXPECT_THROW(sample_W(sol, mdl, Vector::Ones(1), cfg), PreconditionError);
}

TEST(Sampler, WZeroMass) {
  const ModelSolution& sol = solution("twosite");
  const SkeletonModel mdl = build_skeleton(sol);
  SamplerConfig cfg;
  cfg.samples = 40000;
  cfg.seed = 3;
  cfg.horizon = 12.0;
  const SampleBatch b = sample_W(sol, mdl, sol.scenario.initial_measure, cfg);
  const double p0 = std::exp(-sol.v().dot(sol.scenario.initial_measure));
  const double zeros = std::count(b.values.begin(), b.values.end(), 0.0) / double(cfg.samples);
  EXPECT_NEAR(zeros, p0, 4.0 * std::sqrt(p0 * (1 - p0) / cfg.samples));
}

TEST(Stats, SmallValueFitOnUniform) {
  // P(U <= r) = r: slope 1, constant 1
  std::vector<double> x(400000);
  for (std::size_t i = 0; i < x.size(); ++i) {
    Philox4x32 eng(8, i);
    x[i] = uniform_open(eng);
  }
  const EcdfFit fit = smallvalue_fit(x, 1e-2, 1e-1);
  EXPECT_NEAR(fit.slope, 1.0, 0.03);
  EXPECT_NEAR(fit.constant(), 1.0, 0.1);
  EXPECT_LE(fit.slope_lo, fit.slope);
  EXPECT_GE(fit.slope_hi, fit.slope);
  EXPECT_LT(fit.slope_lo, 1.0);
  EXPECT_GT(fit.slope_hi, 1.0);
}

TEST(Stats, SmallValueNeedsMass) {
  std::vector<double> x(1000, 5.0);
  EXPECT_THROW(smallvalue_fit(x, 1e-3, 1e-1), NumericalError);
}

TEST(Stats, TailCheckInconclusive) {
  std::vector<double> x(300);
  std::iota(x.begin(), x.end(), 1.0);
  const TailCheck tc = tail_decay_check(x, [](double) { return 1.0; }, {2.0, 250.0, 290.0});
  EXPECT_TRUE(tc.inconclusive);
  EXPECT_FALSE(tc.pass);
}

TEST(Stats, KdeOfExponential) {
  std::vector<double> x(100000);
  for (std::size_t i = 0; i < x.size(); ++i) {
    Philox4x32 eng(10, i);
    x[i] = exponential(eng, 1.0);
  }
  const KdeCheck kc = kde_positivity(x, 0.2, 2.0);
  for (std::size_t i = 0; i < kc.grid.size(); ++i) EXPECT_NEAR(kc.density[i], std::exp(-kc.grid[i]), 0.03);
}

TEST(Stats, LaplaceDistanceExact) {
  std::vector<double> x = {0.0, 1.0};
  const double d = laplace_distance(x, [](double t) { return 0.5 * (1 + std::exp(-t)); }, {0.5, 2.0});
  EXPECT_NEAR(d, 0.0, 1e-15);
}

TEST(DensitySeries, FellerBesselForm) {
  // Y ~ Exp(1) for feller1, so f_mu is the Bessel-form density
  std::vector<double> y(200000);
  for (std::size_t i = 0; i < y.size(); ++i) {
    Philox4x32 eng(12, i);
    y[i] = exponential(eng, 1.0);
  }
  std::vector<double> grid;
  for (int i = 1; i <= 20; ++i) grid.push_back(0.1 * i);
  const DensitySeries ds = density_series(y, 1.0, grid);
  for (std::size_t i = 0; i < grid.size(); ++i)
    EXPECT_NEAR(ds.f[i], oracle::feller_W_density(grid[i]), 0.02) << grid[i];
  EXPECT_NEAR(ds.mass, 1.0 - std::exp(-1.0), 1e-3);
}

#pragma once

// Skeleton branching Markov process under the h-transformed motion Qbar, and
// samplers for W^Z, Y and W built on it.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "superlim/cumulant.hpp"
#include "superlim/error.hpp"
#include "superlim/kde.hpp"
#include "superlim/linalg.hpp"
#include "superlim/rng.hpp"

namespace superlim {

struct SkeletonModel {
  Matrix qbar;
  Vector b;
  std::vector<std::vector<double>> offspring_cdf;  // cdf over n = 2, 3, ...
  std::vector<std::vector<double>> jump_cdf;       // cdf over destinations y != x
  std::vector<std::vector<int>> jump_target;
  Vector jump_rate;                                // -qbar(x, x)
  Vector total_rate;                               // jump_rate + b
  double lambda0 = 0.0;
  Vector phi0_over_v;
  Matrix mean_generator;                           // Qbar + diag(b (m1 - 1))
  Vector factorial_moment2;
  double conservativity_defect = 0.0;
};

struct Particle {
  int site = 0;
  double birth_time = 0.0;
};

struct ParticleSystem {
  double time = 0.0;
  std::vector<Particle> particles;

  /// Number of particles at each site.
  std::vector<std::uint64_t> counts(int sites) const {
    std::vector<std::uint64_t> out(static_cast<std::size_t>(sites), 0);
    for (const Particle& p : particles) ++out[static_cast<std::size_t>(p.site)];
    return out;
  }
};

enum class SampleKind { WZ, Y, W };

inline const char* kind_name(SampleKind k) {
  switch (k) {
    case SampleKind::WZ: return "WZ";
    case SampleKind::Y: return "Y";
    case SampleKind::W: return "W";
  }
  return "?";
}

struct SampleBatch {
  std::string scenario_name;
  SampleKind kind = SampleKind::WZ;
  double horizon_T = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t continuation_threshold = 0;  // 0: exact simulation to T
  int start_site = -1;                       // for WZ
  std::vector<double> values;
  std::vector<int> ancestors;                // Y: ancestor site; W: number of terms N
};

inline SkeletonModel build_skeleton(const ModelSolution& sol) {
  const Scenario& s = sol.scenario;
  const int d = s.sites();
  SkeletonModel mdl;
  mdl.qbar = sol.qbar;
  mdl.b = sol.coeffs.b;
  mdl.lambda0 = sol.lambda0();
  mdl.phi0_over_v = sol.spectral.phi0.cwiseQuotient(sol.v());
  mdl.factorial_moment2 = sol.coeffs.factorial_moment2;

  double defect = 0.0;
  for (int x = 0; x < d; ++x) defect = std::max(defect, std::abs(mdl.qbar.row(x).sum()));
  mdl.conservativity_defect = defect;
  if (defect > 1e-8)
    throw NumericalError("build_skeleton: Qbar row-sum defect " + std::to_string(defect) +
                         " > 1e-8; v is inconsistent with Q v = phi(., v)");

  mdl.jump_rate.resize(d);
  mdl.total_rate.resize(d);
  mdl.jump_cdf.resize(static_cast<std::size_t>(d));
  mdl.jump_target.resize(static_cast<std::size_t>(d));
  mdl.offspring_cdf.resize(static_cast<std::size_t>(d));
  for (int x = 0; x < d; ++x) {
    double out_rate = 0.0;
    for (int y = 0; y < d; ++y)
      if (y != x && mdl.qbar(x, y) > 0.0) out_rate += mdl.qbar(x, y);
    mdl.jump_rate[x] = out_rate;
    mdl.total_rate[x] = out_rate + mdl.b[x];
    double acc = 0.0;
    for (int y = 0; y < d; ++y) {
      if (y == x || !(mdl.qbar(x, y) > 0.0)) continue;
      acc += mdl.qbar(x, y) / out_rate;
      mdl.jump_cdf[static_cast<std::size_t>(x)].push_back(acc);
      mdl.jump_target[static_cast<std::size_t>(x)].push_back(y);
    }
    if (!mdl.jump_cdf[static_cast<std::size_t>(x)].empty())
      mdl.jump_cdf[static_cast<std::size_t>(x)].back() = 1.0;

    const auto& p = sol.coeffs.offspring[static_cast<std::size_t>(x)];
    std::vector<double> cdf(p.size());
    std::partial_sum(p.begin(), p.end(), cdf.begin());
    cdf.back() = 1.0;
    mdl.offspring_cdf[static_cast<std::size_t>(x)] = std::move(cdf);
  }
  mdl.mean_generator = mdl.qbar;
  mdl.mean_generator.diagonal() += mdl.b.cwiseProduct(sol.coeffs.mean_offspring - Vector::Ones(d));
  return mdl;
}

template <class Engine>
int sample_offspring(const SkeletonModel& mdl, int x, Engine& eng) {
  const auto& cdf = mdl.offspring_cdf[static_cast<std::size_t>(x)];
  if (cdf.size() == 1) return 2;
  const double u = uniform_open(eng);
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  const auto idx = std::min<std::ptrdiff_t>(it - cdf.begin(), static_cast<std::ptrdiff_t>(cdf.size()) - 1);
  return static_cast<int>(idx) + 2;
}

namespace detail {

template <class Engine>
int sample_jump(const SkeletonModel& mdl, int x, Engine& eng) {
  const auto& cdf = mdl.jump_cdf[static_cast<std::size_t>(x)];
  const auto& tgt = mdl.jump_target[static_cast<std::size_t>(x)];
  if (cdf.size() == 1) return tgt[0];
  const double u = uniform_open(eng);
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  const auto idx = std::min<std::ptrdiff_t>(it - cdf.begin(), static_cast<std::ptrdiff_t>(cdf.size()) - 1);
  return tgt[static_cast<std::size_t>(idx)];
}

}  // namespace detail

constexpr std::size_t kDefaultPopulationCap = 10'000'000;

/// Event-driven simulation of the skeleton from one particle at x0, exact in
/// distribution.
template <class Engine>
ParticleSystem simulate_skeleton(const SkeletonModel& mdl, int x0, double T, Engine& eng,
                                 std::size_t cap = kDefaultPopulationCap) {
  const int d = static_cast<int>(mdl.b.size());
  if (!(T >= 0.0)) throw PreconditionError("simulate_skeleton: T must be >= 0");
  if (x0 < 0 || x0 >= d) throw PreconditionError("simulate_skeleton: bad start site");
  std::vector<std::vector<Particle>> by_site(static_cast<std::size_t>(d));
  by_site[static_cast<std::size_t>(x0)].push_back({x0, 0.0});
  std::size_t population = 1;
  double t = 0.0;
  std::vector<double> weight(static_cast<std::size_t>(d));
  while (true) {
    double total = 0.0;
    for (int x = 0; x < d; ++x) {
      weight[static_cast<std::size_t>(x)] =
          static_cast<double>(by_site[static_cast<std::size_t>(x)].size()) * mdl.total_rate[x];
      total += weight[static_cast<std::size_t>(x)];
    }
    t += exponential(eng, total);
    if (t >= T) break;
    double u = uniform_open(eng) * total;
    int x = 0;
    while (x < d - 1 && u >= weight[static_cast<std::size_t>(x)]) u -= weight[static_cast<std::size_t>(x++)];
    auto& list = by_site[static_cast<std::size_t>(x)];
    const std::size_t pick = std::min(list.size() - 1,
                                      static_cast<std::size_t>(uniform_open(eng) * static_cast<double>(list.size())));
    std::swap(list[pick], list.back());
    const Particle chosen = list.back();
    list.pop_back();
    if (uniform_open(eng) * mdl.total_rate[x] < mdl.jump_rate[x]) {
      const int y = detail::sample_jump(mdl, x, eng);
      by_site[static_cast<std::size_t>(y)].push_back({y, chosen.birth_time});
    } else {
      const int n = sample_offspring(mdl, x, eng);
      population += static_cast<std::size_t>(n - 1);
      if (population > cap)
        throw PopulationCapError("simulate_skeleton: population exceeded " + std::to_string(cap) +
                                 "; use a smaller horizon T");
      for (int k = 0; k < n; ++k) list.push_back({x, t});
    }
  }
  ParticleSystem out;
  out.time = T;
  for (auto& list : by_site) out.particles.insert(out.particles.end(), list.begin(), list.end());
  return out;
}

// ---------------------------------------------------------------------------
// W^Z sampler

/// Samples e^{-lambda0 T} <phi0 / v, Z_T>. Particle counts are simulated
/// exactly until T or until the population reaches the continuation
/// threshold; from there the remaining sum over independent subtrees is drawn
/// from its Gaussian approximation with the exact conditional mean and
/// variance. A threshold of 0 disables the continuation.
class WZSampler {
 public:
  static constexpr std::uint64_t kDefaultThreshold = 1024;

  WZSampler(const SkeletonModel& mdl, double T, std::uint64_t threshold = kDefaultThreshold,
            std::size_t cap = kDefaultPopulationCap)
      : mdl_(mdl), T_(T), threshold_(threshold), cap_(cap) {
    if (!(T >= 0.0)) throw PreconditionError("WZSampler: T must be >= 0");
    if (threshold_ > 0) build_variance_table();
  }

  double horizon() const { return T_; }
  std::uint64_t threshold() const { return threshold_; }

  /// Var_x of e^{-lambda0 s} <h, Z_s> started from one particle at x, h = phi0 / v.
  Vector variance(double s) const {
    const int d = static_cast<int>(mdl_.b.size());
    const Vector& h = mdl_.phi0_over_v;
    Matrix aug = Matrix::Zero(d + 1, d + 1);
    aug.topLeftCorner(d, d) = mdl_.mean_generator - 2.0 * mdl_.lambda0 * Matrix::Identity(d, d);
    aug.topRightCorner(d, 1) = mdl_.b.cwiseProduct(mdl_.factorial_moment2).cwiseProduct(h.cwiseProduct(h));
    const Matrix e = expm(s * aug);
    const Vector second = e.topLeftCorner(d, d) * h.cwiseProduct(h) + e.topRightCorner(d, 1);
    return (second - h.cwiseProduct(h)).cwiseMax(0.0);
  }

  template <class Engine>
  double operator()(int x0, Engine& eng) const {
    const int d = static_cast<int>(mdl_.b.size());
    std::vector<std::uint64_t> n(static_cast<std::size_t>(d), 0);
    n[static_cast<std::size_t>(x0)] = 1;
    std::uint64_t population = 1;
    double t = 0.0;
    std::vector<double> weight(static_cast<std::size_t>(d));
    while (true) {
      if (threshold_ > 0 && population >= threshold_) return continue_from(n, t, eng);
      double total = 0.0;
      for (int x = 0; x < d; ++x) {
        weight[static_cast<std::size_t>(x)] = static_cast<double>(n[static_cast<std::size_t>(x)]) * mdl_.total_rate[x];
        total += weight[static_cast<std::size_t>(x)];
      }
      const double dt = exponential(eng, total);
      if (t + dt >= T_) break;
      t += dt;
      int x = 0;
      if (d > 1) {
        double u = uniform_open(eng) * total;
        while (x < d - 1 && u >= weight[static_cast<std::size_t>(x)]) u -= weight[static_cast<std::size_t>(x++)];
      }
      if (mdl_.jump_rate[x] > 0.0 && uniform_open(eng) * mdl_.total_rate[x] < mdl_.jump_rate[x]) {
        --n[static_cast<std::size_t>(x)];
        ++n[static_cast<std::size_t>(detail::sample_jump(mdl_, x, eng))];
      } else {
        const int k = sample_offspring(mdl_, x, eng);
        n[static_cast<std::size_t>(x)] += static_cast<std::uint64_t>(k - 1);
        population += static_cast<std::uint64_t>(k - 1);
        if (population > cap_)
          throw PopulationCapError("sample_WZ: population exceeded " + std::to_string(cap_) +
                                   "; use a smaller horizon T or enable the continuation");
      }
    }
    double acc = 0.0;
    for (int x = 0; x < d; ++x) acc += static_cast<double>(n[static_cast<std::size_t>(x)]) * mdl_.phi0_over_v[x];
    return std::exp(-mdl_.lambda0 * T_) * acc;
  }

 private:
  static constexpr int kTablePoints = 4097;

  void build_variance_table() {
    const int d = static_cast<int>(mdl_.b.size());
    step_ = T_ > 0.0 ? T_ / (kTablePoints - 1) : 1.0;
    table_.resize(static_cast<std::size_t>(kTablePoints) * static_cast<std::size_t>(d));
    for (int i = 0; i < kTablePoints; ++i) {
      const Vector var = variance(i * step_);
      for (int x = 0; x < d; ++x) table_[static_cast<std::size_t>(i * d + x)] = var[x];
    }
  }

  double table_variance(int x, double s) const {
    const int d = static_cast<int>(mdl_.b.size());
    const double pos = std::clamp(s / step_, 0.0, static_cast<double>(kTablePoints - 1));
    const int i = std::min(static_cast<int>(pos), kTablePoints - 2);
    const double frac = pos - i;
    const double a = table_[static_cast<std::size_t>(i * d + x)];
    const double c = table_[static_cast<std::size_t>((i + 1) * d + x)];
    return a + frac * (c - a);
  }

  template <class Engine>
  double continue_from(const std::vector<std::uint64_t>& n, double t, Engine& eng) const {
    const int d = static_cast<int>(mdl_.b.size());
    const double s = T_ - t;
    double mean = 0.0, var = 0.0;
    for (int x = 0; x < d; ++x) {
      const double cnt = static_cast<double>(n[static_cast<std::size_t>(x)]);
      mean += cnt * mdl_.phi0_over_v[x];
      var += cnt * table_variance(x, s);
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    const double draw = mean + std::sqrt(var) * normal(eng);
    return std::exp(-mdl_.lambda0 * t) * std::max(draw, 0.0);
  }

  const SkeletonModel& mdl_;
  double T_;
  std::uint64_t threshold_;
  std::size_t cap_;
  double step_ = 1.0;
  std::vector<double> table_;
};

struct SamplerConfig {
  double horizon = 15.0;
  std::uint64_t seed = 0;
  std::size_t samples = 0;
  unsigned threads = 1;
  std::uint64_t continuation_threshold = WZSampler::kDefaultThreshold;
  bool enforce_horizon = true;  // require e^{-lambda0 T} < 1e-5
};

namespace detail {

inline void check_horizon(const SkeletonModel& mdl, const SamplerConfig& cfg) {
  if (cfg.enforce_horizon && !(std::exp(-mdl.lambda0 * cfg.horizon) < 1e-5))
    throw PreconditionError("sampler: horizon T = " + std::to_string(cfg.horizon) +
                            " too short, need e^{-lambda0 T} < 1e-5");
}

// Stream offsets keep the WZ, Y and W batches of one seed independent.
constexpr std::uint64_t kStreamWZ = 0;
constexpr std::uint64_t kStreamY = 1ull << 62;
constexpr std::uint64_t kStreamW = 2ull << 62;

}  // namespace detail

inline SampleBatch sample_WZ(const SkeletonModel& mdl, const std::string& name, int x0,
                             const SamplerConfig& cfg) {
  detail::check_horizon(mdl, cfg);
  if (x0 < 0 || x0 >= mdl.b.size()) throw PreconditionError("sample_WZ: bad start site");
  const WZSampler sampler(mdl, cfg.horizon, cfg.continuation_threshold);
  SampleBatch batch;
  batch.scenario_name = name;
  batch.kind = SampleKind::WZ;
  batch.horizon_T = cfg.horizon;
  batch.seed = cfg.seed;
  batch.continuation_threshold = cfg.continuation_threshold;
  batch.start_site = x0;
  batch.values.assign(cfg.samples, 0.0);
  parallel_for(cfg.samples, resolve_threads(cfg.threads), [&](std::size_t i) {
    Philox4x32 eng(cfg.seed, detail::kStreamWZ + i);
    batch.values[i] = sampler(x0, eng);
  });
  return batch;
}

namespace detail {

inline std::discrete_distribution<int> ancestor_law(const ModelSolution& sol, const Vector& mu) {
  const Vector w = sol.v().cwiseProduct(mu);
  if (!(w.sum() > 0.0)) throw PreconditionError("sampler: mu must be non-zero");
  return std::discrete_distribution<int>(w.data(), w.data() + w.size());
}

}  // namespace detail

/// Y = W^Z from an ancestor drawn with probability v mu / <v, mu>.
inline SampleBatch sample_Y(const ModelSolution& sol, const SkeletonModel& mdl, const Vector& mu,
                            const SamplerConfig& cfg) {
  detail::check_horizon(mdl, cfg);
  const WZSampler sampler(mdl, cfg.horizon, cfg.continuation_threshold);
  const auto law = detail::ancestor_law(sol, mu);
  SampleBatch batch;
  batch.scenario_name = sol.scenario.name;
  batch.kind = SampleKind::Y;
  batch.horizon_T = cfg.horizon;
  batch.seed = cfg.seed;
  batch.continuation_threshold = cfg.continuation_threshold;
  batch.values.assign(cfg.samples, 0.0);
  batch.ancestors.assign(cfg.samples, 0);
  parallel_for(cfg.samples, resolve_threads(cfg.threads), [&](std::size_t i) {
    Philox4x32 eng(cfg.seed, detail::kStreamY + i);
    auto pick = law;
    const int x = pick(eng);
    batch.ancestors[i] = x;
    batch.values[i] = sampler(x, eng);
  });
  return batch;
}

/// W = sum_{n <= N} Y_n with N ~ Poisson(<v, mu>).
inline SampleBatch sample_W(const ModelSolution& sol, const SkeletonModel& mdl, const Vector& mu,
                            const SamplerConfig& cfg) {
  detail::check_horizon(mdl, cfg);
  const WZSampler sampler(mdl, cfg.horizon, cfg.continuation_threshold);
  const auto law = detail::ancestor_law(sol, mu);
  const double mass = sol.v().dot(mu);
  SampleBatch batch;
  batch.scenario_name = sol.scenario.name;
  batch.kind = SampleKind::W;
  batch.horizon_T = cfg.horizon;
  batch.seed = cfg.seed;
  batch.continuation_threshold = cfg.continuation_threshold;
  batch.values.assign(cfg.samples, 0.0);
  batch.ancestors.assign(cfg.samples, 0);
  parallel_for(cfg.samples, resolve_threads(cfg.threads), [&](std::size_t i) {
    Philox4x32 eng(cfg.seed, detail::kStreamW + i);
    std::poisson_distribution<int> poisson(mass);
    auto pick = law;
    const int count = poisson(eng);
    double w = 0.0;
    for (int k = 0; k < count; ++k) w += sampler(pick(eng), eng);
    batch.ancestors[i] = count;
    batch.values[i] = w;
  });
  return batch;
}

// ---------------------------------------------------------------------------
// Compound Poisson density

struct DensitySeries {
  std::vector<double> y_grid;
  std::vector<double> f;       // f_mu on y_grid
  std::vector<double> g;       // kernel estimate of g_mu on y_grid
  double bandwidth = 0.0;
  double mass = 0.0;           // int f_mu over the working grid
  int terms = 0;               // convolution powers used
};

/// f_mu(y) = sum_k g_mu^{*k}(y) <v,mu>^k e^{-<v,mu>} / k!, with g_mu estimated
/// by a reflected Gaussian KDE of the Y batch and the series summed in
/// Fourier space.
inline DensitySeries density_series(const std::vector<double>& y_samples, double mu_mass,
                                    const std::vector<double>& y_grid) {
  if (y_samples.size() < 2) throw PreconditionError("density_series: need at least two Y samples");
  if (!(mu_mass > 0.0)) throw PreconditionError("density_series: <v, mu> must be > 0");
  for (double y : y_samples)
    if (!(y >= 0.0) || !std::isfinite(y)) throw PreconditionError("density_series: Y samples must be finite and >= 0");

  DensitySeries out;
  out.y_grid = y_grid;
  out.bandwidth = silverman_bandwidth(y_samples);
  const double h = out.bandwidth;
  const double dx = h / 8.0;

  double m1 = 0.0, m2 = 0.0, ymax = 0.0;
  for (double y : y_samples) {
    m1 += y;
    m2 += y * y;
    ymax = std::max(ymax, y);
  }
  m1 /= static_cast<double>(y_samples.size());
  m2 /= static_cast<double>(y_samples.size());
  double gmax = 0.0;
  for (double y : y_grid) gmax = std::max(gmax, y);
  const double span = std::max({gmax, ymax, mu_mass * m1 + 15.0 * std::sqrt(mu_mass * m2)}) + 10.0 * h;
  std::size_t cells = 1;
  while (static_cast<double>(cells) * dx < span) cells <<= 1;
  if (cells > (1u << 24)) throw NumericalError("density_series: grid too large for the bandwidth");

  const std::vector<double> g = binned_kde(y_samples, h, dx, cells);
  std::vector<double> masses(cells);
  for (std::size_t j = 0; j < cells; ++j) masses[j] = g[j] * dx;
  masses[0] *= 0.5;

  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> spec;
  fft.fwd(spec, masses);
  std::vector<std::complex<double>> acc(spec.size(), 0.0);
  std::vector<std::complex<double>> power(spec.size(), 1.0);
  double weight = std::exp(-mu_mass);
  for (int k = 1; k < 100000; ++k) {
    weight *= mu_mass / k;
    for (std::size_t i = 0; i < spec.size(); ++i) {
      power[i] *= spec[i];
      acc[i] += weight * power[i];
    }
    out.terms = k;
    if (weight < 1e-12 && k > mu_mass) break;
  }
  std::vector<double> f_masses;
  fft.inv(f_masses, acc);
  std::vector<double> f(cells);
  double mass = 0.0;
  for (std::size_t j = 0; j < cells; ++j) {
    mass += f_masses[j];
    f[j] = f_masses[j] / dx;
  }
  f[0] *= 2.0;
  out.mass = mass;
  const double expected = 1.0 - std::exp(-mu_mass);
  if (std::abs(mass - expected) > 1e-3)
    throw NumericalError("density_series: mass defect " + std::to_string(std::abs(mass - expected)) +
                         " > 1e-3; the grid is too coarse or too short");

  out.f.reserve(y_grid.size());
  out.g.reserve(y_grid.size());
  for (double y : y_grid) {
    out.f.push_back(grid_interp(f, dx, y));
    out.g.push_back(grid_interp(g, dx, y));
  }
  return out;
}

}  // namespace superlim

#pragma once

// Estimators and checks on sample batches: small-value regression, Laplace
// transform distance, tail-decay statistic and KDE positivity.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <tuple>
#include <random>
#include <vector>

#include "superlim/error.hpp"
#include "superlim/kde.hpp"
#include "superlim/rng.hpp"

namespace superlim {

struct EcdfFit {
  std::vector<double> r_grid;
  std::vector<double> ecdf;  // fraction of all samples with 0 < W <= r
  double slope = 0.0;
  double intercept = 0.0;    // log scale; exp(intercept) estimates the constant
  double slope_lo = 0.0, slope_hi = 0.0;
  double constant_lo = 0.0, constant_hi = 0.0;
  std::size_t positive = 0;
  std::size_t total = 0;

  double constant() const { return std::exp(intercept); }
};

struct SmallValueOptions {
  int points = 20;
  int bootstrap = 200;
  std::uint64_t seed = 0;
  std::size_t min_count = 10;        // samples needed in (0, r_lo]
  std::vector<double> r_grid;        // explicit grid overrides [r_lo, r_hi]
};

namespace detail {

inline std::pair<double, double> ols(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  return {slope, (sy - slope * sx) / n};
}

inline double percentile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace detail

/// Log-spaced grid of n points on [lo, hi].
inline std::vector<double> log_grid(double lo, double hi, int n) {
  std::vector<double> out;
  if (n == 1) return {lo};
  for (int i = 0; i < n; ++i)
    out.push_back(std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * i / (n - 1)));
  return out;
}

/// OLS of log P(0 < W <= r) on log r with multinomial bootstrap intervals.
inline EcdfFit smallvalue_fit(const std::vector<double>& values, double r_lo, double r_hi,
                              const SmallValueOptions& opt = {}) {
  if (values.empty()) throw PreconditionError("smallvalue_fit: empty batch");
  EcdfFit fit;
  fit.r_grid = opt.r_grid.empty() ? log_grid(r_lo, r_hi, opt.points) : opt.r_grid;
  if (fit.r_grid.size() < 2) throw PreconditionError("smallvalue_fit: need at least two grid points");
  if (!std::is_sorted(fit.r_grid.begin(), fit.r_grid.end()) || !(fit.r_grid.front() > 0.0))
    throw PreconditionError("smallvalue_fit: r grid must be positive and increasing");

  std::vector<double> pos;
  pos.reserve(values.size());
  for (double w : values)
    if (w > 0.0) pos.push_back(w);
  std::sort(pos.begin(), pos.end());
  fit.positive = pos.size();
  fit.total = values.size();

  // counts[k] = #{0 < W <= r_k}; bins[k] = counts[k] - counts[k - 1]
  const std::size_t k_max = fit.r_grid.size();
  std::vector<double> counts(k_max);
  for (std::size_t k = 0; k < k_max; ++k)
    counts[k] = static_cast<double>(std::upper_bound(pos.begin(), pos.end(), fit.r_grid[k]) - pos.begin());
  if (counts[0] < static_cast<double>(opt.min_count))
    throw NumericalError("smallvalue_fit: only " + std::to_string(static_cast<long>(counts[0])) +
                         " samples in (0, r_lo]; insufficient positive mass in the window");

  const double n = static_cast<double>(values.size());
  std::vector<double> lx(k_max), ly(k_max);
  for (std::size_t k = 0; k < k_max; ++k) {
    fit.ecdf.push_back(counts[k] / n);
    lx[k] = std::log(fit.r_grid[k]);
    ly[k] = std::log(counts[k] / n);
  }
  std::tie(fit.slope, fit.intercept) = detail::ols(lx, ly);

  std::vector<double> bins(k_max + 1);
  bins[0] = counts[0];
  for (std::size_t k = 1; k < k_max; ++k) bins[k] = counts[k] - counts[k - 1];
  bins[k_max] = n - counts[k_max - 1];

  std::vector<double> slopes, consts;
  for (int b = 0; b < opt.bootstrap; ++b) {
    Philox4x32 eng(opt.seed, static_cast<std::uint64_t>(b));
    double remaining = n, mass_left = 1.0, cum = 0.0;
    bool usable = true;
    for (std::size_t k = 0; k < k_max; ++k) {
      const double p = std::clamp(bins[k] / n / mass_left, 0.0, 1.0);
      std::binomial_distribution<std::int64_t> binom(static_cast<std::int64_t>(remaining), p);
      const double draw = static_cast<double>(binom(eng));
      remaining -= draw;
      mass_left -= bins[k] / n;
      cum += draw;
      if (cum <= 0.0) usable = false;
      ly[k] = std::log(std::max(cum, 1.0) / n);
    }
    if (!usable) continue;
    const auto [s, c] = detail::ols(lx, ly);
    slopes.push_back(s);
    consts.push_back(std::exp(c));
  }
  if (slopes.empty()) {
    fit.slope_lo = fit.slope_hi = fit.slope;
    fit.constant_lo = fit.constant_hi = fit.constant();
  } else {
    fit.slope_lo = std::min(fit.slope, detail::percentile(slopes, 0.025));
    fit.slope_hi = std::max(fit.slope, detail::percentile(slopes, 0.975));
    fit.constant_lo = std::min(fit.constant(), detail::percentile(consts, 0.025));
    fit.constant_hi = std::max(fit.constant(), detail::percentile(consts, 0.975));
  }
  return fit;
}

/// sup over the grid of |mean e^{-theta W} - analytic(theta)|.
inline double laplace_distance(const std::vector<double>& values,
                               const std::function<double(double)>& analytic,
                               const std::vector<double>& theta_grid) {
  if (values.empty()) throw PreconditionError("laplace_distance: empty batch");
  double worst = 0.0;
  for (double theta : theta_grid) {
    double acc = 0.0;
    for (double w : values) acc += std::exp(-theta * w);
    worst = std::max(worst, std::abs(acc / static_cast<double>(values.size()) - analytic(theta)));
  }
  return worst;
}

struct TailCheck {
  std::vector<double> r;
  std::vector<double> statistic;  // r P(W > r) / Ltilde(r)
  std::vector<std::size_t> exceedances;
  bool pass = false;
  bool inconclusive = false;
};

/// Evaluates r P(W > r) / Ltilde(r). Passes when the statistic decreases over
/// the last three points and ends at most a fifth of its first value. The
/// default grid runs from the sample median to the point with 100 exceedances.
inline TailCheck tail_decay_check(const std::vector<double>& values,
                                  const std::function<double(double)>& ltilde,
                                  std::vector<double> r_grid = {}, int points = 8) {
  if (values.size() < 200) throw PreconditionError("tail_decay_check: need at least 200 samples");
  std::vector<double> sorted(values);
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  constexpr std::size_t kMinExceed = 100;
  if (r_grid.empty()) {
    const double lo = std::max(sorted[n / 2], 1.0);
    const double hi = sorted[n - kMinExceed - 1];
    if (!(hi > lo)) throw NumericalError("tail_decay_check: too few samples above the median");
    r_grid = log_grid(lo, hi, points);
  }
  TailCheck out;
  out.r = r_grid;
  for (double r : r_grid) {
    const auto above = static_cast<std::size_t>(sorted.end() - std::upper_bound(sorted.begin(), sorted.end(), r));
    out.exceedances.push_back(above);
    out.statistic.push_back(r * static_cast<double>(above) / static_cast<double>(n) / ltilde(r));
  }
  if (out.exceedances.back() < kMinExceed) {
    out.inconclusive = true;
    return out;
  }
  const std::size_t k = out.statistic.size();
  const bool decreasing = k >= 3 && out.statistic[k - 1] < out.statistic[k - 2] &&
                          out.statistic[k - 2] < out.statistic[k - 3];
  out.pass = decreasing && out.statistic.back() <= out.statistic.front() / 5.0;
  return out;
}

struct KdeCheck {
  std::vector<double> grid;
  std::vector<double> density;  // estimate of the sub-density of W on (0, inf)
  double min_density = 0.0;
  double bandwidth = 0.0;
  double positive_fraction = 0.0;
  bool pass = false;
};

/// Reflected Gaussian KDE of the positive part of W, scaled by the positive
/// fraction so that it estimates f_mu on [a, b].
inline KdeCheck kde_positivity(const std::vector<double>& values, double a, double b,
                               double threshold = 0.02, int points = 200) {
  if (!(b > a) || !(a >= 0.0)) throw PreconditionError("kde_positivity: need 0 <= a < b");
  std::vector<double> pos;
  for (double w : values)
    if (w > 0.0) pos.push_back(w);
  if (pos.size() < 2) throw PreconditionError("kde_positivity: empty positive part");
  KdeCheck out;
  out.positive_fraction = static_cast<double>(pos.size()) / static_cast<double>(values.size());
  out.bandwidth = silverman_bandwidth(pos);
  const double dx = out.bandwidth / 8.0;
  const double top = std::max(b, *std::max_element(pos.begin(), pos.end())) + 8.0 * out.bandwidth;
  const auto cells = static_cast<std::size_t>(std::ceil(top / dx)) + 2;
  const std::vector<double> tab = binned_kde(pos, out.bandwidth, dx, cells);
  out.min_density = std::numeric_limits<double>::infinity();
  for (int i = 0; i < points; ++i) {
    const double y = a + (b - a) * i / (points - 1);
    const double f = out.positive_fraction * grid_interp(tab, dx, y);
    out.grid.push_back(y);
    out.density.push_back(f);
    out.min_density = std::min(out.min_density, f);
  }
  out.pass = out.min_density > threshold;
  return out;
}

}  // namespace superlim

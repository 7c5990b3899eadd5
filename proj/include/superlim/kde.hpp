#pragma once

// Reflected Gaussian kernel density estimates on a uniform grid over [0, inf).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

namespace superlim {

/// Silverman's rule: 0.9 min(sd, IQR / 1.34) n^{-1/5}.
inline double silverman_bandwidth(std::vector<double> x) {
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double ss = 0.0;
  for (double xi : x) ss += (xi - mean) * (xi - mean);
  const double sd = std::sqrt(ss / std::max(1.0, n - 1.0));
  std::sort(x.begin(), x.end());
  auto quant = [&](double p) {
    const double pos = p * (n - 1.0);
    const auto lo = static_cast<std::size_t>(pos);
    const auto hi = std::min(lo + 1, x.size() - 1);
    return x[lo] + (pos - static_cast<double>(lo)) * (x[hi] - x[lo]);
  };
  const double iqr = quant(0.75) - quant(0.25);
  double spread = std::min(sd, iqr / 1.34);
  if (!(spread > 0.0)) spread = sd > 0.0 ? sd : 1.0;
  return 0.9 * spread * std::pow(n, -0.2);
}

// Gaussian KDE with reflection at 0 evaluated on the grid j * dx, j < cells,
// from linear-binned counts.
inline std::vector<double> binned_kde(const std::vector<double>& x, double h, double dx,
                                      std::size_t cells) {
  std::vector<double> bins(cells, 0.0);
  for (double xi : x) {
    const double pos = xi / dx;
    const auto j = static_cast<std::size_t>(pos);
    if (j + 1 >= cells) continue;
    const double frac = pos - static_cast<double>(j);
    bins[j] += 1.0 - frac;
    bins[j + 1] += frac;
  }
  const auto reach = static_cast<std::ptrdiff_t>(std::ceil(6.0 * h / dx));
  std::vector<double> kernel(static_cast<std::size_t>(reach + 1));
  const double norm = 1.0 / (std::sqrt(2.0 * M_PI) * h * static_cast<double>(x.size()));
  for (std::ptrdiff_t k = 0; k <= reach; ++k) {
    const double z = static_cast<double>(k) * dx / h;
    kernel[static_cast<std::size_t>(k)] = norm * std::exp(-0.5 * z * z);
  }
  std::vector<double> out(cells, 0.0);
  const auto n = static_cast<std::ptrdiff_t>(cells);
  for (std::ptrdiff_t j = 0; j < n; ++j) {
    if (bins[static_cast<std::size_t>(j)] == 0.0) continue;
    const double c = bins[static_cast<std::size_t>(j)];
    for (std::ptrdiff_t i = std::max<std::ptrdiff_t>(0, j - reach); i <= std::min(n - 1, j + reach); ++i)
      out[static_cast<std::size_t>(i)] += c * kernel[static_cast<std::size_t>(std::abs(i - j))];
    // mirror image at -y_j
    for (std::ptrdiff_t i = 0; i <= std::min(n - 1, reach - j); ++i)
      out[static_cast<std::size_t>(i)] += c * kernel[static_cast<std::size_t>(i + j)];
  }
  return out;
}

inline double grid_interp(const std::vector<double>& tab, double dx, double y) {
  const double pos = y / dx;
  if (pos <= 0.0) return tab.front();
  const auto j = static_cast<std::size_t>(pos);
  if (j + 1 >= tab.size()) return tab.back();
  const double frac = pos - static_cast<double>(j);
  return tab[j] + frac * (tab[j + 1] - tab[j]);
}

}  // namespace superlim

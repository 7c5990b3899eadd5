#pragma once

// Adaptive Dormand-Prince 5(4) integrator over real or complex state vectors.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <sstream>

#include "superlim/error.hpp"
#include "superlim/linalg.hpp"

namespace superlim {

struct OdeOptions {
  double rtol = 1e-10;
  double atol = 1e-12;
  double h_min = 1e-13;  // relative to max(1, |t|)
  std::size_t max_steps = 20'000'000;
};

struct OdeStats {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
};

namespace detail::dopri {

constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                 a64 = 49.0 / 176, a65 = -5103.0 / 18656;
constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192,
                 a75 = -2187.0 / 6784, a76 = 11.0 / 84;
// fifth-order minus embedded fourth-order weights
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                 e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

}  // namespace detail::dopri

/// Integrates y' = rhs(t, y) from t0 to t1 (t1 >= t0). The local error of each
/// accepted step satisfies |err_i| <= atol + rtol * max(|y_i|, |y_new_i|).
template <class Scalar, class Rhs>
VectorOf<Scalar> integrate_dopri(Rhs&& rhs, VectorOf<Scalar> y, double t0, double t1,
                                 const OdeOptions& opt = {}, OdeStats* stats = nullptr) {
  using namespace detail::dopri;
  using Vec = VectorOf<Scalar>;
  if (!(t1 >= t0)) throw PreconditionError("integrate_dopri: t1 must be >= t0");
  if (t1 == t0 || y.size() == 0) return y;

  auto err_norm = [&](const Vec& err, const Vec& ya, const Vec& yb) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < err.size(); ++i) {
      const double sc = opt.atol + opt.rtol * std::max(std::abs(ya[i]), std::abs(yb[i]));
      worst = std::max(worst, std::abs(err[i]) / sc);
    }
    return worst;
  };

  double t = t0;
  Vec k1 = rhs(t, y);

  // Initial step from the scaled size of y and y' (Hairer, Norsett & Wanner).
  double h;
  {
    double d0 = 0.0, d1 = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      const double sc = opt.atol + opt.rtol * std::abs(y[i]);
      d0 = std::max(d0, std::abs(y[i]) / sc);
      d1 = std::max(d1, std::abs(k1[i]) / sc);
    }
    h = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h = std::min(h, t1 - t0);
  }

  OdeStats local;
  while (t < t1) {
    if (local.accepted + local.rejected > opt.max_steps) {
      std::ostringstream msg;
      msg << "integrate_dopri: step budget exhausted at t = " << t;
      throw NumericalError(msg.str());
    }
    if (h < opt.h_min * std::max(1.0, std::abs(t))) {
      std::ostringstream msg;
      msg << "integrate_dopri: step-size underflow at t = " << t;
      throw NumericalError(msg.str());
    }
    bool last = false;
    if (t + h >= t1) {
      h = t1 - t;
      last = true;
    }

    const Vec k2 = rhs(t + c2 * h, Vec(y + h * (a21 * k1)));
    const Vec k3 = rhs(t + c3 * h, Vec(y + h * (a31 * k1 + a32 * k2)));
    const Vec k4 = rhs(t + c4 * h, Vec(y + h * (a41 * k1 + a42 * k2 + a43 * k3)));
    const Vec k5 =
        rhs(t + c5 * h, Vec(y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4)));
    const Vec k6 = rhs(t + h, Vec(y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 +
                                           a65 * k5)));
    Vec y_new = y + h * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
    const Vec k7 = rhs(t + h, y_new);
    const Vec err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);

    double en = err_norm(err, y, y_new);
    if (!std::isfinite(en)) en = 1e10;
    if (en <= 1.0) {
      t = last ? t1 : t + h;
      y = std::move(y_new);
      k1 = k7;
      ++local.accepted;
      const double fac = en == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(en, -0.2), 0.2, 5.0);
      if (!last) h *= fac;
    } else {
      ++local.rejected;
      h *= std::clamp(0.9 * std::pow(en, -0.2), 0.1, 0.9);
    }
  }
  if (stats) {
    stats->accepted += local.accepted;
    stats->rejected += local.rejected;
  }
  return y;
}

}  // namespace superlim

#pragma once

// Independent reference values: closed forms and plain root finding that do
// not go through the library's ODE or eigen solvers.

#include <cmath>
#include <functional>

namespace oracle {

inline double bisect(const std::function<double(double)>& f, double lo, double hi, double tol = 1e-14) {
  double flo = f(lo);
  for (int i = 0; i < 200 && hi - lo > tol; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double fm = f(mid);
    if ((fm > 0) == (flo > 0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

// poissonic: alpha = 1, beta = 0, one atom r = 1 with weight 2
inline double poissonic_v() {
  return bisect([](double v) { return v + 2.0 * std::exp(-v) - 2.0; }, 0.5, 3.0);
}

inline double poissonic_b() {
  const double v = poissonic_v();
  return 2.0 * std::exp(-v) * (std::exp(v) - 1.0 - v) / v;
}

inline double poissonic_pn(int n) {
  const double v = poissonic_v();
  return std::pow(v, n - 1) / std::tgamma(n + 1.0) * 2.0 * std::exp(-v) / poissonic_b();
}

// feller1: alpha = beta = 1, no jumps
inline double feller_Vt(double theta, double t) {
  return theta * std::exp(t) / (1.0 + theta * (std::exp(t) - 1.0));
}
inline double feller_Phi(double theta) { return theta / (1.0 + theta); }
inline double feller_psi(double theta) { return 1.0 / (1.0 + theta); }

// W = sum_{n <= N} E_n with N ~ Poisson(1), E_n ~ Exp(1): density on (0, inf)
inline double feller_W_density(double y) {
  return std::exp(-1.0 - y) * std::cyl_bessel_i(1.0, 2.0 * std::sqrt(y)) / std::sqrt(y);
}

// largest eigenvalue of [[a, b], [c, d]]
inline double top_eigenvalue_2x2(double a, double b, double c, double d) {
  const double tr = a + d, det = a * d - b * c;
  return 0.5 * (tr + std::sqrt(tr * tr - 4.0 * det));
}

}  // namespace oracle

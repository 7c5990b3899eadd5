#pragma once

// Finite-dimensional checks of the standing assumptions. Failures are
// collected in the report; nothing here throws on a failed check.

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "superlim/linalg.hpp"
#include "superlim/model.hpp"
#include "superlim/spectral.hpp"

namespace superlim {

struct AssumptionReport {
  double M_bound = 0.0;
  bool dual_submarkov_ok = true;
  bool continuity_ok = true;  // no finite-dimensional content, recorded as true
  bool square_integrable_ok = true;
  double square_integral_t1 = 0.0;  // int a_1 dm with a_t(x) = int p(t,x,y)^2 m(dy)
  bool iu_checkable = true;
  bool lambda0_positive = false;
  double lambda0 = 0.0;
  bool extinction_proxy_ok = true;
  std::vector<std::string> failures;
  std::vector<std::string> warnings;

  bool ok() const { return failures.empty(); }
};

/// p(t, x, y) = exp(tQ)[x][y] / m[y].
inline Matrix motion_density(const Scenario& s, double t) {
  Matrix p = expm(t * s.Q());
  for (int y = 0; y < s.sites(); ++y) p.col(y) /= s.m()[y];
  return p;
}

inline AssumptionReport validate_assumptions(const Scenario& s) {
  AssumptionReport rep;
  const int d = s.sites();
  rep.M_bound = branching_bound_M(s);

  constexpr double kColumnTol = 1e-10;
  for (double t : {0.5, 1.0, 2.0}) {
    const Matrix p = motion_density(s, t);
    for (int y = 0; y < d; ++y) {
      double col = 0.0;
      for (int x = 0; x < d; ++x) col += p(x, y) * s.m()[x];
      if (col > 1.0 + kColumnTol) {
        rep.dual_submarkov_ok = false;
        std::ostringstream msg;
        msg << "dual_submarkov: int p(" << t << ", x, " << y << ") m(dx) = " << col << " > 1";
        rep.failures.push_back(msg.str());
      }
    }
  }

  {
    const Matrix p = motion_density(s, 1.0);
    double total = 0.0;
    for (int x = 0; x < d; ++x)
      for (int y = 0; y < d; ++y) total += p(x, y) * p(x, y) * s.m()[y] * s.m()[x];
    rep.square_integral_t1 = total;
    rep.square_integrable_ok = std::isfinite(total);
    if (!rep.square_integrable_ok) rep.failures.push_back("square_integrable: a_1 not integrable");
  }

  const PerronTriple mean = eigentriple_T(s);
  rep.lambda0 = mean.lambda;
  rep.lambda0_positive = mean.lambda > 0.0;
  if (!rep.lambda0_positive) {
    std::ostringstream msg;
    msg << "lambda0_positive: lambda0 = " << mean.lambda << " <= 0 (not supercritical)";
    rep.failures.push_back(msg.str());
  }

  if (!(s.beta().minCoeff() > 0.0)) {
    for (int x = 0; x < d; ++x) {
      if (s.beta()[x] > 0.0 || !s.atoms(x).empty()) continue;
      rep.extinction_proxy_ok = false;
      rep.warnings.push_back("extinction_proxy: site " + std::to_string(x) +
                             " has beta = 0 and no jumps; inf_x q_t0(x) > 0 is not guaranteed");
    }
    if (!rep.extinction_proxy_ok)
      rep.failures.push_back("extinction_proxy: degenerate branching at some site");
  }
  return rep;
}

}  // namespace superlim

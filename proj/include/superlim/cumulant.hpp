#pragma once

// Cumulant flows. V_t solves du/ds = Q u - phi(., u); the v-transformed flow
// Vbar_t f = (v - V_t(v (1 - f))) / v solves g' = Qbar g + phi*(g). The limit
// functionals Phi and psi, the operator A and the small-value constants are
// built on top of both.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss.hpp>

#include "superlim/error.hpp"
#include "superlim/linalg.hpp"
#include "superlim/model.hpp"
#include "superlim/ode.hpp"
#include "superlim/spectral.hpp"

namespace superlim {

struct ExtinctionData {
  Vector v;
  Vector q;                  // e^{-v}
  double residual = 0.0;     // ||V_1 v - v||_inf
  double stationarity = 0.0; // ||Q v - phi(., v)||_inf
  bool newton_converged = false;
  std::vector<std::string> warnings;
};

/// Skeleton branching coefficients at every site.
struct SkeletonCoefficients {
  Vector b;
  std::vector<std::vector<double>> offspring;  // offspring[x][n - 2] = p_n(x)
  std::vector<double> mass_before_fold;        // sum of tabulated p_n before the tail fold
  Vector mean_offspring;                       // sum n p_n
  Vector factorial_moment2;                    // sum n (n - 1) p_n
};

/// Everything the limit computations need, solved once per scenario.
struct ModelSolution {
  Scenario scenario;
  ExtinctionData extinction;
  SpectralData spectral;
  SkeletonCoefficients coeffs;
  Matrix qbar;

  const Vector& v() const { return extinction.v; }
  double lambda0() const { return spectral.lambda0; }
  double lambda0_star() const { return spectral.lambda0_star; }
};

struct LimitOptions {
  double tol = 1e-8;          // successive-horizon change, relative
  double horizon_cap = 1e3;   // largest T tried
  OdeOptions ode{};
};

// ---------------------------------------------------------------------------
// Flows

namespace detail {

template <class S>
VectorOf<S> v_rhs(const Scenario& s, const VectorOf<S>& u) {
  VectorOf<S> out = s.Q().template cast<S>() * u;
  for (int x = 0; x < u.size(); ++x) out[x] -= phi_unchecked(s, x, u[x]);
  return out;
}

inline OdeOptions scaled_atol(OdeOptions opt, double scale) {
  if (scale > 0.0 && std::isfinite(scale)) opt.atol = std::min(opt.atol, opt.atol * scale);
  return opt;
}

}  // namespace detail

/// V_t f by adaptive Runge-Kutta. Real inputs must be non-negative.
template <class S>
VectorOf<S> solve_Vt(const Scenario& s, const VectorOf<S>& f, double t,
                     const OdeOptions& opt = {}) {
  if (f.size() != s.sites()) throw PreconditionError("solve_Vt: dimension mismatch");
  if (!(t >= 0.0)) throw PreconditionError("solve_Vt: t must be >= 0");
  if constexpr (std::is_same_v<S, double>) {
    if ((f.array() < 0.0).any()) throw PreconditionError("solve_Vt: f must be >= 0");
  }
  auto rhs = [&](double, const VectorOf<S>& u) { return detail::v_rhs<S>(s, u); };
  return integrate_dopri<S>(rhs, f, 0.0, t, detail::scaled_atol(opt, sup_norm(f)));
}

/// Qbar f = v^{-1} [Q (v f) - f phi(., v)]; the diagonal uses phi(v) in place
/// of Q v, so the row sums equal the stationarity defect divided by v.
inline Matrix qbar_matrix(const Scenario& s, const Vector& v) {
  const int d = s.sites();
  Matrix out(d, d);
  for (int x = 0; x < d; ++x)
    for (int y = 0; y < d; ++y)
      out(x, y) = (x == y) ? s.Q()(x, x) - eval_phi(s, x, v[x]) / v[x]
                           : s.Q()(x, y) * v[y] / v[x];
  return out;
}

/// phi*_0(x, l) = beta v l^2 + v^{-1} sum_k w_k e^{-r_k v} (e^{r_k v l} - 1 - r_k v l).
template <class Z>
Z phi_star0(const Scenario& s, const Vector& v, int x, Z lambda) {
  const double vx = v[x];
  Z out = s.beta()[x] * vx * lambda * lambda;
  for (const Atom& a : s.atoms(x))
    out += a.w * std::exp(-a.r * vx) * detail::expm1_minus_linear(Z(a.r * vx) * lambda) / vx;
  return out;
}

/// b(x) = beta v + v^{-1} sum_k w_k (e^{r_k v} - 1 - r_k v) e^{-r_k v}.
inline double branching_rate_b(const Scenario& s, const Vector& v, int x) {
  const double vx = v[x];
  double out = s.beta()[x] * vx;
  for (const Atom& a : s.atoms(x))
    out += a.w * std::exp(-a.r * vx) * detail::expm1_minus_linear(a.r * vx) / vx;
  return out;
}

/// phi*(x, l) = phi*_0(x, l) - b(x) l.
template <class Z>
Z phi_star(const Scenario& s, const Vector& v, const Vector& b, int x, Z lambda) {
  return phi_star0(s, v, x, lambda) - b[x] * lambda;
}

namespace detail {

// State of a Vbar computation: either still in V-coordinates (u = v (1 - g),
// accurate while u is small) or in g-coordinates (accurate while g is small).
template <class S>
struct FlowState {
  bool in_u = true;
  VectorOf<S> val;

  VectorOf<S> as_g(const Vector& v) const {
    if (!in_u) return val;
    VectorOf<S> g(val.size());
    for (int x = 0; x < val.size(); ++x) g[x] = S(1.0) - val[x] / v[x];
    return g;
  }
  VectorOf<S> as_u(const Vector& v) const {
    if (in_u) return val;
    VectorOf<S> u(val.size());
    for (int x = 0; x < val.size(); ++x) u[x] = v[x] * (S(1.0) - val[x]);
    return u;
  }
};

template <class S>
double max_ratio(const VectorOf<S>& u, const Vector& v) {
  double out = 0.0;
  for (int x = 0; x < u.size(); ++x) out = std::max(out, std::abs(u[x]) / v[x]);
  return out;
}

// Advances a flow state by t. V-coordinates are kept while ||u / v|| < 1/2,
// in unit chunks, then the g-equation takes over.
template <class S>
FlowState<S> advance(const Scenario& s, const Vector& v, const Vector& b, const Matrix& qbar,
                     FlowState<S> st, double t, const OdeOptions& opt) {
  double done = 0.0;
  if (st.in_u) {
    const OdeOptions uopt = scaled_atol(opt, max_ratio<S>(st.val, v));
    auto rhs = [&](double, const VectorOf<S>& u) { return v_rhs<S>(s, u); };
    while (done < t && max_ratio<S>(st.val, v) < 0.5) {
      const double step = std::min(1.0, t - done);
      st.val = integrate_dopri<S>(rhs, st.val, 0.0, step, uopt);
      done += step;
    }
    if (done >= t) return st;
    st.val = st.as_g(v);
    st.in_u = false;
  }
  OdeOptions gopt = opt;
  gopt.atol = std::min(opt.atol, 1e-14);
  const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> qb = qbar.template cast<S>();
  auto rhs = [&](double, const VectorOf<S>& g) {
    VectorOf<S> out = qb * g;
    for (int x = 0; x < g.size(); ++x) out[x] += phi_star(s, v, b, x, g[x]);
    return out;
  };
  st.val = integrate_dopri<S>(rhs, st.val, 0.0, t - done, gopt);
  return st;
}

template <class S>
void check_band(const VectorOf<S>& g, const char* who) {
  constexpr double kSlack = 1e-9;
  for (int x = 0; x < g.size(); ++x) {
    bool bad;
    if constexpr (std::is_same_v<S, double>)
      bad = !(g[x] >= -kSlack && g[x] <= 1.0 + kSlack);
    else
      bad = !(std::abs(g[x]) <= 1.0 + kSlack);
    if (bad) {
      std::ostringstream msg;
      msg << who << ": value " << g[x] << " at site " << x << " left the unit band";
      throw NumericalError(msg.str());
    }
  }
}

template <class S>
void check_unit_input(const VectorOf<S>& f, const char* who) {
  for (int x = 0; x < f.size(); ++x) {
    bool bad;
    if constexpr (std::is_same_v<S, double>)
      bad = !(f[x] >= 0.0 && f[x] <= 1.0);
    else
      bad = !(std::abs(f[x]) <= 1.0 + 1e-12);
    if (bad) throw PreconditionError(std::string(who) + ": f must lie in the unit band");
  }
}

}  // namespace detail

/// Vbar_t f for f in the unit band (real [0, 1] or complex |f| <= 1).
template <class S>
VectorOf<S> vbar_t(const ModelSolution& sol, const VectorOf<S>& f, double t,
                   const OdeOptions& opt = {}) {
  if (f.size() != sol.scenario.sites()) throw PreconditionError("vbar_t: dimension mismatch");
  if (!(t >= 0.0)) throw PreconditionError("vbar_t: t must be >= 0");
  detail::check_unit_input<S>(f, "vbar_t");
  detail::FlowState<S> st;
  st.in_u = false;
  st.val = f;
  double gap = 0.0;  // ||1 - f||
  for (int x = 0; x < f.size(); ++x) gap = std::max(gap, std::abs(S(1.0) - f[x]));
  if (gap < 0.25) {
    st.val = st.as_u(sol.v());
    st.in_u = true;
  }
  st = detail::advance<S>(sol.scenario, sol.v(), sol.coeffs.b, sol.qbar, std::move(st), t, opt);
  VectorOf<S> g = st.as_g(sol.v());
  detail::check_band<S>(g, "vbar_t");
  return g;
}

/// Vbar_t through the defining formula (v - V_t(v (1 - f))) / v; kept as an
/// independent cross-check of the g-equation.
template <class S>
VectorOf<S> vbar_t_direct(const ModelSolution& sol, const VectorOf<S>& f, double t,
                          const OdeOptions& opt = {}) {
  const Vector& v = sol.v();
  VectorOf<S> u(f.size());
  for (int x = 0; x < f.size(); ++x) u[x] = v[x] * (S(1.0) - f[x]);
  const VectorOf<S> ut = solve_Vt<S>(sol.scenario, u, t, opt);
  VectorOf<S> g(f.size());
  for (int x = 0; x < f.size(); ++x) g[x] = (v[x] - ut[x]) / v[x];
  return g;
}

/// T*_t f as a matrix-vector product.
inline Vector tstar_t(const ModelSolution& sol, const Vector& f, double t) {
  return semigroup_T_star(sol.scenario, sol.v(), t) * f;
}

// ---------------------------------------------------------------------------
// Extinction

/// Solves v = -log q from the V-flow started high, then damped Newton on the
/// stationarity equation Q v = phi(., v).
inline ExtinctionData extinction_v(const Scenario& s, const SpectralData* spectral = nullptr) {
  const int d = s.sites();
  double lambda0 = spectral ? spectral->lambda0 : eigentriple_T(s).lambda;
  if (!(lambda0 > 0.0))
    throw ModelError("extinction_v: lambda0 = " + std::to_string(lambda0) +
                     " <= 0; the process is not supercritical");

  const double amax = s.alpha().cwiseAbs().maxCoeff();
  const double bmin = s.beta().minCoeff();
  const double theta0 = bmin > 0.0 ? std::min(100.0 * (1.0 + amax / bmin), 1e4) : 1e4;

  ExtinctionData out;
  Vector u = Vector::Constant(d, theta0);
  bool settled = false;
  for (int chunk = 0; chunk < 5000; ++chunk) {
    Vector next = solve_Vt<double>(s, u, 1.0);
    const double delta = (next - u).cwiseAbs().maxCoeff();
    u = std::move(next);
    if (delta < 1e-12 * std::max(1.0, sup_norm(u))) {
      settled = true;
      break;
    }
  }
  if (!settled) out.warnings.push_back("flow did not settle to 1e-12; relying on Newton");
  if (!(u.minCoeff() > 1e-8))
    throw ModelError("extinction_v: flow collapsed to v = 0; the scenario may go extinct a.s.");

  auto residual = [&](const Vector& w) {
    Vector r = s.Q() * w;
    for (int x = 0; x < d; ++x) r[x] -= eval_phi(s, x, w[x]);
    return r;
  };
  Vector f = residual(u);
  double fn = sup_norm(f);
  for (int it = 0; it < 60 && fn > 1e-15 * std::max(1.0, sup_norm(u)); ++it) {
    const Matrix jac = twisted_generator(s, u);
    const Vector step = jac.fullPivLu().solve(f);
    double damp = 1.0;
    bool accepted = false;
    for (int k = 0; k < 40; ++k) {
      const Vector trial = u - damp * step;
      if (trial.minCoeff() > 0.0) {
        const Vector ft = residual(trial);
        if (sup_norm(ft) < fn) {
          u = trial;
          f = ft;
          fn = sup_norm(ft);
          accepted = true;
          break;
        }
      }
      damp *= 0.5;
    }
    if (!accepted) break;
  }
  out.newton_converged = fn <= 1e-12 * std::max(1.0, sup_norm(u));
  if (!out.newton_converged)
    out.warnings.push_back("Newton polish did not converge; keeping the flow result");

  out.v = u;
  out.q = (-u).array().exp().matrix();
  out.stationarity = fn;
  out.residual = sup_norm(solve_Vt<double>(s, u, 1.0) - u);
  return out;
}

// ---------------------------------------------------------------------------
// Skeleton coefficients

inline SkeletonCoefficients skeleton_coefficients(const Scenario& s, const Vector& v,
                                                  double truncation = 1e-12) {
  const int d = s.sites();
  SkeletonCoefficients c;
  c.b.resize(d);
  c.mean_offspring.resize(d);
  c.factorial_moment2.resize(d);
  c.offspring.resize(static_cast<std::size_t>(d));
  c.mass_before_fold.resize(static_cast<std::size_t>(d));
  for (int x = 0; x < d; ++x) {
    const double vx = v[x];
    const double b = branching_rate_b(s, v, x);
    if (!(b > 0.0))
      throw ModelError("skeleton_coefficients: b(" + std::to_string(x) +
                       ") = 0, the skeleton is degenerate (no branching at this site)");
    c.b[x] = b;
    std::vector<double> p;
    double cum = 0.0;
    for (int n = 2; n < 1'000'000; ++n) {
      double pn = 0.0;
      for (const Atom& a : s.atoms(x)) {
        const double logt = (n - 1) * std::log(vx) - std::lgamma(n + 1.0) - std::log(b) +
                            std::log(a.w) + n * std::log(a.r) - vx * a.r;
        pn += std::exp(logt);
      }
      if (n == 2) pn += s.beta()[x] * vx / b;
      p.push_back(pn);
      cum += pn;
      if (cum >= 1.0 - truncation) break;
    }
    c.mass_before_fold[static_cast<std::size_t>(x)] = cum;
    p.back() += 1.0 - cum;
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double n = static_cast<double>(i + 2);
      m1 += n * p[i];
      m2 += n * (n - 1.0) * p[i];
    }
    c.mean_offspring[x] = m1;
    c.factorial_moment2[x] = m2;
    c.offspring[static_cast<std::size_t>(x)] = std::move(p);
  }
  return c;
}

/// Runs the whole deterministic pipeline for a scenario.
inline ModelSolution solve_model(const Scenario& s) {
  ModelSolution sol;
  sol.scenario = s;
  sol.spectral = mean_spectral_data(s);
  sol.extinction = extinction_v(s, &sol.spectral);
  attach_star(sol.spectral, s, sol.v());
  sol.coeffs = skeleton_coefficients(s, sol.v());
  sol.qbar = qbar_matrix(s, sol.v());
  return sol;
}

// ---------------------------------------------------------------------------
// Limits

template <class S>
struct LimitValue {
  VectorOf<S> Phi;
  VectorOf<S> psi;
  double horizon = 0.0;  // T at which the doubling converged
  double change = 0.0;   // last successive difference
};

namespace detail {

template <class S>
LimitValue<S> phi_psi_at(const ModelSolution& sol, S theta, double T, const OdeOptions& opt) {
  const Vector& v = sol.v();
  FlowState<S> st;
  st.in_u = true;
  st.val = (theta * std::exp(-sol.lambda0() * T)) * sol.spectral.phi0.template cast<S>();
  st = advance<S>(sol.scenario, v, sol.coeffs.b, sol.qbar, std::move(st), T, opt);
  LimitValue<S> out;
  out.Phi = st.as_u(v);
  out.psi = st.as_g(v);
  out.horizon = T;
  return out;
}

template <class S>
LimitValue<S> limit(const ModelSolution& sol, S theta, const LimitOptions& opt) {
  const int d = sol.scenario.sites();
  if (std::abs(theta) == 0.0) {
    LimitValue<S> zero;
    zero.Phi = VectorOf<S>::Zero(d);
    zero.psi = VectorOf<S>::Ones(d);
    return zero;
  }
  const double lam = sol.lambda0();
  if (!(lam > 0.0)) throw ModelError("Phi limit: lambda0 <= 0; the process is not supercritical");
  const double scale = std::abs(theta) * sup_norm(Vector(sol.spectral.phi0.cwiseQuotient(sol.v())));
  double T = std::max(1.0, std::log(std::max(scale, 1e-300) / 1e-4) / lam);
  LimitValue<S> prev = phi_psi_at<S>(sol, theta, T, opt.ode);
  while (2.0 * T <= opt.horizon_cap) {
    T *= 2.0;
    LimitValue<S> cur = phi_psi_at<S>(sol, theta, T, opt.ode);
    const double dphi = sup_norm(VectorOf<S>(cur.Phi - prev.Phi));
    const double dpsi = sup_norm(VectorOf<S>(cur.psi - prev.psi));
    cur.change = std::max(dphi / std::max(sup_norm(cur.Phi), 1e-300),
                          dpsi / std::max(sup_norm(cur.psi), 1e-300));
    if (cur.change < opt.tol) return cur;
    prev = std::move(cur);
  }
  std::ostringstream msg;
  msg << "Phi limit did not converge by T = " << T << " (theta = " << theta
      << "); check llogl_check, the L log L condition may fail";
  throw NumericalError(msg.str());
}

}  // namespace detail

/// Phi(theta, .) = lim_T V_T(theta e^{-lambda0 T} phi0).
inline Vector big_Phi(const ModelSolution& sol, double theta, const LimitOptions& opt = {}) {
  if (!(theta >= 0.0)) throw PreconditionError("big_Phi: theta must be >= 0");
  return detail::limit<double>(sol, theta, opt).Phi;
}

/// Phi(i theta, .), the log characteristic functional of W.
inline CVector big_Phi_imag(const ModelSolution& sol, double theta, const LimitOptions& opt = {}) {
  return detail::limit<Complex>(sol, Complex(0.0, theta), opt).Phi;
}

/// psi(theta, .) = (v - Phi(theta, .)) / v.
inline Vector psi_eval(const ModelSolution& sol, double theta, const LimitOptions& opt = {}) {
  if (!(theta >= 0.0)) throw PreconditionError("psi_eval: theta must be >= 0");
  Vector psi = detail::limit<double>(sol, theta, opt).psi;
  detail::check_band<double>(psi, "psi_eval");
  return psi;
}

/// psi(i theta, .), the characteristic function of Y at each site.
inline CVector psi_imag(const ModelSolution& sol, double theta, const LimitOptions& opt = {}) {
  CVector psi = detail::limit<Complex>(sol, Complex(0.0, theta), opt).psi;
  detail::check_band<Complex>(psi, "psi_imag");
  return psi;
}

/// max_x |psi(theta) - Vbar_t(psi(theta e^{-lambda0 t}))|.
inline double psi_residual(const ModelSolution& sol, double theta, double t,
                           const LimitOptions& opt = {}) {
  const Vector lhs = psi_eval(sol, theta, opt);
  const Vector inner = psi_eval(sol, theta * std::exp(-sol.lambda0() * t), opt);
  return sup_norm(Vector(lhs - vbar_t<double>(sol, inner, t, opt.ode)));
}

/// max_x |Phi(theta) - V_t(Phi(theta e^{-lambda0 t}))|.
inline double phi_residual(const ModelSolution& sol, double theta, double t,
                           const LimitOptions& opt = {}) {
  const Vector lhs = big_Phi(sol, theta, opt);
  const Vector inner = big_Phi(sol, theta * std::exp(-sol.lambda0() * t), opt);
  return sup_norm(Vector(lhs - solve_Vt<double>(sol.scenario, inner, t, opt.ode)));
}

// ---------------------------------------------------------------------------
// Operator A

struct AValue {
  double value = 0.0;
  double error = 0.0;    // change at the last panel doubling
  double horizon = 0.0;  // truncation point S
  int panels = 0;
};

/// A(f) = int_0^inf e^{-lambda0* s} <phi*_0(Vbar_s f), psi0*>_m ds + <f, psi0*>_m
/// for 0 <= f, ||f||_inf < 1.
inline AValue operator_A(const ModelSolution& sol, const Vector& f, const OdeOptions& ode = {}) {
  const Scenario& s = sol.scenario;
  const int d = s.sites();
  if (f.size() != d) throw PreconditionError("operator_A: dimension mismatch");
  if ((f.array() < 0.0).any() || !(sup_norm(f) < 1.0))
    throw PreconditionError("operator_A: requires 0 <= f and ||f||_inf < 1");
  const double ls = sol.lambda0_star();
  const Vector& psi_star = sol.spectral.psi0_star;
  const Vector& m = s.m();
  const double tail_term = inner_m(f, psi_star, m);
  AValue out;
  if (sup_norm(f) == 0.0) return out;

  auto integrand = [&](double t, const Vector& g) {
    double acc = 0.0;
    for (int x = 0; x < d; ++x) acc += phi_star0(s, sol.v(), x, g[x]) * psi_star[x] * m[x];
    return std::exp(-ls * t) * acc;
  };

  // Truncation horizon: once Vbar_s f <= 1/4, the integrand decays at least
  // like e^{lambda0* s}, so its remaining mass is about I(S) / |lambda0*|.
  double S = 0.0;
  Vector g = f;
  for (int k = 0; k < 100000; ++k) {
    g = vbar_t<double>(sol, g, 1.0, ode);
    S += 1.0;
    if (sup_norm(g) <= 0.25 && 2.0 * integrand(S, g) / std::abs(ls) < 1e-10) break;
  }
  out.horizon = S;

  using Gauss = boost::math::quadrature::gauss<double, 10>;
  std::vector<double> unit_nodes, unit_weights;  // on [0, 1]
  {
    const auto& ab = Gauss::abscissa();
    const auto& wt = Gauss::weights();
    for (std::size_t i = ab.size(); i-- > 0;) {
      unit_nodes.push_back(0.5 * (1.0 - ab[i]));
      unit_weights.push_back(0.5 * wt[i]);
    }
    for (std::size_t i = 0; i < ab.size(); ++i) {
      unit_nodes.push_back(0.5 * (1.0 + ab[i]));
      unit_weights.push_back(0.5 * wt[i]);
    }
  }

  auto panel_sum = [&](int panels) {
    const double h = S / panels;
    double total = 0.0;
    double t = 0.0;
    Vector cur = f;
    for (int p = 0; p < panels; ++p) {
      const double a = p * h;
      for (std::size_t i = 0; i < unit_nodes.size(); ++i) {
        const double node = a + h * unit_nodes[i];
        cur = vbar_t<double>(sol, cur, node - t, ode);
        t = node;
        total += h * unit_weights[i] * integrand(t, cur);
      }
    }
    return total;
  };

  int panels = std::max(1, static_cast<int>(std::ceil(S)));
  double prev = panel_sum(panels);
  for (int k = 0; k < 8; ++k) {
    panels *= 2;
    const double cur = panel_sum(panels);
    out.error = std::abs(cur - prev);
    prev = cur;
    if (out.error < 1e-8 * std::max(1.0, std::abs(cur))) break;
  }
  out.panels = panels;
  out.value = prev + tail_term;
  return out;
}

/// A(f) from the limit e^{-lambda0* t} Vbar_t f / phi0*, evaluated at t.
inline Vector operator_A_dual(const ModelSolution& sol, const Vector& f, double t,
                              const OdeOptions& ode = {}) {
  const Vector g = vbar_t<double>(sol, f, t, ode);
  return std::exp(-sol.lambda0_star() * t) * g.cwiseQuotient(sol.spectral.phi0_star);
}

struct SmallValueConstants {
  double epsilon0 = 0.0;
  double A_psi1 = 0.0;
  double A_error = 0.0;
  double constant = 0.0;
};

/// epsilon0 = -lambda0*/lambda0 and
/// constant = e^{-<v, mu>} A(psi(1)) <v phi0*, mu> / Gamma(epsilon0 + 1).
inline SmallValueConstants smallvalue_constants(const ModelSolution& sol, const Vector& mu,
                                                const LimitOptions& opt = {}) {
  if (!(sol.lambda0() > 0.0))
    throw ModelError("smallvalue_constants: lambda0 <= 0; the process is not supercritical");
  if (mu.size() != sol.scenario.sites() || !(mu.sum() > 0.0))
    throw PreconditionError("smallvalue_constants: mu must be non-zero");
  SmallValueConstants out;
  out.epsilon0 = -sol.lambda0_star() / sol.lambda0();
  const AValue a = operator_A(sol, psi_eval(sol, 1.0, opt), opt.ode);
  out.A_psi1 = a.value;
  out.A_error = a.error;
  const double vmu = sol.v().dot(mu);
  const double vphimu = sol.v().cwiseProduct(sol.spectral.phi0_star).dot(mu);
  out.constant = std::exp(-vmu) * a.value * vphimu / std::tgamma(out.epsilon0 + 1.0);
  return out;
}

// ---------------------------------------------------------------------------
// L log L, gamma_t, comparability

struct LlogLResult {
  bool finite = true;
  double value = 0.0;
  double atomic = 0.0;
  double tail = 0.0;
};

/// sum_x m phi0 psi0 int_{r > 1} r ln r n(x, dr). A log-heavy tail
/// c r^{-p} (ln r)^{-q} on (cutoff, inf) contributes infinity iff p < 2 or
/// p = 2 and q <= 2.
inline LlogLResult llogl_check(const Scenario& s, const SpectralData& spec) {
  LlogLResult out;
  double weight_total = 0.0;
  for (int x = 0; x < s.sites(); ++x) {
    const double weight = s.m()[x] * spec.phi0[x] * spec.psi0[x];
    weight_total += weight;
    double site = 0.0;
    for (const Atom& a : s.atoms(x))
      if (a.r > 1.0) site += a.w * a.r * std::log(a.r);
    out.atomic += weight * site;
  }
  if (s.branching.tail) {
    const TailDescriptor& t = *s.branching.tail;
    const double lc = std::log(t.cutoff);
    double integral;
    if (t.power < 2.0 || (t.power == 2.0 && t.log_power <= 2.0)) {
      integral = std::numeric_limits<double>::infinity();
    } else if (t.power == 2.0) {
      integral = t.c * std::pow(lc, 2.0 - t.log_power) / (t.log_power - 2.0);
    } else {
      // r = e^u: c int_{ln cutoff}^inf e^{(2 - p) u} u^{1 - q} du
      boost::math::quadrature::exp_sinh<double> integrator;
      const double k = t.power - 2.0;
      const double q = t.log_power;
      integral = t.c * integrator.integrate(
                           [&](double y) { return std::exp(-k * (lc + y)) * std::pow(lc + y, 1.0 - q); });
    }
    out.tail = weight_total * integral;
  }
  out.value = out.atomic + out.tail;
  out.finite = std::isfinite(out.value);
  return out;
}

struct GammaL {
  double gamma = 0.0;  // <Phi(e^{-lambda0 t}), psi0>_m
  double L = 0.0;      // e^{lambda0 t} gamma
  double r = 0.0;      // e^{lambda0 t}
  double h_sup = 0.0;  // ||Phi(e^{-lambda0 t}) / (gamma phi0) - 1||_inf
};

inline GammaL gamma_L(const ModelSolution& sol, double t, const LimitOptions& opt = {}) {
  if (!(t >= 0.0)) throw PreconditionError("gamma_L: t must be >= 0");
  const double theta = std::exp(-sol.lambda0() * t);
  const Vector phi = big_Phi(sol, theta, opt);
  GammaL out;
  out.gamma = inner_m(phi, sol.spectral.psi0, sol.scenario.m());
  out.L = out.gamma / theta;
  out.r = 1.0 / theta;
  out.h_sup = sup_norm(Vector(phi.array() / (out.gamma * sol.spectral.phi0.array()) - 1.0));
  return out;
}

/// Ltilde(r) = L(log r / lambda0) for r >= 1.
inline double Ltilde(const ModelSolution& sol, double r, const LimitOptions& opt = {}) {
  if (!(r >= 1.0)) throw PreconditionError("Ltilde: r must be >= 1");
  return gamma_L(sol, std::log(r) / sol.lambda0(), opt).L;
}

/// C1, C2 with C1 phi0 <= v <= C2 phi0.
inline std::pair<double, double> comparability_constants(const ModelSolution& sol) {
  const Vector ratio = sol.v().cwiseQuotient(sol.spectral.phi0);
  return {ratio.minCoeff(), ratio.maxCoeff()};
}

// ---------------------------------------------------------------------------
// Tables

struct CumulantTable {
  std::vector<double> theta_grid;
  Matrix Phi;  // grid x sites
  Matrix psi;
  std::vector<double> complex_grid;
  Eigen::MatrixXcd psi_complex;
  double horizon_T = 0.0;  // largest horizon used by the limit
  double l0_convention = 1.0;
};

inline CumulantTable cumulant_table(const ModelSolution& sol, const std::vector<double>& theta_grid,
                                    const std::vector<double>& complex_grid,
                                    const LimitOptions& opt = {}) {
  const int d = sol.scenario.sites();
  CumulantTable out;
  out.theta_grid = theta_grid;
  out.complex_grid = complex_grid;
  out.Phi.resize(static_cast<Eigen::Index>(theta_grid.size()), d);
  out.psi.resize(static_cast<Eigen::Index>(theta_grid.size()), d);
  out.psi_complex.resize(static_cast<Eigen::Index>(complex_grid.size()), d);
  for (std::size_t i = 0; i < theta_grid.size(); ++i) {
    if (!(theta_grid[i] >= 0.0)) throw PreconditionError("theta grid must be >= 0");
    const auto lv = detail::limit<double>(sol, theta_grid[i], opt);
    out.Phi.row(static_cast<Eigen::Index>(i)) = lv.Phi.transpose();
    out.psi.row(static_cast<Eigen::Index>(i)) = lv.psi.transpose();
    out.horizon_T = std::max(out.horizon_T, lv.horizon);
  }
  for (std::size_t i = 0; i < complex_grid.size(); ++i) {
    const auto lv = detail::limit<Complex>(sol, Complex(0.0, complex_grid[i]), opt);
    out.psi_complex.row(static_cast<Eigen::Index>(i)) = lv.psi.transpose();
    out.horizon_T = std::max(out.horizon_T, lv.horizon);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Characteristic-function checks

struct CharFnCheck {
  double sup_unit = 0.0;                // max over theta in [1, 2] of ||psi(i theta)||_inf
  double delta = 0.0;                   // 0.8 epsilon0
  std::vector<double> decade_max;       // max of theta^delta ||psi(i theta)|| per decade from 10
  bool unit_ok = false;
  bool envelope_ok = false;
};

/// sup_{[1,2]} ||psi(i theta)||_inf < 1, and the decade maxima of
/// theta^{0.8 epsilon0} ||psi(i theta)||_inf over [10, 10^4] do not increase.
inline CharFnCheck charfn_check(const ModelSolution& sol, int points_per_decade = 16,
                                const LimitOptions& opt = {}) {
  CharFnCheck out;
  for (int i = 0; i <= 20; ++i) {
    const double theta = 1.0 + i / 20.0;
    out.sup_unit = std::max(out.sup_unit, sup_norm(psi_imag(sol, theta, opt)));
  }
  out.unit_ok = out.sup_unit < 1.0;
  out.delta = 0.8 * (-sol.lambda0_star() / sol.lambda0());
  for (int dec = 1; dec <= 3; ++dec) {
    double best = 0.0;
    for (int i = 0; i <= points_per_decade; ++i) {
      const double theta = std::pow(10.0, dec + static_cast<double>(i) / points_per_decade);
      best = std::max(best, std::pow(theta, out.delta) * sup_norm(psi_imag(sol, theta, opt)));
    }
    out.decade_max.push_back(best);
  }
  out.envelope_ok = true;
  for (std::size_t i = 1; i < out.decade_max.size(); ++i)
    if (out.decade_max[i] > out.decade_max[i - 1]) out.envelope_ok = false;
  return out;
}

}  // namespace superlim

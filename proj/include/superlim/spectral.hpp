#pragma once

// Mean semigroup T_t = exp(t (Q + diag alpha)), its Perron eigendata, the
// twisted generator Q - diag(d/dz phi(., v)) and fitted intrinsic
// ultracontractivity constants.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "superlim/error.hpp"
#include "superlim/linalg.hpp"
#include "superlim/model.hpp"

namespace superlim {

/// Leading eigenvalue with right eigenvector phi and m-dual eigenvector psi,
/// normalised by ||phi||_{2,m} = 1 and <phi, psi>_m = 1.
struct PerronTriple {
  double lambda = 0.0;
  Vector phi;
  Vector psi;
  double residual = 0.0;  // max of the right and left eigen-residuals
};

struct IuFit {
  double delta = 0.0;
  double c = 0.0;
  double gamma = std::numeric_limits<double>::infinity();
  double slack = 1.0;      // c over the least-squares constant
  bool degenerate = true;  // projector exact on the grid (d = 1)
};

struct SpectralData {
  double lambda0 = 0.0;
  Vector phi0;
  Vector psi0;
  double lambda1 = -std::numeric_limits<double>::infinity();  // second eigenvalue (real part)
  double residual = 0.0;
  double lambda0_star = 0.0;
  Vector phi0_star;
  Vector psi0_star;
  double residual_star = 0.0;
  std::vector<IuFit> iu;
};

namespace detail {

// Dominant eigenvector of an essentially non-negative irreducible matrix by
// power iteration on exp(tau (A - shift I)); tau doubles when convergence is slow.
inline Vector perron_vector(const Matrix& a) {
  const Eigen::Index d = a.rows();
  Vector x = Vector::Constant(d, 1.0 / std::sqrt(static_cast<double>(d)));
  if (d == 1) return Vector::Ones(1);

  double shift = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < d; ++i) {
    double row = a(i, i);
    for (Eigen::Index j = 0; j < d; ++j)
      if (j != i) row += a(i, j);
    shift = std::max(shift, row);
  }

  double tau = 1.0;
  bool converged = false;
  for (int round = 0; round < 16 && !converged; ++round) {
    const Matrix p = expm(tau * (a - shift * Matrix::Identity(d, d)));
    for (int it = 0; it < 2000; ++it) {
      Vector y = p * x;
      y /= y.norm();
      const double change = (y - x).cwiseAbs().maxCoeff();
      x = std::move(y);
      if (change < 1e-15) {
        converged = true;
        break;
      }
    }
    shift = x.dot(a * x) / x.dot(x);
    tau *= 2.0;
  }
  // A vector stalled at the rounding floor is still returned; callers check
  // the residual.
  return x;
}

inline void polish(const Matrix& a, Vector& x, double& lambda) {
  const Eigen::Index d = a.rows();
  for (int it = 0; it < 3; ++it) {
    const double res = (a * x - lambda * x).cwiseAbs().maxCoeff();
    if (res < 1e-14 * (1.0 + std::abs(lambda))) return;
    const double sigma = lambda + 1e-9 * (1.0 + std::abs(lambda));
    Vector y = (a - sigma * Matrix::Identity(d, d)).fullPivLu().solve(x);
    if (!y.allFinite()) return;
    if (y.sum() < 0.0) y = -y;
    x = y / y.norm();
    lambda = x.dot(a * x) / x.dot(x);
  }
}

}  // namespace detail

/// Perron triple of a generator-like matrix A (non-negative off-diagonal,
/// irreducible) with m-weighted normalisation.
inline PerronTriple perron_triple(const Matrix& a, const Vector& m) {
  Vector right = detail::perron_vector(a);
  double lambda = right.dot(a * right) / right.dot(right);
  detail::polish(a, right, lambda);

  const Matrix at = a.transpose();
  Vector left = detail::perron_vector(at);
  double lambda_left = left.dot(at * left) / left.dot(left);
  detail::polish(at, left, lambda_left);

  if ((right.array() <= 0.0).any() || (left.array() <= 0.0).any())
    throw NumericalError("perron_triple: eigenvector not strictly positive");

  PerronTriple out;
  out.lambda = lambda;
  out.phi = right / norm2_m(right, m);
  // psi is the eigenvector of the m-dual, so m * psi is the left eigenvector.
  Vector psi = left.cwiseQuotient(m);
  psi /= inner_m(out.phi, psi, m);
  out.psi = psi;
  const double res_right = (a * out.phi - lambda * out.phi).cwiseAbs().maxCoeff();
  const Vector mpsi = m.cwiseProduct(out.psi);
  const double res_left = (at * mpsi - lambda * mpsi).cwiseAbs().maxCoeff();
  out.residual = std::max(res_right, res_left);
  return out;
}

/// Largest real part among the eigenvalues other than the Perron root.
inline double second_eigenvalue(const Matrix& a, double lambda0) {
  if (a.rows() < 2) return -std::numeric_limits<double>::infinity();
  Eigen::EigenSolver<Matrix> solver(a, false);
  const auto& ev = solver.eigenvalues();
  Eigen::Index skip = 0;
  double nearest = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    const double dist = std::abs(ev[i] - Complex(lambda0, 0.0));
    if (dist < nearest) {
      nearest = dist;
      skip = i;
    }
  }
  double best = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < ev.size(); ++i)
    if (i != skip) best = std::max(best, ev[i].real());
  return best;
}

inline Matrix mean_generator(const Scenario& s) {
  Matrix g = s.Q();
  g.diagonal() += s.alpha();
  return g;
}

/// T_t as a matrix acting on functions: (T_t f)(x) = sum_y out(x, y) f(y).
/// The density with respect to m is q(t, x, y) = out(x, y) / m(y).
inline Matrix semigroup_T(const Scenario& s, double t) {
  if (!(t >= 0.0)) throw PreconditionError("semigroup_T: t must be >= 0");
  return expm(t * mean_generator(s));
}

inline PerronTriple eigentriple_T(const Scenario& s) {
  return perron_triple(mean_generator(s), s.m());
}

/// Generator of the Feynman-Kac semigroup with killing d/dz phi(., v).
inline Matrix twisted_generator(const Scenario& s, const Vector& v) {
  Matrix g = s.Q();
  for (int x = 0; x < s.sites(); ++x) g(x, x) -= phi_prime(s, x, v[x]);
  return g;
}

/// Perron data of T*_t f = v^{-1} P^{phi'}_t (v f): returns lambda0*, and
/// phi0* = phibar / v, psi0* = v psibar, with phibar/psibar normalised like
/// the untwisted pair.
inline PerronTriple eigentriple_star(const Scenario& s, const Vector& v) {
  if (v.size() != s.sites() || (v.array() <= 0.0).any())
    throw PreconditionError("eigentriple_star: v must be strictly positive");
  const PerronTriple bar = perron_triple(twisted_generator(s, v), s.m());
  if (!(bar.lambda < 0.0))
    throw ModelError("eigentriple_star: lambda0* = " + std::to_string(bar.lambda) +
                     " >= 0 contradicts supercriticality; the extinction solve is suspect");
  PerronTriple star;
  star.lambda = bar.lambda;
  star.phi = bar.phi.cwiseQuotient(v);
  star.psi = bar.psi.cwiseProduct(v);
  star.residual = bar.residual;
  return star;
}

/// T*_t as a matrix: (T*_t f)(x) = v(x)^{-1} (exp(t (Q - diag phi'(v))) (v f))(x).
inline Matrix semigroup_T_star(const Scenario& s, const Vector& v, double t) {
  if (!(t >= 0.0)) throw PreconditionError("semigroup_T_star: t must be >= 0");
  const Matrix p = expm(t * twisted_generator(s, v));
  return v.cwiseInverse().asDiagonal() * p * v.asDiagonal();
}

/// Fits |e^{-lambda0 t} q(t,x,y) / (phi0(x) psi0(y)) - 1| <= c e^{-gamma t} over
/// t in [delta, delta + 10]. gamma comes from least squares on the log
/// deviation; c is the smallest constant making the bound hold on the grid.
inline IuFit iu_fit(const Scenario& s, const PerronTriple& mean, double delta) {
  if (!(delta > 0.0)) throw PreconditionError("iu_fit: delta must be > 0");
  const int d = s.sites();
  const Matrix g = mean_generator(s);
  constexpr int kPoints = 41;
  std::vector<double> ts;
  std::vector<double> logs;
  for (int k = 0; k < kPoints; ++k) {
    const double t = delta + 10.0 * k / (kPoints - 1);
    const Matrix tt = expm(t * g);
    double dev = 0.0;
    for (int x = 0; x < d; ++x)
      for (int y = 0; y < d; ++y) {
        const double q = tt(x, y) / s.m()[y];
        const double ratio = std::exp(-mean.lambda * t) * q / (mean.phi[x] * mean.psi[y]);
        dev = std::max(dev, std::abs(ratio - 1.0));
      }
    // Below this the deviation is rounding noise rather than spectral decay.
    if (dev > 1e-11) {
      ts.push_back(t);
      logs.push_back(std::log(dev));
    }
  }
  IuFit fit;
  fit.delta = delta;
  if (ts.size() < 3) {
    fit.c = 0.0;
    fit.gamma = std::numeric_limits<double>::infinity();
    fit.degenerate = true;
    return fit;
  }
  const double n = static_cast<double>(ts.size());
  double st = 0, sl = 0, stt = 0, stl = 0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    st += ts[i];
    sl += logs[i];
    stt += ts[i] * ts[i];
    stl += ts[i] * logs[i];
  }
  const double slope = (n * stl - st * sl) / (n * stt - st * st);
  const double intercept = (sl - slope * st) / n;
  fit.gamma = -slope;
  double c = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i)
    c = std::max(c, std::exp(logs[i] + fit.gamma * ts[i]));
  fit.c = c;
  fit.slack = c / std::exp(intercept);
  fit.degenerate = false;
  return fit;
}

/// Mean eigendata plus the second eigenvalue; the twisted triple is filled by
/// attach_star once v is known.
inline SpectralData mean_spectral_data(const Scenario& s) {
  const PerronTriple t = eigentriple_T(s);
  SpectralData out;
  out.lambda0 = t.lambda;
  out.phi0 = t.phi;
  out.psi0 = t.psi;
  out.residual = t.residual;
  out.lambda1 = second_eigenvalue(mean_generator(s), t.lambda);
  return out;
}

inline void attach_star(SpectralData& data, const Scenario& s, const Vector& v) {
  const PerronTriple star = eigentriple_star(s, v);
  data.lambda0_star = star.lambda;
  data.phi0_star = star.phi;
  data.psi0_star = star.psi;
  data.residual_star = star.residual;
}

inline PerronTriple mean_triple(const SpectralData& data) {
  return PerronTriple{data.lambda0, data.phi0, data.psi0, data.residual};
}

}  // namespace superlim

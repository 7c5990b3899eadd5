#pragma once

// Finite-state superprocess scenarios: spatial motion as a rate matrix with
// optional killing, and a branching mechanism
//   phi(x, z) = -alpha(x) z + beta(x) z^2 + sum_k w_k (e^{-z r_k} - 1 + z r_k).

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <optional>
#include <queue>
#include <string>
#include <type_traits>
#include <vector>

#include "superlim/error.hpp"
#include "superlim/linalg.hpp"

namespace superlim {

struct Atom {
  double r = 0.0;  // jump size
  double w = 0.0;  // mass of n(x, .) at r
};

/// Analytic tail n(x, dr) = c r^{-power} (ln r)^{-log_power} dr on (cutoff, inf).
/// Used by the L log L criterion only, never sampled.
struct TailDescriptor {
  std::string form = "log-heavy";
  double c = 0.0;
  double power = 2.0;
  double log_power = 0.0;
  double cutoff = 0.0;
};

struct StateSpace {
  Vector weights;  // reference measure m, strictly positive
  int size() const { return static_cast<int>(weights.size()); }
};

struct MotionGenerator {
  Matrix rates;        // Q; rows sum to -row_defect
  Vector row_defect;   // killing rate into the cemetery
};

struct BranchingTriple {
  Vector alpha;
  Vector beta;
  std::vector<std::vector<Atom>> atoms;
  std::optional<TailDescriptor> tail;
};

struct Scenario {
  std::string name;
  StateSpace space;
  MotionGenerator motion;
  BranchingTriple branching;
  Vector initial_measure;  // mu

  int sites() const { return space.size(); }
  const Matrix& Q() const { return motion.rates; }
  const Vector& m() const { return space.weights; }
  const Vector& alpha() const { return branching.alpha; }
  const Vector& beta() const { return branching.beta; }
  const std::vector<Atom>& atoms(int x) const {
    return branching.atoms[static_cast<std::size_t>(x)];
  }
};

namespace detail {

constexpr double kRowSumTol = 1e-12;

// e^{-y} - 1 + y, accurate for small |y|.
template <class Z>
Z exp_neg_m1_plus(Z y) {
  if (std::abs(y) < 0.5) {
    Z term = y * y / 2.0;
    Z sum = term;
    for (int k = 3; k < 40; ++k) {
      term *= -y / static_cast<double>(k);
      sum += term;
      if (std::abs(term) <= 1e-18 * std::abs(sum)) break;
    }
    return sum;
  }
  return std::exp(-y) - 1.0 + y;
}

// e^{y} - 1 - y, accurate for small |y|.
template <class Z>
Z expm1_minus_linear(Z y) {
  if (std::abs(y) < 0.5) {
    Z term = y * y / 2.0;
    Z sum = term;
    for (int k = 3; k < 40; ++k) {
      term *= y / static_cast<double>(k);
      sum += term;
      if (std::abs(term) <= 1e-18 * std::abs(sum)) break;
    }
    return sum;
  }
  return std::exp(y) - 1.0 - y;
}

// e^{y} - 1 for real or complex y.
template <class Z>
Z expm1_any(Z y) {
  if constexpr (std::is_same_v<Z, double>) {
    return std::expm1(y);
  } else {
    if (std::abs(y) < 0.5) return y + expm1_minus_linear(y);
    return std::exp(y) - 1.0;
  }
}

template <class Z>
Z phi_unchecked(const Scenario& s, int x, Z z) {
  const double a = s.alpha()[x];
  const double b = s.beta()[x];
  Z out = -a * z + b * z * z;
  for (const Atom& atom : s.atoms(x)) out += atom.w * exp_neg_m1_plus(z * atom.r);
  return out;
}

inline bool finite_all(const Vector& v) { return v.allFinite(); }

inline bool irreducible(const Matrix& q) {
  const int d = static_cast<int>(q.rows());
  auto reach_all = [&](bool transpose) {
    std::vector<char> seen(static_cast<std::size_t>(d), 0);
    std::queue<int> todo;
    todo.push(0);
    seen[0] = 1;
    while (!todo.empty()) {
      const int i = todo.front();
      todo.pop();
      for (int j = 0; j < d; ++j) {
        const double rate = transpose ? q(j, i) : q(i, j);
        if (j != i && rate > 0.0 && !seen[static_cast<std::size_t>(j)]) {
          seen[static_cast<std::size_t>(j)] = 1;
          todo.push(j);
        }
      }
    }
    return std::all_of(seen.begin(), seen.end(), [](char c) { return c != 0; });
  };
  return reach_all(false) && reach_all(true);
}

}  // namespace detail

/// Branching mechanism at site x. Real z must be non-negative; complex z uses
/// the principal exponential.
inline double eval_phi(const Scenario& s, int x, double z) {
  if (!(z >= 0.0)) throw PreconditionError("eval_phi: z must be >= 0");
  return detail::phi_unchecked(s, x, z);
}

inline Complex eval_phi(const Scenario& s, int x, Complex z) {
  return detail::phi_unchecked(s, x, z);
}

/// d/dz phi(x, z) = -alpha + 2 beta z + sum_k w_k r_k (1 - e^{-z r_k}).
inline double phi_prime(const Scenario& s, int x, double z) {
  double out = -s.alpha()[x] + 2.0 * s.beta()[x] * z;
  for (const Atom& atom : s.atoms(x)) out += -atom.w * atom.r * std::expm1(-z * atom.r);
  return out;
}

template <class Scalar>
VectorOf<Scalar> phi_vector(const Scenario& s, const VectorOf<Scalar>& u) {
  VectorOf<Scalar> out(u.size());
  for (int x = 0; x < u.size(); ++x) out[x] = detail::phi_unchecked(s, x, u[x]);
  return out;
}

/// M = max_x (|alpha| + beta + sum_k w_k min(r_k, r_k^2)).
inline double branching_bound_M(const Scenario& s) {
  double best = 0.0;
  for (int x = 0; x < s.sites(); ++x) {
    double total = std::abs(s.alpha()[x]) + s.beta()[x];
    for (const Atom& atom : s.atoms(x)) total += atom.w * std::min(atom.r, atom.r * atom.r);
    best = std::max(best, total);
  }
  return best;
}

/// Builds a scenario and checks every structural invariant, naming the
/// offending field on failure. The row defect is derived from Q.
inline Scenario make_scenario(std::string name, Vector m, Matrix q, Vector alpha,
                              Vector beta, std::vector<std::vector<Atom>> atoms,
                              Vector mu, std::optional<TailDescriptor> tail = {}) {
  const auto d = m.size();
  if (d < 1) throw InputError("m: state space needs at least one site");
  if (q.rows() != d || q.cols() != d)
    throw InputError("Q: expected " + std::to_string(d) + "x" + std::to_string(d) +
                     " matrix");
  if (alpha.size() != d) throw InputError("alpha: dimension mismatch");
  if (beta.size() != d) throw InputError("beta: dimension mismatch");
  if (mu.size() != d) throw InputError("mu: dimension mismatch");
  if (atoms.empty()) atoms.resize(static_cast<std::size_t>(d));
  if (static_cast<Eigen::Index>(atoms.size()) != d)
    throw InputError("atoms: expected one list per site");

  if (!detail::finite_all(m) || !q.allFinite() || !detail::finite_all(alpha) ||
      !detail::finite_all(beta) || !detail::finite_all(mu))
    throw InputError("scenario contains non-finite numbers");

  for (Eigen::Index i = 0; i < d; ++i) {
    const auto site = std::to_string(i);
    if (!(m[i] > 0.0)) throw InputError("m[" + site + "]: weight must be > 0");
    if (beta[i] < 0.0) throw InputError("beta[" + site + "]: must be >= 0");
    if (mu[i] < 0.0) throw InputError("mu[" + site + "]: must be >= 0");
    for (Eigen::Index j = 0; j < d; ++j)
      if (j != i && q(i, j) < 0.0)
        throw InputError("Q[" + site + "][" + std::to_string(j) +
                         "]: off-diagonal rate must be >= 0");
    if (q.row(i).sum() > detail::kRowSumTol * (1.0 + q.row(i).cwiseAbs().sum()))
      throw InputError("Q[" + site + "]: row sum must be <= 0 (killing only)");
    for (const Atom& atom : atoms[static_cast<std::size_t>(i)]) {
      if (!(atom.r > 0.0) || !std::isfinite(atom.r))
        throw InputError("atoms[" + site + "]: r must be > 0");
      if (!(atom.w > 0.0) || !std::isfinite(atom.w))
        throw InputError("atoms[" + site + "]: w must be > 0");
    }
  }
  if (d > 1 && !detail::irreducible(q)) throw InputError("Q: rate matrix is not irreducible");

  if (tail) {
    if (tail->form != "log-heavy")
      throw InputError("tail.form: only \"log-heavy\" is supported");
    if (!(tail->c > 0.0)) throw InputError("tail.c: must be > 0");
    if (!(tail->cutoff > 1.0)) throw InputError("tail.cutoff: must be > 1");
    if (!std::isfinite(tail->power) || !std::isfinite(tail->log_power))
      throw InputError("tail: non-finite exponent");
  }

  Scenario s;
  s.name = std::move(name);
  s.space.weights = std::move(m);
  s.motion.row_defect = (-q.rowwise().sum()).cwiseMax(0.0);
  s.motion.rates = std::move(q);
  s.branching.alpha = std::move(alpha);
  s.branching.beta = std::move(beta);
  s.branching.atoms = std::move(atoms);
  s.branching.tail = std::move(tail);
  s.initial_measure = std::move(mu);
  return s;
}

}  // namespace superlim

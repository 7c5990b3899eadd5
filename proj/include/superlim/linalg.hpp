#pragma once

#include <cmath>
#include <complex>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

namespace superlim {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Complex = std::complex<double>;
using CVector = Eigen::VectorXcd;

template <class Scalar>
using VectorOf = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// <f, g>_m = sum_x f(x) g(x) m(x).
template <class A, class B>
auto inner_m(const Eigen::MatrixBase<A>& f, const Eigen::MatrixBase<B>& g,
             const Vector& m) {
  return (f.array() * g.array() * m.array().template cast<typename A::Scalar>())
      .sum();
}

inline double norm2_m(const Vector& f, const Vector& m) {
  return std::sqrt((f.array().square() * m.array()).sum());
}

template <class Derived>
double sup_norm(const Eigen::MatrixBase<Derived>& f) {
  return f.size() == 0 ? 0.0 : f.cwiseAbs().maxCoeff();
}

/// Matrix exponential (Pade approximant with scaling and squaring).
inline Matrix expm(const Matrix& a) {
  Matrix out = a.exp();
  return out;
}

}  // namespace superlim

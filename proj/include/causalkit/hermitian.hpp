// SPDX-License-Identifier: MIT
//
// Real parametrization of complex Hermitian matrices and the real symmetric
// embedding used to pose Hermitian-PSD constraints over real PSD cones.
//
// hvec: a d x d Hermitian matrix is stored as d^2 reals in an orthonormal
// basis (diagonal units; (E_ab + E_ba)/sqrt2 and i(E_ab - E_ba)/sqrt2 for
// a < b), so Frobenius norms equal Euclidean norms of the parameter vector.
//
// realify: M = X + iY maps to [[X, -Y], [Y, X]], which is PSD iff M is PSD
// (spectrum doubled in multiplicity, trace doubled).

#pragma once

#include "causalkit/operator.hpp"

namespace causalkit {

inline long hvec_size(int d) { return static_cast<long>(d) * d; }

/// Parameter index of the diagonal entry (a,a).
inline long hvec_diag(int d, int a) { return a; }

/// Parameter indices of the (re, im) pair for off-diagonal a < b, enumerated
/// row-major after the d diagonal entries.
inline long hvec_off(int d, int a, int b, bool imag) {
  // position of (a,b) among {(i,j): i<j} in row-major order
  long p = static_cast<long>(a) * d - static_cast<long>(a) * (a + 1) / 2 + (b - a - 1);
  return d + 2 * p + (imag ? 1 : 0);
}

inline Eigen::VectorXd matrix_to_hvec(const Matrix& m) {
  const int d = static_cast<int>(m.rows());
  const double r2 = std::sqrt(2.0);
  Eigen::VectorXd v(hvec_size(d));
  for (int a = 0; a < d; ++a) v(hvec_diag(d, a)) = m(a, a).real();
  for (int a = 0; a < d; ++a)
    for (int b = a + 1; b < d; ++b) {
      v(hvec_off(d, a, b, false)) = r2 * m(a, b).real();
      v(hvec_off(d, a, b, true)) = -r2 * m(a, b).imag();
    }
  return v;
}

inline Matrix hvec_to_matrix(const Eigen::Ref<const Eigen::VectorXd>& v, int d) {
  const double inv_r2 = 1.0 / std::sqrt(2.0);
  Matrix m(d, d);
  for (int a = 0; a < d; ++a) m(a, a) = v(hvec_diag(d, a));
  for (int a = 0; a < d; ++a)
    for (int b = a + 1; b < d; ++b) {
      double re = v(hvec_off(d, a, b, false)) * inv_r2;
      double im = -v(hvec_off(d, a, b, true)) * inv_r2;
      m(a, b) = Complex(re, im);
      m(b, a) = Complex(re, -im);
    }
  return m;
}

struct NotHermitian : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Real symmetric embedding [[X, -Y], [Y, X]] of M = X + iY.
inline Eigen::MatrixXd realify_hermitian(const Matrix& m, double tol = 1e-9) {
  if ((m - m.adjoint()).norm() > tol * std::max(1.0, m.norm()))
    throw NotHermitian("realify_hermitian: input is not Hermitian");
  const long d = m.rows();
  Eigen::MatrixXd r(2 * d, 2 * d);
  r.topLeftCorner(d, d) = m.real();
  r.bottomRightCorner(d, d) = m.real();
  r.topRightCorner(d, d) = -m.imag();
  r.bottomLeftCorner(d, d) = m.imag();
  return r;
}

/// Projection of a Hermitian matrix onto the PSD cone (eigenvalue clipping).
inline Matrix project_psd(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es((m + m.adjoint()) / 2.0);
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().adjoint();
}

}  // namespace causalkit

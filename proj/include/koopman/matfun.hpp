#pragma once

// Dense matrix functions on small real square matrices: complex
// eigendecomposition, exponential, principal logarithm, fractional powers
// and the orthogonality defect used as a soft penalty on the Koopman matrix.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "koopman/error.hpp"

namespace koopman {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;

/// Relative Frobenius residual accepted as "diagonalizable".
inline constexpr double kDiagonalizableTolerance = 1e-8;
/// Eigenvector bases with a larger 2-norm condition number count as defective.
inline constexpr double kMaxEigenvectorCondition = 1e12;

/// Continuous-time generator L of a discrete evolution matrix K = exp(L).
struct GeneratorMatrix {
  Matrix entries;

  Eigen::Index dim() const { return entries.rows(); }
};

struct EigenDecomposition {
  ComplexMatrix vectors;  // columns are eigenvectors
  ComplexVector values;

  /// V diag(f(values)) V^{-1}, real part only. The imaginary residue is
  /// returned through `imag_norm` so callers can judge conjugate symmetry.
  template <typename F>
  Matrix reconstruct(F&& f, double* imag_norm = nullptr) const {
    ComplexVector mapped(values.size());
    for (Eigen::Index i = 0; i < values.size(); ++i) mapped(i) = f(values(i));
    const ComplexMatrix full = vectors * mapped.asDiagonal() * vectors.inverse();
    if (imag_norm != nullptr) *imag_norm = full.imag().norm();
    return full.real();
  }
};

namespace detail {

inline void require_square(const Matrix& m, const char* where) {
  if (m.rows() != m.cols() || m.rows() < 1) {
    fail(ErrorKind::ShapeMismatch, std::string(where) + ": expected a non-empty square matrix, got " +
                                       std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
}

inline void require_finite(const Matrix& m, const char* where) {
  if (!m.allFinite()) fail(ErrorKind::NonFinite, std::string(where) + ": non-finite entries");
}

inline double condition_number(const ComplexMatrix& v) {
  Eigen::JacobiSVD<ComplexMatrix> svd(v);
  const auto& s = svd.singularValues();
  const double smallest = s(s.size() - 1);
  if (smallest <= 0.0) return std::numeric_limits<double>::infinity();
  return s(0) / smallest;
}

// Pade approximants of degree 3..13 with scaling and squaring (Higham 2005).
inline Matrix expm_pade(const Matrix& a) {
  const Eigen::Index n = a.rows();
  const Matrix id = Matrix::Identity(n, n);
  const double norm1 = a.cwiseAbs().colwise().sum().maxCoeff();

  auto solve = [](const Matrix& u, const Matrix& v) -> Matrix {
    return (v - u).partialPivLu().solve(v + u);
  };

  static constexpr std::array<double, 4> kTheta = {1.495585217958292e-2, 2.539398330063230e-1,
                                                   9.504178996162932e-1, 2.097847961257068e0};
  if (norm1 <= kTheta[0]) {
    static constexpr double b[] = {120., 60., 12., 1.};
    const Matrix a2 = a * a;
    const Matrix u = a * (b[3] * a2 + b[1] * id);
    const Matrix v = b[2] * a2 + b[0] * id;
    return solve(u, v);
  }
  if (norm1 <= kTheta[1]) {
    static constexpr double b[] = {30240., 15120., 3360., 420., 30., 1.};
    const Matrix a2 = a * a;
    const Matrix a4 = a2 * a2;
    const Matrix u = a * (b[5] * a4 + b[3] * a2 + b[1] * id);
    const Matrix v = b[4] * a4 + b[2] * a2 + b[0] * id;
    return solve(u, v);
  }
  if (norm1 <= kTheta[2]) {
    static constexpr double b[] = {17297280., 8648640., 1995840., 277200., 25200., 1512., 56., 1.};
    const Matrix a2 = a * a;
    const Matrix a4 = a2 * a2;
    const Matrix a6 = a4 * a2;
    const Matrix u = a * (b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * id);
    const Matrix v = b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * id;
    return solve(u, v);
  }
  if (norm1 <= kTheta[3]) {
    static constexpr double b[] = {17643225600., 8821612800., 2075673600., 302702400., 30270240.,
                                   2162160.,     110880.,     3960.,       90.,         1.};
    const Matrix a2 = a * a;
    const Matrix a4 = a2 * a2;
    const Matrix a6 = a4 * a2;
    const Matrix a8 = a6 * a2;
    const Matrix u = a * (b[9] * a8 + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * id);
    const Matrix v = b[8] * a8 + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * id;
    return solve(u, v);
  }

  static constexpr double kTheta13 = 5.371920351148152;
  static constexpr double b[] = {64764752532480000., 32382376266240000., 7771770303897600.,
                                 1187353796428800.,  129060195264000.,   10559470521600.,
                                 670442572800.,      33522128640.,       1323241920.,
                                 40840800.,          960960.,            16380.,
                                 182.,               1.};
  int squarings = 0;
  if (norm1 > kTheta13) squarings = static_cast<int>(std::ceil(std::log2(norm1 / kTheta13)));
  const Matrix as = a * std::ldexp(1.0, -squarings);
  const Matrix a2 = as * as;
  const Matrix a4 = a2 * a2;
  const Matrix a6 = a4 * a2;
  const Matrix u =
      as * (a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2) + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * id);
  const Matrix v = a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * id;
  Matrix result = solve(u, v);
  for (int i = 0; i < squarings; ++i) result = result * result;
  return result;
}

}  // namespace detail

/// Complex eigendecomposition of a real matrix. Eigenvalues are sorted by
/// descending modulus, ties broken by ascending phase in (-pi, pi].
inline EigenDecomposition eig_complex(const Matrix& m) {
  detail::require_square(m, "eig_complex");
  detail::require_finite(m, "eig_complex");

  Eigen::EigenSolver<Matrix> solver(m, /*computeEigenvectors=*/true);
  if (solver.info() != Eigen::Success) {
    fail(ErrorKind::NonDiagonalizable, "eig_complex: QR iteration did not converge");
  }
  const ComplexVector raw_values = solver.eigenvalues();
  const ComplexMatrix raw_vectors = solver.eigenvectors();

  const Eigen::Index n = m.rows();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const double scale = std::max(1.0, raw_values.cwiseAbs().maxCoeff());
  const double tie = 1e-10 * scale;
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return std::arg(raw_values(a)) < std::arg(raw_values(b));
  });
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return std::abs(raw_values(a)) > std::abs(raw_values(b)) + tie;
  });

  EigenDecomposition out;
  out.values.resize(n);
  out.vectors.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.values(i) = raw_values(order[static_cast<std::size_t>(i)]);
    out.vectors.col(i) = raw_vectors.col(order[static_cast<std::size_t>(i)]);
  }

  const double denom = std::max(m.norm(), std::numeric_limits<double>::min());
  const double residual =
      (m.cast<std::complex<double>>() * out.vectors - out.vectors * out.values.asDiagonal()).norm() / denom;
  if (!(residual <= kDiagonalizableTolerance)) {
    fail(ErrorKind::NonDiagonalizable, "eig_complex: reconstruction residual " + std::to_string(residual));
  }
  if (!(detail::condition_number(out.vectors) < kMaxEigenvectorCondition)) {
    fail(ErrorKind::NonDiagonalizable, "eig_complex: eigenvector basis is numerically singular");
  }
  return out;
}

inline Matrix matrix_exp(const Matrix& m) {
  detail::require_square(m, "matrix_exp");
  detail::require_finite(m, "matrix_exp");
  Matrix result = detail::expm_pade(m);
  detail::require_finite(result, "matrix_exp (overflow)");
  return result;
}

inline Matrix matrix_exp(const GeneratorMatrix& l) { return matrix_exp(l.entries); }

/// Principal logarithm through the eigendecomposition: L = V log(Lambda) V^{-1}.
/// Fails when an eigenvalue sits on the closed negative real axis, since no
/// real principal logarithm exists there.
inline GeneratorMatrix matrix_log_principal(const Matrix& k) {
  detail::require_square(k, "matrix_log_principal");
  detail::require_finite(k, "matrix_log_principal");

  const EigenDecomposition eig = eig_complex(k);
  const double scale = std::max(1.0, eig.values.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < eig.values.size(); ++i) {
    const auto lambda = eig.values(i);
    if (std::abs(lambda.imag()) <= 1e-12 * scale && lambda.real() <= 0.0) {
      fail(ErrorKind::NegativeRealEigenvalue,
           "matrix_log_principal: eigenvalue " + std::to_string(lambda.real()) + " on the negative real axis");
    }
  }

  double imag_norm = 0.0;
  GeneratorMatrix out{eig.reconstruct([](std::complex<double> z) { return std::log(z); }, &imag_norm)};
  if (!out.entries.allFinite()) fail(ErrorKind::NonFinite, "matrix_log_principal: non-finite logarithm");

  const double residual = (matrix_exp(out.entries) - k).norm() / std::max(k.norm(), 1e-300);
  if (!(residual <= kDiagonalizableTolerance)) {
    fail(ErrorKind::NonDiagonalizable,
         "matrix_log_principal: exp(log K) misses K by relative " + std::to_string(residual));
  }
  return out;
}

/// K^tau := exp(tau log K).
inline Matrix fractional_power(const Matrix& k, double tau) {
  if (!std::isfinite(tau)) fail(ErrorKind::NonFinite, "fractional_power: non-finite exponent");
  const GeneratorMatrix l = matrix_log_principal(k);
  return matrix_exp(Matrix(tau * l.entries));
}

/// ||K K^T - I||_F^2
inline double orthogonality_defect(const Matrix& k) {
  detail::require_square(k, "orthogonality_defect");
  detail::require_finite(k, "orthogonality_defect");
  return (k * k.transpose() - Matrix::Identity(k.rows(), k.cols())).squaredNorm();
}

inline Matrix rotation2(double theta) {
  Matrix r(2, 2);
  r << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
  return r;
}

}  // namespace koopman

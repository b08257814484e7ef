#pragma once

// Dense complex linear algebra shared by every module.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <string>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "emodel/errors.hpp"

namespace emodel {

using Complex = std::complex<double>;
using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;

/// Relative tolerance for "is Hermitian" decisions everywhere in the library.
inline constexpr double kHermitianTolerance = 1e-10;

inline constexpr Complex kI{0.0, 1.0};

inline std::string shape_string(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline Vector apply_operator(const Matrix& op, const Vector& v) {
    if (op.cols() != v.size()) {
        throw DimensionError("apply_operator: operator " + shape_string(op) +
                             " cannot act on vector of length " + std::to_string(v.size()));
    }
    return op * v;
}

/// M^dagger M.
inline Matrix gram(const Matrix& m) { return m.adjoint() * m; }

inline double max_abs_entry(const Matrix& m) {
    return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

inline double hermiticity_defect(const Matrix& m) {
    if (m.rows() != m.cols()) return std::numeric_limits<double>::infinity();
    return max_abs_entry(m - m.adjoint());
}

inline bool is_hermitian(const Matrix& m, double rel_tol = kHermitianTolerance) {
    if (m.rows() != m.cols()) return false;
    return hermiticity_defect(m) <= rel_tol * std::max(1.0, max_abs_entry(m));
}

/// exp(A t) v. Scaling-and-squaring Pade via Eigen's matrix exponential.
inline Vector expm_apply(const Matrix& a, double t, const Vector& v) {
    if (a.rows() != a.cols()) {
        throw DimensionError("expm_apply: generator must be square, got " + shape_string(a));
    }
    if (!std::isfinite(t)) throw PreconditionError("expm_apply: time must be finite");
    if (a.cols() != v.size()) {
        throw DimensionError("expm_apply: generator " + shape_string(a) +
                             " cannot act on vector of length " + std::to_string(v.size()));
    }
    const Matrix at = a * Complex(t, 0.0);
    const Matrix e = at.exp();
    return e * v;
}

/// Smallest eigenvalue of a Hermitian matrix (the Hermitian part is used after
/// the tolerance check).
inline double min_eigenvalue_hermitian(const Matrix& m) {
    if (!is_hermitian(m)) {
        throw PreconditionError("min_eigenvalue_hermitian: input " + shape_string(m) +
                                " is not Hermitian within tolerance");
    }
    if (m.size() == 0) throw DimensionError("min_eigenvalue_hermitian: empty matrix");
    const Matrix sym = 0.5 * (m + m.adjoint());
    Eigen::SelfAdjointEigenSolver<Matrix> solver(sym, Eigen::EigenvaluesOnly);
    return solver.eigenvalues().minCoeff();
}

/// Largest singular value.
inline double spectral_norm(const Matrix& m) {
    if (m.size() == 0) return 0.0;
    Eigen::JacobiSVD<Matrix> svd(m);
    return svd.singularValues()(0);
}

/// <v, m v> for Hermitian m, real part.
inline double expectation(const Matrix& m, const Vector& v) {
    return v.dot(m * v).real();
}

} // namespace emodel

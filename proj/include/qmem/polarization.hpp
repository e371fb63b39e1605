#pragma once

// Qubit states of a polarization-encoded photon and the small-dimension
// complex linear algebra the rest of the library builds on.
//
// Computational basis is {|R>, |L>}: the two circular components that the
// memory stores as separate spin waves. Pauli operators are ordered
// sigma_0 = I, sigma_1 = X, sigma_2 = Y, sigma_3 = Z with Z diagonal in R/L, so
// the analyzer bases map onto Pauli axes as HV -> 1, DA -> 2, RL -> 3.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <optional>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "qmem/error.hpp"

namespace qmem {

using Complex = std::complex<double>;
using Mat2 = Eigen::Matrix2cd;
using Mat4 = Eigen::Matrix4cd;
using Vec2 = Eigen::Vector2cd;
using Stokes = std::array<double, 3>;

inline constexpr double kNormTolerance = 1e-12;
inline constexpr double kHermitianTolerance = 1e-12;
inline constexpr double kTraceTolerance = 1e-12;
/// Eigenvalues above this (and below zero) are rounding noise and are clamped.
inline constexpr double kEigenClampTolerance = 1e-10;
/// Eigenvalues below this are a genuine loss of positivity.
inline constexpr double kEigenRejectTolerance = 1e-6;

// ---------------------------------------------------------------------------
// Named states
// ---------------------------------------------------------------------------

enum class NamedState { H, V, D, A, R, L };

inline constexpr std::array<NamedState, 6> kAllNamedStates{
    NamedState::H, NamedState::V, NamedState::D, NamedState::A, NamedState::R, NamedState::L};

inline std::string_view to_string(NamedState s) noexcept {
    switch (s) {
    case NamedState::H: return "H";
    case NamedState::V: return "V";
    case NamedState::D: return "D";
    case NamedState::A: return "A";
    case NamedState::R: return "R";
    case NamedState::L: return "L";
    }
    return "?";
}

inline std::optional<NamedState> parse_named_state(std::string_view label) noexcept {
    for (NamedState s : kAllNamedStates)
        if (to_string(s) == label) return s;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// PolarizationKet
// ---------------------------------------------------------------------------

/// Pure polarization state c_R|R> + c_L|L>.
class PolarizationKet {
public:
    /// Throws DomainError unless |c_R|^2 + |c_L|^2 = 1 within 1e-12.
    PolarizationKet(Complex c_r, Complex c_l) : c_r_(c_r), c_l_(c_l) {
        const double norm = std::norm(c_r) + std::norm(c_l);
        detail::require(std::isfinite(norm) && std::abs(norm - 1.0) <= kNormTolerance,
                        "polarization ket must be normalized (|c_R|^2 + |c_L|^2 = " +
                            std::to_string(norm) + ")");
    }

    /// Normalizes an arbitrary non-zero amplitude pair.
    static PolarizationKet normalized(Complex c_r, Complex c_l) {
        const double n = std::sqrt(std::norm(c_r) + std::norm(c_l));
        detail::require(n > 0.0 && std::isfinite(n), "cannot normalize a zero ket");
        return PolarizationKet(c_r / n, c_l / n);
    }

    Complex c_r() const noexcept { return c_r_; }
    Complex c_l() const noexcept { return c_l_; }
    Vec2 vector() const { return Vec2(c_r_, c_l_); }

private:
    Complex c_r_;
    Complex c_l_;
};

inline Complex inner(const PolarizationKet& a, const PolarizationKet& b) {
    return std::conj(a.c_r()) * b.c_r() + std::conj(a.c_l()) * b.c_l();
}

/// Fixed phase convention: H = (1,1)/sqrt2, V = -i(1,-1)/sqrt2,
/// D = (H+V)/sqrt2, A = (H-V)/sqrt2.
inline PolarizationKet ket_from_named(NamedState label) {
    const double s = 1.0 / std::sqrt(2.0);
    const Complex i{0.0, 1.0};
    const Vec2 h(s, s);
    const Vec2 v = -i * Vec2(s, -s);
    Vec2 out;
    switch (label) {
    case NamedState::R: out = Vec2(1.0, 0.0); break;
    case NamedState::L: out = Vec2(0.0, 1.0); break;
    case NamedState::H: out = h; break;
    case NamedState::V: out = v; break;
    case NamedState::D: out = s * (h + v); break;
    case NamedState::A: out = s * (h - v); break;
    }
    return PolarizationKet::normalized(out(0), out(1));
}

// ---------------------------------------------------------------------------
// Pauli basis
// ---------------------------------------------------------------------------

inline const std::array<Mat2, 4>& pauli_basis() {
    static const std::array<Mat2, 4> basis = [] {
        const Complex i{0.0, 1.0};
        std::array<Mat2, 4> b;
        b[0] << 1.0, 0.0, 0.0, 1.0;
        b[1] << 0.0, 1.0, 1.0, 0.0;
        b[2] << 0.0, -i, i, 0.0;
        b[3] << 1.0, 0.0, 0.0, -1.0;
        return b;
    }();
    return basis;
}

inline const Mat2& pauli(int index) { return pauli_basis().at(static_cast<std::size_t>(index)); }

// ---------------------------------------------------------------------------
// Hermitian helpers
// ---------------------------------------------------------------------------

template <typename Derived>
double hermiticity_defect(const Eigen::MatrixBase<Derived>& m) {
    return (m - m.adjoint()).cwiseAbs().maxCoeff();
}

template <int N>
using CMat = Eigen::Matrix<Complex, N, N>;

template <int N>
CMat<N> hermitize(const CMat<N>& m) {
    return (m + m.adjoint()) * 0.5;
}

template <int N>
Eigen::Matrix<double, N, 1> hermitian_eigenvalues(const CMat<N>& m) {
    Eigen::SelfAdjointEigenSolver<CMat<N>> solver(hermitize<N>(m), Eigen::EigenvaluesOnly);
    return solver.eigenvalues();
}

/// Positive semidefinite square root of a Hermitian matrix.
///
/// Eigenvalues in [-1e-6, 0) are treated as rounding noise and clamped to zero;
/// anything more negative is rejected.
template <int N>
CMat<N> psd_sqrt(const CMat<N>& m) {
    detail::require(m.allFinite(), "psd_sqrt: non-finite matrix");
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    detail::require(hermiticity_defect(m) <= 1e-9 * scale, "psd_sqrt: matrix is not Hermitian");
    Eigen::SelfAdjointEigenSolver<CMat<N>> solver(hermitize<N>(m));
    Eigen::Matrix<double, N, 1> ev = solver.eigenvalues();
    for (int k = 0; k < N; ++k) {
        if (ev(k) < -kEigenRejectTolerance * scale)
            throw DomainError("psd_sqrt: matrix has significantly negative eigenvalue " +
                              std::to_string(ev(k)));
        ev(k) = std::sqrt(std::max(ev(k), 0.0));
    }
    const auto& u = solver.eigenvectors();
    return u * ev.template cast<Complex>().asDiagonal() * u.adjoint();
}

// ---------------------------------------------------------------------------
// DensityMatrix
// ---------------------------------------------------------------------------

/// Physical single-qubit state in the {|R>, |L>} basis.
class DensityMatrix {
public:
    /// Validates Hermiticity, unit trace and positivity. Throws DomainError.
    static DensityMatrix from_matrix(const Mat2& m) {
        detail::require(m.allFinite(), "density matrix has non-finite entries");
        detail::require(hermiticity_defect(m) <= kHermitianTolerance,
                        "density matrix is not Hermitian");
        detail::require(std::abs(m.trace() - Complex(1.0)) <= kTraceTolerance,
                        "density matrix trace is not 1");
        const auto ev = hermitian_eigenvalues<2>(m);
        detail::require(ev.minCoeff() >= -kEigenClampTolerance,
                        "density matrix has a negative eigenvalue " + std::to_string(ev.minCoeff()));
        return DensityMatrix(hermitize<2>(m));
    }

    static DensityMatrix maximally_mixed() { return DensityMatrix(Mat2::Identity() * 0.5); }

    const Mat2& matrix() const noexcept { return m_; }
    Complex operator()(int r, int c) const { return m_(r, c); }

    double purity() const { return (m_ * m_).trace().real(); }

    friend bool operator==(const DensityMatrix&, const DensityMatrix&) = default;

private:
    explicit DensityMatrix(const Mat2& m) : m_(m) {}
    Mat2 m_;
};

inline DensityMatrix density_of(const PolarizationKet& ket) {
    const Vec2 v = ket.vector();
    return DensityMatrix::from_matrix(v * v.adjoint());
}

inline DensityMatrix density_of(NamedState label) { return density_of(ket_from_named(label)); }

/// Uhlmann fidelity (Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2.
///
/// For qubits this equals Tr(rho sigma) + 2 sqrt(det rho det sigma), which
/// stays exact for rank-deficient (pure) arguments.
inline double state_fidelity(const DensityMatrix& rho, const DensityMatrix& sigma) {
    const double overlap = (rho.matrix() * sigma.matrix()).trace().real();
    const double det = std::max(0.0, rho.matrix().determinant().real()) *
                       std::max(0.0, sigma.matrix().determinant().real());
    return std::clamp(overlap + 2.0 * std::sqrt(det), 0.0, 1.0);
}

/// S_i = Tr(rho sigma_i), i = 1..3.
inline Stokes stokes_of(const DensityMatrix& rho) {
    Stokes s{};
    for (int i = 0; i < 3; ++i) s[static_cast<std::size_t>(i)] = (rho.matrix() * pauli(i + 1)).trace().real();
    return s;
}

/// (I + sum S_i sigma_i) / 2 without any physicality check.
inline Mat2 matrix_from_stokes(const Stokes& s) {
    Mat2 m = pauli(0);
    for (int i = 0; i < 3; ++i) m += s[static_cast<std::size_t>(i)] * pauli(i + 1);
    return m * 0.5;
}

/// Inverse of stokes_of on the closed unit ball.
inline DensityMatrix density_from_stokes(const Stokes& s) {
    const double norm = std::sqrt(s[0] * s[0] + s[1] * s[1] + s[2] * s[2]);
    detail::require(norm <= 1.0 + kEigenClampTolerance, "Stokes vector lies outside the unit ball");
    return DensityMatrix::from_matrix(matrix_from_stokes(s));
}

// ---------------------------------------------------------------------------
// ProcessMatrix
// ---------------------------------------------------------------------------

/// Process matrix chi_{mn} of rho -> sum chi_mn sigma_m rho sigma_n^dagger.
class ProcessMatrix {
public:
    /// Requires Hermitian within 1e-10 (the result is Hermitized).
    static ProcessMatrix from_matrix(const Mat4& chi) {
        detail::require(chi.allFinite(), "process matrix has non-finite entries");
        detail::require(hermiticity_defect(chi) <= 1e-10, "process matrix is not Hermitian");
        return ProcessMatrix(hermitize<4>(chi));
    }

    /// Unit entry at (0, 0): the identity channel.
    static ProcessMatrix identity_process() {
        Mat4 chi = Mat4::Zero();
        chi(0, 0) = 1.0;
        return ProcessMatrix(chi);
    }

    const Mat4& matrix() const noexcept { return chi_; }
    Complex operator()(int m, int n) const { return chi_(m, n); }

    /// Applies the process to a state matrix.
    Mat2 apply(const Mat2& rho) const {
        Mat2 out = Mat2::Zero();
        const auto& p = pauli_basis();
        for (int m = 0; m < 4; ++m)
            for (int n = 0; n < 4; ++n)
                out += chi_(m, n) * p[static_cast<std::size_t>(m)] * rho * p[static_cast<std::size_t>(n)].adjoint();
        return out;
    }

    /// Deviation from sum chi_mn sigma_n^dagger sigma_m = I (max-entry norm).
    double trace_preservation_defect() const {
        Mat2 acc = Mat2::Zero();
        const auto& p = pauli_basis();
        for (int m = 0; m < 4; ++m)
            for (int n = 0; n < 4; ++n)
                acc += chi_(m, n) * p[static_cast<std::size_t>(n)].adjoint() * p[static_cast<std::size_t>(m)];
        return (acc - Mat2::Identity()).cwiseAbs().maxCoeff();
    }

private:
    explicit ProcessMatrix(const Mat4& chi) : chi_(chi) {}
    Mat4 chi_;
};

} // namespace qmem

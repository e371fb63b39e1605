#pragma once

// State and process tomography from simulated photon counts.
//
// Output states are estimated linearly from Stokes parameters and, when shot
// noise pushes them outside the Bloch ball, projected back by eigenvalue
// clamping. The process matrix is obtained by solving the 16 complex linear
// equations that the four (input, output) pairs impose on chi.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "qmem/detection.hpp"
#include "qmem/error.hpp"
#include "qmem/memory_channel.hpp"
#include "qmem/parallel.hpp"
#include "qmem/polarization.hpp"
#include "qmem/rng.hpp"

namespace qmem {

// ---------------------------------------------------------------------------
// Fidelities
// ---------------------------------------------------------------------------

/// General Uhlmann fidelity (Tr sqrt(sqrt(a) b sqrt(a)))^2 for PSD matrices.
/// Eigenvalues of the inner product below 1e-13 of the largest are rounding
/// noise of a rank-deficient product and are dropped.
template <int N>
double uhlmann_fidelity(const CMat<N>& a, const CMat<N>& b) {
    const CMat<N> root = psd_sqrt<N>(a);
    const auto ev = hermitian_eigenvalues<N>(CMat<N>(root * b * root));
    const double cutoff = 1e-13 * std::max(ev.maxCoeff(), 0.0);
    double tr = 0.0;
    for (int k = 0; k < N; ++k)
        if (ev(k) > cutoff) tr += std::sqrt(ev(k));
    return tr * tr;
}

namespace detail {

inline void require_psd_unit_trace(const Mat4& chi, const char* what) {
    const auto ev = hermitian_eigenvalues<4>(chi);
    require(ev.minCoeff() >= -kEigenRejectTolerance,
            std::string(what) + " is not positive semidefinite (min eigenvalue " +
                std::to_string(ev.minCoeff()) + ")");
    require(std::abs(chi.trace().real() - 1.0) <= 1e-6, std::string(what) + " must have unit trace");
}

} // namespace detail

/// Process fidelity between two normalized PSD process matrices.
///
/// A pure ideal (rank one, as for the identity channel) reduces the Uhlmann
/// formula to the expectation value <psi|chi|psi>, which is evaluated directly.
inline double process_fidelity(const ProcessMatrix& chi, const ProcessMatrix& chi_ideal) {
    detail::require_psd_unit_trace(chi.matrix(), "process matrix");
    detail::require_psd_unit_trace(chi_ideal.matrix(), "ideal process matrix");
    Eigen::SelfAdjointEigenSolver<Mat4> solver(chi_ideal.matrix());
    const auto& ev = solver.eigenvalues();
    if (ev(3) >= 1.0 - 1e-12 && ev.head<3>().cwiseAbs().maxCoeff() <= 1e-12) {
        const Eigen::Vector4cd psi = solver.eigenvectors().col(3);
        return std::clamp((psi.adjoint() * chi.matrix() * psi)(0, 0).real(), 0.0, 1.0);
    }
    return std::clamp(uhlmann_fidelity<4>(chi.matrix(), chi_ideal.matrix()), 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// State tomography
// ---------------------------------------------------------------------------

struct TomographyResult {
    DensityMatrix rho = DensityMatrix::maximally_mixed();
    Stokes raw_stokes{};
    bool physical_projection_applied = false;
    /// Max-entry distance between the linear estimate and the returned state.
    double projection_distance = 0.0;
};

/// S_axis = (n+ - n-) / (n+ + n-), one record per analyzer basis.
inline Stokes stokes_from_counts(std::span<const CountRecord> records) {
    detail::require(records.size() == 3, "state tomography needs exactly one record per basis");
    Stokes s{};
    std::array<bool, 3> seen{};
    for (const auto& rec : records) {
        const auto axis = static_cast<std::size_t>(pauli_axis(rec.basis) - 1);
        detail::require(!seen[axis], "duplicate analyzer basis " + std::string(to_string(rec.basis)));
        detail::require(rec.n_plus >= 0.0 && rec.n_minus >= 0.0, "counts must be non-negative");
        detail::require(rec.total() > 0.0,
                        "zero total counts in basis " + std::string(to_string(rec.basis)));
        seen[axis] = true;
        s[axis] = (rec.n_plus - rec.n_minus) / rec.total();
    }
    return s;
}

/// Linear inversion with eigenvalue-clamping projection onto physical states.
inline TomographyResult state_estimate(const Stokes& s) {
    for (double v : s) detail::require(std::isfinite(v), "Stokes parameters must be finite");
    TomographyResult out;
    out.raw_stokes = s;
    const Mat2 linear = matrix_from_stokes(s);
    Eigen::SelfAdjointEigenSolver<Mat2> solver(linear);
    Eigen::Vector2d ev = solver.eigenvalues();
    if (ev.minCoeff() < -kNormTolerance) {
        ev = ev.cwiseMax(0.0);
        ev /= ev.sum();
        const auto& u = solver.eigenvectors();
        const Mat2 projected = hermitize<2>(u * ev.cast<Complex>().asDiagonal() * u.adjoint());
        out.rho = DensityMatrix::from_matrix(projected);
        out.physical_projection_applied = true;
        out.projection_distance = (projected - linear).cwiseAbs().maxCoeff();
    } else {
        out.rho = DensityMatrix::from_matrix(linear);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Process tomography
// ---------------------------------------------------------------------------

struct StatePair {
    DensityMatrix input;
    DensityMatrix output;
};

struct ChiEstimate {
    ProcessMatrix chi = ProcessMatrix::identity_process();
    /// Hermitized solution before any positivity projection.
    Mat4 raw = Mat4::Zero();
    bool projected = false;
    double min_raw_eigenvalue = 0.0;
};

/// Solves rho_out = sum chi_mn sigma_m rho_in sigma_n^dagger for chi from four
/// informationally complete input/output pairs.
inline ChiEstimate process_matrix(std::span<const StatePair> pairs) {
    detail::require(pairs.size() == 4, "process tomography needs exactly four input/output pairs");
    Eigen::Matrix4cd inputs;
    for (int j = 0; j < 4; ++j) inputs.col(j) = pairs[static_cast<std::size_t>(j)].input.matrix().reshaped();
    Eigen::FullPivLU<Eigen::Matrix4cd> input_lu(inputs);
    input_lu.setThreshold(1e-9);
    if (input_lu.rank() < 4) throw DomainError("degenerate input set: states do not span operator space");

    const auto& p = pauli_basis();
    Eigen::Matrix<Complex, 16, 16> a;
    Eigen::Matrix<Complex, 16, 1> b;
    for (int j = 0; j < 4; ++j) {
        const Mat2& rho_in = pairs[static_cast<std::size_t>(j)].input.matrix();
        const Mat2& rho_out = pairs[static_cast<std::size_t>(j)].output.matrix();
        for (int m = 0; m < 4; ++m)
            for (int n = 0; n < 4; ++n) {
                const Mat2 term = p[static_cast<std::size_t>(m)] * rho_in * p[static_cast<std::size_t>(n)].adjoint();
                for (int r = 0; r < 2; ++r)
                    for (int c = 0; c < 2; ++c) a(j * 4 + r * 2 + c, m * 4 + n) = term(r, c);
            }
        for (int r = 0; r < 2; ++r)
            for (int c = 0; c < 2; ++c) b(j * 4 + r * 2 + c) = rho_out(r, c);
    }
    Eigen::FullPivLU<Eigen::Matrix<Complex, 16, 16>> lu(a);
    if (!lu.isInvertible()) throw NumericalError("process tomography system is singular");
    const Eigen::Matrix<Complex, 16, 1> x = lu.solve(b);

    Mat4 chi;
    for (int m = 0; m < 4; ++m)
        for (int n = 0; n < 4; ++n) chi(m, n) = x(m * 4 + n);
    chi = hermitize<4>(chi);

    ChiEstimate out;
    out.raw = chi;
    Eigen::SelfAdjointEigenSolver<Mat4> solver(chi);
    Eigen::Vector4d ev = solver.eigenvalues();
    out.min_raw_eigenvalue = ev.minCoeff();
    if (ev.minCoeff() < -kEigenRejectTolerance) {
        ev = ev.cwiseMax(0.0);
        ev /= ev.sum();
        const auto& u = solver.eigenvectors();
        chi = hermitize<4>(u * ev.cast<Complex>().asDiagonal() * u.adjoint());
        out.projected = true;
    }
    out.chi = ProcessMatrix::from_matrix(chi);
    return out;
}

/// Infinite-statistics counts or Poisson-sampled counts.
enum class CountMode { Expected, Sampled };

/// Everything the simulated experiment needs besides the channel and time.
struct ExperimentModel {
    MemoryConfig memory;
    DetectionConfig detection;
    PhaseMatchConfig phase_match;
    std::vector<NamedState> inputs{NamedState::H, NamedState::V, NamedState::D, NamedState::R};
};

/// Counts for one prepared input: one record per analyzer basis (HV, DA, RL).
using BasisRecords = std::array<CountRecord, 3>;

struct ProcessResult {
    ProcessMatrix chi = ProcessMatrix::identity_process();
    double process_fidelity = 0.0;
    /// chi_00 of the unprojected solution.
    double raw_chi00 = 0.0;
    bool projected = false;
    std::vector<NamedState> input_labels;
    std::vector<TomographyResult> outputs;
    std::vector<BasisRecords> records;
    double efficiency = 0.0;
    double gamma = 1.0;
};

/// Full reconstruction from per-input count records.
inline ProcessResult reconstruct_process(std::span<const NamedState> inputs,
                                         std::span<const BasisRecords> records) {
    detail::require(inputs.size() == 4 && records.size() == 4,
                    "process reconstruction needs four inputs with counts");
    ProcessResult out;
    out.input_labels.assign(inputs.begin(), inputs.end());
    out.records.assign(records.begin(), records.end());
    std::vector<StatePair> pairs;
    pairs.reserve(4);
    for (std::size_t j = 0; j < 4; ++j) {
        out.outputs.push_back(state_estimate(stokes_from_counts(records[j])));
        pairs.push_back({density_of(inputs[j]), out.outputs.back().rho});
    }
    const ChiEstimate est = process_matrix(pairs);
    out.chi = est.chi;
    out.raw_chi00 = est.raw(0, 0).real();
    out.projected = est.projected;
    out.process_fidelity = process_fidelity(est.chi, ProcessMatrix::identity_process());
    return out;
}

/// Simulates storage, retrieval and polarization analysis for every input.
inline std::vector<BasisRecords> simulate_records(const ChannelSpec& channel, double t_ms,
                                                  const ExperimentModel& model, std::uint64_t pulses,
                                                  std::uint64_t seed, CountMode mode) {
    std::vector<BasisRecords> records;
    records.reserve(model.inputs.size());
    for (std::size_t j = 0; j < model.inputs.size(); ++j) {
        const RetrievalOutcome out =
            release(density_of(model.inputs[j]), channel, t_ms, model.memory, model.phase_match);
        BasisRecords rec;
        for (std::size_t k = 0; k < kAllBases.size(); ++k) {
            const MeasurementBasis basis = kAllBases[k];
            const RatePair rates = expected_rates(out.state, out.efficiency, basis, model.detection);
            if (mode == CountMode::Expected) {
                rec[k] = expected_counts(rates, pulses, basis);
            } else {
                auto engine = rng::make_engine(rng::derive_seed(seed, j, k));
                rec[k] = sample_counts(rates, pulses, basis, engine);
            }
        }
        records.push_back(rec);
    }
    return records;
}

/// Prepare each input, store for t, read out into `channel`, analyze in all
/// three bases, then reconstruct chi and its fidelity to the identity.
inline ProcessResult run_process_tomography(const ChannelSpec& channel, double t_ms,
                                            const ExperimentModel& model, std::uint64_t pulses,
                                            std::uint64_t seed, CountMode mode) {
    const auto records = simulate_records(channel, t_ms, model, pulses, seed, mode);
    ProcessResult result = reconstruct_process(model.inputs, records);
    result.efficiency = retrieval_efficiency(channel.theta_deg, t_ms, model.memory);
    result.gamma = dephasing_factor(t_ms, channel, model.memory);
    return result;
}

struct MonteCarloSummary {
    double stddev = 0.0;
    double mean = 0.0;
    std::size_t resamples_used = 0;
    std::size_t resamples_failed = 0;
};

/// Poisson-resamples every observed count, reruns the reconstruction, and
/// reports the spread of the process fidelity. Resamples that leave a basis
/// without counts are skipped and tallied.
inline MonteCarloSummary monte_carlo_error(std::span<const NamedState> inputs,
                                           std::span<const BasisRecords> observed, std::size_t resamples,
                                           std::uint64_t seed, unsigned threads = 1) {
    detail::require(resamples >= 2, "Monte Carlo error needs at least two resamples");
    std::vector<double> fidelities(resamples, 0.0);
    std::vector<char> ok(resamples, 0);
    parallel_for(resamples, threads, [&](std::size_t r) {
        auto engine = rng::make_engine(rng::derive_seed(seed, 0x4D43ULL, r));
        std::vector<BasisRecords> draw(observed.begin(), observed.end());
        for (auto& per_input : draw)
            for (auto& rec : per_input) {
                rec.n_plus = sample_poisson(rec.n_plus, engine);
                rec.n_minus = sample_poisson(rec.n_minus, engine);
            }
        try {
            fidelities[r] = reconstruct_process(inputs, draw).process_fidelity;
            ok[r] = 1;
        } catch (const DomainError&) {
            ok[r] = 0;
        }
    });
    MonteCarloSummary s;
    double sum = 0.0;
    for (std::size_t r = 0; r < resamples; ++r)
        if (ok[r]) {
            sum += fidelities[r];
            ++s.resamples_used;
        }
    s.resamples_failed = resamples - s.resamples_used;
    if (s.resamples_used < 2) throw NumericalError("Monte Carlo error: fewer than two usable resamples");
    s.mean = sum / static_cast<double>(s.resamples_used);
    double ss = 0.0;
    for (std::size_t r = 0; r < resamples; ++r)
        if (ok[r]) ss += (fidelities[r] - s.mean) * (fidelities[r] - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(s.resamples_used - 1));
    return s;
}

} // namespace qmem

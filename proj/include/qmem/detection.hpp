#pragma once

// Detection chain: efficiencies, additive background and Poisson photon
// statistics for the three polarization analyzer settings.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string_view>
#include <utility>

#include "qmem/error.hpp"
#include "qmem/polarization.hpp"
#include "qmem/rng.hpp"

namespace qmem {

struct DetectionConfig {
    double eta_fiber = 0.80;
    double eta_etalons = 0.58;
    double eta_mmf = 0.97;
    double eta_spd = 0.50;
    /// Measured total efficiency. When empty the chain product is used.
    std::optional<double> eta_total = 0.23;
    double n_bar = 1.0;
    double background_n = 7e-4;

    void validate() const {
        auto frac = [](double v) { return v > 0.0 && v <= 1.0; };
        detail::require(frac(eta_fiber), "detection.eta_fiber must be in (0, 1]");
        detail::require(frac(eta_etalons), "detection.eta_etalons must be in (0, 1]");
        detail::require(frac(eta_mmf), "detection.eta_mmf must be in (0, 1]");
        detail::require(frac(eta_spd), "detection.eta_spd must be in (0, 1]");
        detail::require(!eta_total || frac(*eta_total), "detection.eta_total must be in (0, 1]");
        detail::require(n_bar > 0.0 && std::isfinite(n_bar), "detection.n_bar must be > 0");
        detail::require(background_n >= 0.0 && std::isfinite(background_n),
                        "detection.background_n must be >= 0");
    }
};

/// Product of the four chain efficiencies.
inline double total_detection_efficiency(const DetectionConfig& cfg) {
    return cfg.eta_fiber * cfg.eta_etalons * cfg.eta_mmf * cfg.eta_spd;
}

/// Efficiency the model actually uses: the measured total if set, else the chain product.
inline double effective_detection_efficiency(const DetectionConfig& cfg) {
    return cfg.eta_total.value_or(total_detection_efficiency(cfg));
}

enum class MeasurementBasis { HV, DA, RL };

inline constexpr std::array<MeasurementBasis, 3> kAllBases{MeasurementBasis::HV, MeasurementBasis::DA,
                                                           MeasurementBasis::RL};

inline std::string_view to_string(MeasurementBasis b) noexcept {
    switch (b) {
    case MeasurementBasis::HV: return "HV";
    case MeasurementBasis::DA: return "DA";
    case MeasurementBasis::RL: return "RL";
    }
    return "?";
}

/// Pauli index (1..3) whose +1 eigenstate is the basis' "+" outcome.
constexpr int pauli_axis(MeasurementBasis b) noexcept {
    switch (b) {
    case MeasurementBasis::HV: return 1;
    case MeasurementBasis::DA: return 2;
    case MeasurementBasis::RL: return 3;
    }
    return 0;
}

inline std::pair<NamedState, NamedState> basis_states(MeasurementBasis b) noexcept {
    switch (b) {
    case MeasurementBasis::HV: return {NamedState::H, NamedState::V};
    case MeasurementBasis::DA: return {NamedState::D, NamedState::A};
    case MeasurementBasis::RL: return {NamedState::R, NamedState::L};
    }
    return {NamedState::H, NamedState::V};
}

/// Projectors (Pi_plus, Pi_minus) onto the basis' named pair.
inline std::pair<Mat2, Mat2> projectors(MeasurementBasis b) {
    const auto [plus, minus] = basis_states(b);
    return {density_of(plus).matrix(), density_of(minus).matrix()};
}

/// Mean detections per pulse at the two analyzer outputs.
struct RatePair {
    double plus = 0.0;
    double minus = 0.0;
};

/// Counts at the two outputs of one analyzer setting over `pulses` pulses.
/// Counts are stored as doubles so that infinite-statistics (expected) records
/// share the type; sampled records are integer-valued.
struct CountRecord {
    MeasurementBasis basis = MeasurementBasis::HV;
    double n_plus = 0.0;
    double n_minus = 0.0;
    std::uint64_t pulses = 1;

    double total() const noexcept { return n_plus + n_minus; }
};

inline constexpr std::uint64_t kMaxPulses = 1'000'000'000ULL;

/// mu_pm = n_bar eta_d R Tr(Pi_pm rho) + N.
inline RatePair expected_rates(const DensityMatrix& state, double efficiency, MeasurementBasis basis,
                               const DetectionConfig& cfg) {
    detail::require(efficiency >= 0.0 && efficiency <= 1.0, "efficiency must lie in [0, 1]");
    const double signal = cfg.n_bar * effective_detection_efficiency(cfg) * efficiency;
    // Tr(Pi_pm rho) = (1 pm S_axis) / 2; exact complementarity of the pair.
    const double s = std::clamp((state.matrix() * pauli(pauli_axis(basis))).trace().real(), -1.0, 1.0);
    return {signal * 0.5 * (1.0 + s) + cfg.background_n, signal * 0.5 * (1.0 - s) + cfg.background_n};
}

/// M * mu, the infinite-statistics record.
inline CountRecord expected_counts(const RatePair& rates, std::uint64_t pulses, MeasurementBasis basis) {
    detail::require(pulses >= 1 && pulses <= kMaxPulses, "pulse count must lie in [1, 1e9]");
    const double m = static_cast<double>(pulses);
    return {basis, m * rates.plus, m * rates.minus, pulses};
}

inline double sample_poisson(double mean, rng::Engine& engine) {
    if (mean <= 0.0) return 0.0;
    std::poisson_distribution<std::int64_t> dist(mean);
    return static_cast<double>(dist(engine));
}

/// Independent Poisson(M mu_pm) draws.
inline CountRecord sample_counts(const RatePair& rates, std::uint64_t pulses, MeasurementBasis basis,
                                 rng::Engine& engine) {
    detail::require(pulses >= 1 && pulses <= kMaxPulses, "pulse count must lie in [1, 1e9]");
    detail::require(rates.plus >= 0.0 && rates.minus >= 0.0, "rates must be non-negative");
    const double m = static_cast<double>(pulses);
    CountRecord rec{basis, 0.0, 0.0, pulses};
    rec.n_plus = sample_poisson(m * rates.plus, engine);
    rec.n_minus = sample_poisson(m * rates.minus, engine);
    return rec;
}

/// p rho + (1 - p) I/2 with p = n_bar eta_d R / (n_bar eta_d R + 2N).
inline DensityMatrix postselected_state(const DensityMatrix& state_deph, double efficiency,
                                        const DetectionConfig& cfg) {
    detail::require(efficiency >= 0.0 && efficiency <= 1.0, "efficiency must lie in [0, 1]");
    const double signal = cfg.n_bar * effective_detection_efficiency(cfg) * efficiency;
    const double total = signal + 2.0 * cfg.background_n;
    if (total <= 0.0) throw DomainError("post-selection undefined: no signal and no background");
    const double p = signal / total;
    return DensityMatrix::from_matrix(p * state_deph.matrix() + (1.0 - p) * 0.5 * Mat2::Identity());
}

} // namespace qmem

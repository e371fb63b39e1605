#pragma once

// Storage and directional retrieval: efficiency vs read angle and storage
// time, dephasing of the stored R/L coherence, phase-matched emission angle,
// and routing into one of the configured output channels.

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "qmem/error.hpp"
#include "qmem/polarization.hpp"

namespace qmem {

/// Largest read angle (degrees) the model accepts.
inline constexpr double kMaxThetaDeg = 5.0;

struct ChannelSpec {
    std::string id;
    double theta_deg = 0.0;

    friend bool operator==(const ChannelSpec&, const ChannelSpec&) = default;
};

/// Ordered set of output channels with strictly increasing read angles in [0, 5] deg.
class ChannelSet {
public:
    explicit ChannelSet(std::vector<ChannelSpec> channels) : channels_(std::move(channels)) {
        detail::require(!channels_.empty(), "channel set must not be empty");
        for (std::size_t i = 0; i < channels_.size(); ++i) {
            const auto& c = channels_[i];
            detail::require(!c.id.empty(), "channel id must not be empty");
            detail::require(c.theta_deg >= 0.0 && c.theta_deg <= kMaxThetaDeg,
                            "channel " + c.id + ": theta must lie in [0, 5] degrees");
            if (i > 0)
                detail::require(c.theta_deg > channels_[i - 1].theta_deg,
                                "channel angles must be strictly increasing");
            for (std::size_t j = 0; j < i; ++j)
                detail::require(channels_[j].id != c.id, "duplicate channel id " + c.id);
        }
    }

    /// S0..S6 at 0, 0.4, 0.8, 2, 3, 4, 5 degrees.
    static ChannelSet defaults() {
        return ChannelSet({{"S0", 0.0}, {"S1", 0.4}, {"S2", 0.8}, {"S3", 2.0},
                           {"S4", 3.0}, {"S5", 4.0}, {"S6", 5.0}});
    }

    const ChannelSpec& at(std::string_view id) const {
        for (const auto& c : channels_)
            if (c.id == id) return c;
        throw DomainError("unknown channel id '" + std::string(id) + "'");
    }

    bool contains(std::string_view id) const {
        return std::any_of(channels_.begin(), channels_.end(), [&](const auto& c) { return c.id == id; });
    }

    const std::vector<ChannelSpec>& channels() const noexcept { return channels_; }
    std::size_t size() const noexcept { return channels_.size(); }
    auto begin() const noexcept { return channels_.begin(); }
    auto end() const noexcept { return channels_.end(); }

    friend bool operator==(const ChannelSet&, const ChannelSet&) = default;

private:
    std::vector<ChannelSpec> channels_;
};

/// Physical memory parameters. Times in ms, angles in degrees.
struct MemoryConfig {
    double r0_axis = 0.14;          ///< retrieval efficiency at theta = 0, t = 0
    double r0_ch2 = 0.127;          ///< measured efficiency at the anchor angle, t = 0
    double anchor_theta_deg = 0.8;  ///< read angle where r0_ch2 was measured
    bool use_anchor = true;         ///< apply the r0_ch2 correction to the walk-off profile
    double tau_ms = 2.9;
    double sigma_gamma_ms = 104.0;
    double theta_w_deg = 6.684;
    /// Per-channel residual coherence; channels not listed use 1.
    std::map<std::string, double> static_gamma;
    /// Optional tabulated (theta_deg, R0) profile replacing the walk-off model.
    std::vector<std::pair<double, double>> r0_table;

    // Metadata only; no observable depends on these.
    double b0_gauss = 12.5;
    double gradient_mg_per_cm = 5.0;
    double sigma_b_mg = 0.4;

    double static_gamma_for(const std::string& channel_id) const {
        const auto it = static_gamma.find(channel_id);
        return it == static_gamma.end() ? 1.0 : it->second;
    }

    void validate() const {
        detail::require(r0_axis > 0.0 && r0_axis <= 1.0, "memory.r0_axis must be in (0, 1]");
        detail::require(r0_ch2 > 0.0 && r0_ch2 <= 1.0, "memory.r0_ch2 must be in (0, 1]");
        detail::require(anchor_theta_deg > 0.0 && anchor_theta_deg < kMaxThetaDeg,
                        "memory.anchor_theta must be in (0, 5) degrees");
        detail::require(tau_ms > 0.0 && std::isfinite(tau_ms), "memory.tau must be > 0");
        detail::require(sigma_gamma_ms > 0.0, "memory.sigma_gamma must be > 0");
        detail::require(theta_w_deg > 0.0, "memory.theta_w must be > 0");
        for (const auto& [id, g] : static_gamma)
            detail::require(g >= 0.0 && g <= 1.0, "memory.static_gamma." + id + " must be in [0, 1]");
        for (std::size_t i = 0; i < r0_table.size(); ++i) {
            detail::require(r0_table[i].second > 0.0 && r0_table[i].second <= 1.0,
                            "memory.r0_table entries must have R0 in (0, 1]");
            if (i > 0)
                detail::require(r0_table[i].first > r0_table[i - 1].first,
                                "memory.r0_table angles must be strictly increasing");
        }
        detail::require(r0_table.empty() || r0_table.size() >= 2,
                        "memory.r0_table needs at least two points");
    }
};

struct PhaseMatchConfig {
    /// (omega_ae - omega_be) / omega_be: ground hyperfine splitting over the D1 coupling frequency.
    double delta = 1.81e-5;

    void validate() const {
        detail::require(std::abs(delta) < 1e-3, "phase_match.delta must satisfy |delta| < 1e-3");
    }
};

struct RetrievalOutcome {
    DensityMatrix state = DensityMatrix::maximally_mixed();
    double efficiency = 0.0;
    double gamma = 1.0;
    double theta_out_deg = 0.0;
};

namespace detail {

inline void require_theta(double theta_deg) {
    require(std::isfinite(theta_deg) && theta_deg >= 0.0 && theta_deg <= kMaxThetaDeg,
            "read angle must lie in [0, 5] degrees");
}

inline void require_time(double t_ms) {
    require(std::isfinite(t_ms) && t_ms >= 0.0, "storage time must be >= 0");
}

/// Log-linear interpolation through (theta, R0) nodes; constant beyond the ends.
inline double interpolate_log(const std::vector<std::pair<double, double>>& nodes, double theta) {
    if (theta <= nodes.front().first) return nodes.front().second;
    if (theta >= nodes.back().first) return nodes.back().second;
    auto hi = std::upper_bound(nodes.begin(), nodes.end(), theta,
                               [](double x, const auto& node) { return x < node.first; });
    auto lo = hi - 1;
    const double w = (theta - lo->first) / (hi->first - lo->first);
    return std::exp((1.0 - w) * std::log(lo->second) + w * std::log(hi->second));
}

} // namespace detail

/// Gaussian spatial-mode overlap R0(0) * exp(-theta^2 / theta_w^2).
inline double walkoff_profile(double theta_deg, const MemoryConfig& cfg) {
    detail::require_theta(theta_deg);
    const double x = theta_deg / cfg.theta_w_deg;
    return cfg.r0_axis * std::exp(-x * x);
}

/// Zero-storage-time efficiency R0(theta).
///
/// Walk-off Gaussian, multiplied by a correction that is 1 at 0 and 5 degrees
/// and makes the curve pass through r0_ch2 at the anchor angle (log-linear in
/// between). A tabulated profile, if configured, replaces both.
inline double initial_efficiency(double theta_deg, const MemoryConfig& cfg) {
    detail::require_theta(theta_deg);
    if (!cfg.r0_table.empty()) return detail::interpolate_log(cfg.r0_table, theta_deg);
    const double base = walkoff_profile(theta_deg, cfg);
    if (!cfg.use_anchor) return base;
    const double log_c = std::log(cfg.r0_ch2 / walkoff_profile(cfg.anchor_theta_deg, cfg));
    const std::vector<std::pair<double, double>> correction{
        {0.0, 1.0}, {cfg.anchor_theta_deg, std::exp(log_c)}, {kMaxThetaDeg, 1.0}};
    return base * detail::interpolate_log(correction, theta_deg);
}

/// R(theta, t) = R0(theta) exp(-t / tau).
inline double retrieval_efficiency(double theta_deg, double t_ms, const MemoryConfig& cfg) {
    detail::require_time(t_ms);
    return std::min(1.0, initial_efficiency(theta_deg, cfg) * std::exp(-t_ms / cfg.tau_ms));
}

/// static_gamma[channel] * exp(-t^2 / sigma_gamma^2).
inline double dephasing_factor(double t_ms, const ChannelSpec& channel, const MemoryConfig& cfg) {
    detail::require_time(t_ms);
    const double x = t_ms / cfg.sigma_gamma_ms;
    return cfg.static_gamma_for(channel.id) * std::exp(-x * x);
}

/// Scales the R/L coherence by gamma; diagonal entries are untouched.
inline DensityMatrix dephase(const DensityMatrix& rho, double gamma) {
    detail::require(gamma >= 0.0 && gamma <= 1.0, "dephasing factor must lie in [0, 1]");
    Mat2 m = rho.matrix();
    m(0, 1) *= gamma;
    m(1, 0) *= gamma;
    return DensityMatrix::from_matrix(m);
}

/// Phase-matched emission angle atan(sin theta / (delta + cos theta)), degrees.
inline double theta_prime(double theta_deg, const PhaseMatchConfig& pm) {
    detail::require_theta(theta_deg);
    if (pm.delta == 0.0) return theta_deg;
    constexpr double rad = std::numbers::pi / 180.0;
    const double th = theta_deg * rad;
    return std::atan2(std::sin(th), pm.delta + std::cos(th)) / rad;
}

/// Reads the stored qubit out into exactly one channel after storage time t.
inline RetrievalOutcome release(const DensityMatrix& rho_in, const ChannelSpec& channel, double t_ms,
                                const MemoryConfig& cfg, const PhaseMatchConfig& pm) {
    RetrievalOutcome out;
    out.gamma = dephasing_factor(t_ms, channel, cfg);
    out.state = dephase(rho_in, out.gamma);
    out.efficiency = retrieval_efficiency(channel.theta_deg, t_ms, cfg);
    out.theta_out_deg = theta_prime(channel.theta_deg, pm);
    return out;
}

/// Channel lookup by id; unknown ids are rejected.
inline RetrievalOutcome release(const DensityMatrix& rho_in, const ChannelSet& channels,
                                std::string_view channel_id, double t_ms, const MemoryConfig& cfg,
                                const PhaseMatchConfig& pm) {
    return release(rho_in, channels.at(channel_id), t_ms, cfg, pm);
}

} // namespace qmem

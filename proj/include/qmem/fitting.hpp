#pragma once

// Closed-form decay models and their parameter estimation.
//
//   R(t) = R0 exp(-t / tau)
//   gamma(t) = gamma0 exp(-t^2 / sigma_gamma^2)
//   F(t) = ((1 + gamma(t)) x(t) + N) / (2 (x(t) + 2N)),   x = n_bar eta_d R(t)
//
// F is chi_00 of the post-selected, dephased retrieval channel.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "qmem/detection.hpp"
#include "qmem/error.hpp"

namespace qmem {

struct FidelityModel {
    double r0 = 0.127;
    double tau_ms = 2.9;
    double sigma_gamma_ms = 104.0;
    double static_gamma = 1.0;
};

namespace detail {

inline double signal_rate(double t_ms, const FidelityModel& m, const DetectionConfig& det) {
    return det.n_bar * effective_detection_efficiency(det) * m.r0 * std::exp(-t_ms / m.tau_ms);
}

inline double gaussian_coherence(double t_ms, double sigma_gamma_ms) {
    const double x = t_ms / sigma_gamma_ms;
    return std::exp(-x * x);
}

} // namespace detail

inline double closed_form_fidelity(double t_ms, const FidelityModel& m, const DetectionConfig& det) {
    detail::require(t_ms >= 0.0 && std::isfinite(t_ms), "storage time must be >= 0");
    detail::require(m.r0 >= 0.0 && m.r0 <= 1.0, "R0 must lie in [0, 1]");
    detail::require(m.tau_ms > 0.0, "tau must be > 0");
    detail::require(m.sigma_gamma_ms > 0.0, "sigma_gamma must be > 0");
    detail::require(m.static_gamma >= 0.0 && m.static_gamma <= 1.0, "static gamma must lie in [0, 1]");
    const double x = detail::signal_rate(t_ms, m, det);
    const double n = det.background_n;
    if (x + 2.0 * n <= 0.0) throw DomainError("fidelity undefined without signal or background");
    const double gamma = m.static_gamma * detail::gaussian_coherence(t_ms, m.sigma_gamma_ms);
    return ((1.0 + gamma) * x + n) / (2.0 * (x + 2.0 * n));
}

// ---------------------------------------------------------------------------
// Datasets and reports
// ---------------------------------------------------------------------------

struct DecayPoint {
    double t_ms = 0.0;
    double value = 0.0;
    std::optional<double> sigma;
};

class DecayDataset {
public:
    DecayDataset() = default;

    explicit DecayDataset(std::vector<DecayPoint> points) : points_(std::move(points)) {
        bool any_sigma = false, all_sigma = true;
        for (std::size_t i = 0; i < points_.size(); ++i) {
            const auto& p = points_[i];
            detail::require(std::isfinite(p.t_ms) && p.t_ms >= 0.0, "dataset times must be finite and >= 0");
            detail::require(std::isfinite(p.value), "dataset values must be finite");
            if (i > 0) detail::require(p.t_ms > points_[i - 1].t_ms, "dataset times must be strictly increasing");
            if (p.sigma) {
                detail::require(std::isfinite(*p.sigma) && *p.sigma > 0.0, "dataset sigmas must be > 0");
                any_sigma = true;
            } else {
                all_sigma = false;
            }
        }
        detail::require(!any_sigma || all_sigma, "either every point or no point must carry a sigma");
    }

    const std::vector<DecayPoint>& points() const noexcept { return points_; }
    std::size_t size() const noexcept { return points_.size(); }
    bool weighted() const noexcept { return !points_.empty() && points_.front().sigma.has_value(); }

    double weight(std::size_t i) const {
        const auto& s = points_[i].sigma;
        return s ? 1.0 / (*s * *s) : 1.0;
    }

private:
    std::vector<DecayPoint> points_;
};

struct FitReport {
    std::vector<std::pair<std::string, double>> parameters;
    /// sqrt of the (weighted) sum of squared residuals.
    double residual_norm = 0.0;
    std::vector<double> covariance_diag;
    int iterations = 0;
    bool converged = false;
    /// Estimate sits on a search bound (parameter unidentifiable from the data).
    bool at_bound = false;
    /// Profile-likelihood interval for the first parameter, when computed.
    /// Preferred over covariance_diag when the model is strongly nonlinear in it.
    std::optional<std::pair<double, double>> profile_interval;

    double parameter(const std::string& name) const {
        for (const auto& [k, v] : parameters)
            if (k == name) return v;
        throw DomainError("fit report has no parameter '" + name + "'");
    }
};

// ---------------------------------------------------------------------------
// Exponential lifetime fit
// ---------------------------------------------------------------------------

/// Least-squares R0 exp(-t / tau): log-linear seed, damped Gauss-Newton refinement.
inline FitReport fit_exponential(const DecayDataset& data, int max_iterations = 200, double rel_tol = 1e-8) {
    const auto& pts = data.points();
    const std::size_t n = pts.size();
    if (n < 3) throw DomainError("exponential fit needs at least 3 points");
    for (const auto& p : pts)
        if (p.value <= 0.0) throw DomainError("exponential fit needs strictly positive values");

    // Seed: weighted regression of ln y on t (delta-method weights w y^2).
    double sw = 0, st = 0, sy = 0, stt = 0, sty = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double w = data.weight(i) * pts[i].value * pts[i].value;
        const double ly = std::log(pts[i].value);
        sw += w;
        st += w * pts[i].t_ms;
        sy += w * ly;
        stt += w * pts[i].t_ms * pts[i].t_ms;
        sty += w * pts[i].t_ms * ly;
    }
    const double denom = sw * stt - st * st;
    if (!(denom > 0.0)) throw NumericalError("exponential fit: degenerate time grid");
    const double slope = (sw * sty - st * sy) / denom;
    if (!(slope < 0.0)) throw NumericalError("exponential fit: data do not decay");
    double r0 = std::exp((sy - slope * st) / sw);
    double tau = -1.0 / slope;

    auto sse = [&](double a, double t) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double r = pts[i].value - a * std::exp(-pts[i].t_ms / t);
            s += data.weight(i) * r * r;
        }
        return s;
    };

    auto normal_matrix = [&](double a, double t, Eigen::Vector2d* grad) {
        Eigen::Matrix2d jtj = Eigen::Matrix2d::Zero();
        Eigen::Vector2d jtr = Eigen::Vector2d::Zero();
        for (std::size_t i = 0; i < n; ++i) {
            const double e = std::exp(-pts[i].t_ms / t);
            const Eigen::Vector2d j(e, a * e * pts[i].t_ms / (t * t));
            const double r = pts[i].value - a * e;
            jtj += data.weight(i) * j * j.transpose();
            jtr += data.weight(i) * j * r;
        }
        if (grad) *grad = jtr;
        return jtj;
    };

    FitReport rep;
    double current = sse(r0, tau);
    for (int it = 1; it <= max_iterations; ++it) {
        rep.iterations = it;
        Eigen::Vector2d jtr;
        const Eigen::Matrix2d jtj = normal_matrix(r0, tau, &jtr);
        const Eigen::Vector2d step = jtj.ldlt().solve(jtr);
        if (!step.allFinite()) throw NumericalError("exponential fit: singular normal equations");
        double lambda = 1.0;
        bool accepted = false;
        for (int halving = 0; halving < 40; ++halving, lambda *= 0.5) {
            const double a = r0 + lambda * step(0);
            const double t = tau + lambda * step(1);
            if (a <= 0.0 || t <= 0.0) continue;
            const double trial = sse(a, t);
            if (trial <= current) {
                r0 = a;
                tau = t;
                current = trial;
                accepted = true;
                break;
            }
        }
        const double rel = std::max(std::abs(lambda * step(0)) / r0, std::abs(lambda * step(1)) / tau);
        if (!accepted || rel < rel_tol) {
            // A rejected step means no descent direction is left at machine precision.
            rep.converged = true;
            break;
        }
    }
    if (!rep.converged) throw NumericalError("exponential fit did not converge in " +
                                             std::to_string(max_iterations) + " iterations");

    rep.parameters = {{"R0", r0}, {"tau", tau}};
    rep.residual_norm = std::sqrt(current);
    Eigen::Matrix2d cov = normal_matrix(r0, tau, nullptr).inverse();
    if (!data.weighted()) cov *= current / static_cast<double>(n - 2);
    rep.covariance_diag = {cov(0, 0), cov(1, 1)};
    return rep;
}

// ---------------------------------------------------------------------------
// Dephasing-time fit
// ---------------------------------------------------------------------------

struct SigmaGammaFitOptions {
    double lower_ms = 0.1;
    double upper_ms = 1e5;
    /// Also fit the static coherence factor (profiled out linearly).
    bool joint_static_gamma = false;
    /// Width of the reported profile interval in standard deviations (delta chi^2 = k^2).
    double interval_sigmas = 1.0;
};

namespace detail {

/// Per-point pieces of F = a + b * gamma0 * g(t): a, and b without the gamma0 g factor.
struct FidelityTerms {
    std::vector<double> a, b;
};

inline FidelityTerms fidelity_terms(const DecayDataset& data, const FidelityModel& m, const DetectionConfig& det) {
    FidelityTerms ft;
    const double nb = det.background_n;
    for (const auto& p : data.points()) {
        const double x = signal_rate(p.t_ms, m, det);
        if (x + 2.0 * nb <= 0.0) throw DomainError("fidelity undefined without signal or background");
        ft.a.push_back((x + nb) / (2.0 * (x + 2.0 * nb)));
        ft.b.push_back(x / (2.0 * (x + 2.0 * nb)));
    }
    return ft;
}

/// Golden-section minimization of f over [lo, hi].
template <typename F>
double golden_section(F&& f, double lo, double hi, double tol) {
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = hi - inv_phi * (hi - lo);
    double d = lo + inv_phi * (hi - lo);
    double fc = f(c), fd = f(d);
    for (int i = 0; i < 500 && (hi - lo) > tol; ++i) {
        if (fc <= fd) {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    return fc <= fd ? c : d;
}

} // namespace detail

/// Least-squares sigma_gamma with R0, tau, eta_d, N (and by default gamma0) held fixed.
///
/// Coarse log-spaced scan for the global basin, golden-section refinement in
/// log sigma, then Gauss-Newton polishing.
inline FitReport fit_sigma_gamma(const DecayDataset& data, const FidelityModel& fixed, const DetectionConfig& det,
                                 const SigmaGammaFitOptions& opt = {}) {
    const auto& pts = data.points();
    const std::size_t n = pts.size();
    const std::size_t n_params = opt.joint_static_gamma ? 2 : 1;
    if (n < n_params + 1) throw DomainError("sigma_gamma fit needs more points than parameters");
    for (const auto& p : pts)
        if (!(p.value > 0.0 && p.value <= 1.0)) throw DomainError("fidelity data must lie in (0, 1]");
    detail::require(opt.lower_ms > 0.0 && opt.upper_ms > opt.lower_ms, "invalid sigma_gamma bounds");
    detail::require(opt.interval_sigmas >= 0.0, "interval width must be >= 0");

    const auto terms = detail::fidelity_terms(data, fixed, det);

    // Best gamma0 for a given sigma: fixed, or linear least squares clamped to [0, 1].
    auto gamma0_for = [&](double sigma) {
        if (!opt.joint_static_gamma) return fixed.static_gamma;
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double bg = terms.b[i] * detail::gaussian_coherence(pts[i].t_ms, sigma);
            num += data.weight(i) * bg * (pts[i].value - terms.a[i]);
            den += data.weight(i) * bg * bg;
        }
        return den > 0.0 ? std::clamp(num / den, 0.0, 1.0) : fixed.static_gamma;
    };
    auto sse = [&](double sigma) {
        const double g0 = gamma0_for(sigma);
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double f = terms.a[i] + terms.b[i] * g0 * detail::gaussian_coherence(pts[i].t_ms, sigma);
            s += data.weight(i) * (pts[i].value - f) * (pts[i].value - f);
        }
        return s;
    };

    const double llo = std::log(opt.lower_ms), lhi = std::log(opt.upper_ms);
    constexpr int kScan = 400;
    int best = 0;
    double best_val = std::numeric_limits<double>::infinity();
    for (int k = 0; k <= kScan; ++k) {
        const double v = sse(std::exp(llo + (lhi - llo) * k / kScan));
        if (!std::isfinite(v)) throw NumericalError("sigma_gamma fit: non-finite objective");
        if (v < best_val) {
            best_val = v;
            best = k;
        }
    }
    const double step = (lhi - llo) / kScan;
    const double a = std::max(llo, llo + (best - 1) * step);
    const double b = std::min(lhi, llo + (best + 1) * step);
    double sigma = std::exp(detail::golden_section([&](double u) { return sse(std::exp(u)); }, a, b, 1e-12));

    // Gauss-Newton polish on sigma (gamma0 re-profiled each step).
    int iterations = 0;
    bool converged = false;
    for (; iterations < 50; ++iterations) {
        const double g0 = gamma0_for(sigma);
        double jtj = 0.0, jtr = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double t = pts[i].t_ms;
            const double g = detail::gaussian_coherence(t, sigma);
            const double f = terms.a[i] + terms.b[i] * g0 * g;
            const double j = terms.b[i] * g0 * g * 2.0 * t * t / (sigma * sigma * sigma);
            jtj += data.weight(i) * j * j;
            jtr += data.weight(i) * j * (pts[i].value - f);
        }
        if (!(jtj > 0.0)) {
            converged = true;
            break;
        }
        const double delta = jtr / jtj;
        const double trial = std::clamp(sigma + delta, opt.lower_ms, opt.upper_ms);
        if (sse(trial) > sse(sigma)) {
            converged = true;
            break;
        }
        const double rel = std::abs(trial - sigma) / sigma;
        sigma = trial;
        if (rel < 1e-10) {
            converged = true;
            break;
        }
    }
    if (!converged) throw NumericalError("sigma_gamma fit did not converge");

    FitReport rep;
    rep.iterations = iterations;
    rep.converged = true;
    const double g0 = gamma0_for(sigma);
    rep.parameters = {{"sigma_gamma", sigma}};
    if (opt.joint_static_gamma) rep.parameters.emplace_back("static_gamma", g0);
    const double resid = sse(sigma);
    rep.residual_norm = std::sqrt(resid);
    rep.at_bound = sigma >= opt.upper_ms * (1.0 - 1e-6) || sigma <= opt.lower_ms * (1.0 + 1e-6);

    Eigen::MatrixXd jtj = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_params), static_cast<Eigen::Index>(n_params));
    for (std::size_t i = 0; i < n; ++i) {
        const double t = pts[i].t_ms;
        const double g = detail::gaussian_coherence(t, sigma);
        Eigen::VectorXd j(static_cast<Eigen::Index>(n_params));
        j(0) = terms.b[i] * g0 * g * 2.0 * t * t / (sigma * sigma * sigma);
        if (opt.joint_static_gamma) j(1) = terms.b[i] * g;
        jtj += data.weight(i) * j * j.transpose();
    }
    const double scale = data.weighted() ? 1.0 : resid / static_cast<double>(n - n_params);

    // Walk outward on the scan grid until the objective exceeds the threshold,
    // then bisect the crossing in log sigma; an uncrossed side ends at its bound.
    const double threshold = resid + opt.interval_sigmas * opt.interval_sigmas * std::max(scale, 1e-300);
    auto crossing = [&](double dir) {
        const double l0 = std::log(sigma);
        double inside = l0;
        for (double l = l0 + dir * step;; l += dir * step) {
            const double edge = dir < 0 ? llo : lhi;
            if ((dir < 0 && l <= edge) || (dir > 0 && l >= edge)) {
                if (sse(std::exp(edge)) <= threshold) return std::exp(edge);
                l = edge;
            }
            if (sse(std::exp(l)) > threshold) {
                double in = inside, out = l;
                for (int i = 0; i < 100 && std::abs(out - in) > 1e-12; ++i) {
                    const double mid = 0.5 * (in + out);
                    (sse(std::exp(mid)) > threshold ? out : in) = mid;
                }
                return std::exp(0.5 * (in + out));
            }
            inside = l;
        }
    };
    if (opt.interval_sigmas > 0.0) rep.profile_interval = std::make_pair(crossing(-1.0), crossing(1.0));

    Eigen::FullPivLU<Eigen::MatrixXd> lu(jtj);
    if (lu.isInvertible()) {
        const Eigen::MatrixXd cov = lu.inverse() * scale;
        for (Eigen::Index k = 0; k < cov.rows(); ++k) rep.covariance_diag.push_back(cov(k, k));
    } else {
        rep.covariance_diag.assign(n_params, std::numeric_limits<double>::infinity());
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

/// Achievable fidelity range [F(gamma0 = 0), F(gamma0 = 1)] at time t.
inline std::pair<double, double> static_gamma_range(double t_ms, FidelityModel m, const DetectionConfig& det) {
    m.static_gamma = 0.0;
    const double lo = closed_form_fidelity(t_ms, m, det);
    m.static_gamma = 1.0;
    return {lo, closed_form_fidelity(t_ms, m, det)};
}

/// Exact inversion of closed_form_fidelity for the static coherence factor.
inline double calibrate_static_gamma(double target_f, double t_ms, const FidelityModel& m, const DetectionConfig& det) {
    const auto [lo, hi] = static_gamma_range(t_ms, m, det);
    constexpr double slack = 1e-12;
    if (!(target_f >= lo - slack && target_f <= hi + slack))
        throw DomainError("target fidelity " + std::to_string(target_f) + " is not achievable; achievable range is [" +
                          std::to_string(lo) + ", " + std::to_string(hi) + "]");
    const double x = detail::signal_rate(t_ms, m, det);
    const double g = detail::gaussian_coherence(t_ms, m.sigma_gamma_ms);
    if (!(x * g > 0.0)) throw DomainError("static gamma is unidentifiable without signal coherence");
    const double nb = det.background_n;
    const double gamma0 = (2.0 * target_f * (x + 2.0 * nb) - x - nb) / (g * x);
    return std::clamp(gamma0, 0.0, 1.0);
}

} // namespace qmem

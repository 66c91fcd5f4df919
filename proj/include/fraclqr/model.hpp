#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>

#include "errors.hpp"

namespace fraclqr {

/**
 * Scalar LQ regulator for the Caputo fractional delay equation
 *
 *   D^alpha X(t) = b X(t - delta) + c u(t) + sigma dW/dt,   X = x0 on [-delta, 0],
 *
 * with discounted cost  J = 1/2 E int e^{-lambda t} (X^2 + u^2 / gamma) dt.
 */
struct LqModel {
    double x0 = 1.0;
    double b = 0.0;
    double c = 1.0;
    double sigma = 0.0;
    double gamma = 1.0;
    double alpha = 1.0;
    double delta = 0.0;
    double lambda = 1.0;

    /// c^2 gamma + b^2 e^{-lambda delta}; the weight that multiplies f_lambda in g_lambda.
    double kernel_amplitude() const { return c * c * gamma + b * b * std::exp(-lambda * delta); }

    bool operator==(const LqModel&) const = default;
};

/// Checks the parameter domains. Throws ModelError naming the first violated constraint.
inline void validate(const LqModel& m) {
    auto finite = [](double v) { return std::isfinite(v); };
    if (!finite(m.x0) || !finite(m.b) || !finite(m.c) || !finite(m.sigma) || !finite(m.gamma) ||
        !finite(m.alpha) || !finite(m.delta) || !finite(m.lambda))
        throw ModelError("parameters must be finite");
    if (m.c == 0.0) throw ModelError("c must be nonzero");
    if (!(m.gamma > 0.0)) throw ModelError("gamma must be positive");
    if (!(m.alpha > 0.5)) throw ModelError("alpha must exceed 1/2");
    if (m.alpha > 1.0) throw ModelError("alpha must not exceed 1");
    if (m.delta < 0.0) throw ModelError("delta must be nonnegative");
    if (!(m.lambda > 0.0)) throw ModelError("lambda must be positive");
    if (m.sigma < 0.0) throw ModelError("sigma must be nonnegative");
}

namespace detail {

// Root of a strictly decreasing F: (0, inf) -> (0, inf) at level `target`.
inline double decreasing_root(const std::function<double(double)>& F, double target) {
    double lo = 1e-12;
    double hi = 1.0;
    while (F(hi) > target) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e300) throw ConvergenceError("criterion bracket diverged", hi);
    }
    for (int it = 0; it < 400 && hi - lo > 1e-14 * std::max(1.0, hi); ++it) {
        const double mid = 0.5 * (lo + hi);
        if (F(mid) > target)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

} // namespace detail

/// Unique positive root of |b| (1 + e^{-rho delta}) rho^{-alpha} = 1; zero when b = 0.
inline double rho_alpha(double b, double delta, double alpha) {
    if (b == 0.0) return 0.0;
    const double ab = std::abs(b);
    return detail::decreasing_root(
        [&](double r) { return ab * (1.0 + std::exp(-r * delta)) * std::pow(r, -alpha); }, 1.0);
}

inline double rho_alpha(const LqModel& m) { return rho_alpha(m.b, m.delta, m.alpha); }

/// Left side of the contraction criterion whose level-1/2 crossing defines rho_tilde.
inline double rho_tilde_criterion(const LqModel& m, double r) {
    const double amp = m.c * m.c * m.gamma + m.b * m.b * std::exp(-2.0 * r * m.delta);
    return (amp * std::pow(2.0 * r, -m.alpha) + std::abs(m.b) * (1.0 + std::exp(-r * m.delta))) *
           std::pow(r, -m.alpha);
}

inline double rho_tilde_alpha(const LqModel& m) {
    return detail::decreasing_root([&](double r) { return rho_tilde_criterion(m, r); }, 0.5);
}

/// K_lambda = ((c^2 gamma + b^2 e^{-lambda delta}) lambda^{-alpha} - b) / c.
inline double k_constant(const LqModel& m) {
    return (m.kernel_amplitude() * std::pow(m.lambda, -m.alpha) - m.b) / m.c;
}

struct AdmissibilityConstants {
    double rho_alpha = 0.0;
    double rho_tilde_alpha = 0.0;
    double mu = 0.0;
};

/**
 * Criterion constants and the weight mu. Without an explicit mu the midpoint of
 * (rho_tilde, lambda/2] is used. Throws AdmissibilityError unless lambda > 2 rho_tilde
 * and mu lies in (rho_tilde, lambda/2].
 *
 * With `allow_outside_contraction` the two checks are skipped and the default mu becomes
 * lambda/2; callers then have to rely on a direct solve instead of the contraction argument.
 */
inline AdmissibilityConstants admissibility(const LqModel& m, std::optional<double> mu = {},
                                            bool allow_outside_contraction = false) {
    validate(m);
    AdmissibilityConstants k;
    k.rho_alpha = rho_alpha(m);
    k.rho_tilde_alpha = rho_tilde_alpha(m);
    if (allow_outside_contraction) {
        k.mu = mu.value_or(0.5 * m.lambda);
        if (!(k.mu > 0.0)) throw AdmissibilityError("mu must be positive");
        return k;
    }
    if (!(m.lambda > 2.0 * k.rho_tilde_alpha))
        throw AdmissibilityError("lambda = " + std::to_string(m.lambda) +
                                 " must exceed 2 rho_tilde_alpha = " +
                                 std::to_string(2.0 * k.rho_tilde_alpha));
    k.mu = mu.value_or(0.5 * (k.rho_tilde_alpha + 0.5 * m.lambda));
    if (!(k.mu > k.rho_tilde_alpha) || k.mu > 0.5 * m.lambda)
        throw AdmissibilityError("mu = " + std::to_string(k.mu) + " must lie in (" +
                                 std::to_string(k.rho_tilde_alpha) + ", " +
                                 std::to_string(0.5 * m.lambda) + "]");
    return k;
}

} // namespace fraclqr

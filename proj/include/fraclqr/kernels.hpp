#pragma once

#include <cmath>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <unordered_map>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "errors.hpp"
#include "model.hpp"

namespace fraclqr {

namespace detail {

// x_+^e with the convention x_+^e = 0 for x <= 0.
inline double pos_pow(double x, double e) { return x > 0.0 ? std::pow(x, e) : 0.0; }

} // namespace detail

/// tau^{alpha-1} / Gamma(alpha), the Riemann-Liouville kernel. Singular at 0 for alpha < 1.
inline double frac_kernel(double alpha, double tau) {
    if (!(tau > 0.0)) throw std::domain_error("frac_kernel: tau must be positive");
    return std::pow(tau, alpha - 1.0) / std::tgamma(alpha);
}

/// int_a^b tau^{alpha-1} dtau / Gamma(alpha) for 0 <= a <= b.
inline double frac_cell_weight(double alpha, double a, double b) {
    return (std::pow(b, alpha) - std::pow(a, alpha)) / std::tgamma(alpha + 1.0);
}

/// int_a^b tau^{2 alpha - 2} dtau / Gamma(alpha)^2 for 0 <= a <= b (Ito isometry of the kernel).
inline double frac_cell_square_weight(double alpha, double a, double b) {
    const double e = 2.0 * alpha - 1.0;
    const double g = std::tgamma(alpha);
    return (std::pow(b, e) - std::pow(a, e)) / (e * g * g);
}

/// int_a^b e^{-lambda tau} tau^{alpha-1} dtau / Gamma(alpha) for 0 <= a <= b.
inline double exp_frac_cell_weight(double alpha, double lambda, double a, double b) {
    if (b <= a) return 0.0;
    const double xa = lambda * a;
    const double xb = lambda * b;
    double diff;
    if (xa > alpha)
        diff = boost::math::gamma_q(alpha, xa) - boost::math::gamma_q(alpha, xb);
    else
        diff = boost::math::gamma_p(alpha, xb) - (xa > 0.0 ? boost::math::gamma_p(alpha, xa) : 0.0);
    return std::pow(lambda, -alpha) * diff;
}

/// Closed-form L1 norm of the majorant M_mu of the weighted kernel.
inline double m_mu_norm_bound(const LqModel& m, double mu) {
    if (!(mu > 0.0)) throw std::domain_error("m_mu_norm_bound: mu must be positive");
    const double amp = m.c * m.c * m.gamma + m.b * m.b * std::exp(-2.0 * mu * m.delta);
    return 2.0 *
           (amp * std::pow(2.0 * mu, -m.alpha) + std::abs(m.b) * std::exp(-mu * m.delta)) *
           std::pow(mu, -m.alpha);
}

/**
 * Evaluates f_lambda, g_lambda and k_lambda for one model, plus exact cell integrals of the
 * convolution kernel used by the Nystrom discretization.
 *
 * f_lambda values are memoized on a quantum (normally h/4) so that assembling a grid
 * operator only integrates O(n) distinct offsets. The cache is guarded by a mutex.
 */
class KernelEvaluator {
public:
    explicit KernelEvaluator(const LqModel& model, double quad_tol = 1e-10, double quantum = 0.0)
        : model_(model), quad_tol_(quad_tol), quantum_(quantum),
          gamma_alpha_(std::tgamma(model.alpha)) {
        validate(model_);
    }

    KernelEvaluator(const KernelEvaluator&) = delete;
    KernelEvaluator& operator=(const KernelEvaluator&) = delete;

    const LqModel& model() const { return model_; }
    double quad_tol() const { return quad_tol_; }

    /// (1/Gamma(alpha)) int_0^inf e^{-lambda theta} theta^{alpha-1} (theta + tau)^{alpha-1} dtheta.
    double f_lambda(double tau) const {
        if (!(tau >= 0.0)) throw std::domain_error("f_lambda: tau must be nonnegative");
        if (quantum_ > 0.0) {
            const double q = tau / quantum_;
            const double r = std::round(q);
            if (std::abs(q - r) < 1e-9 * std::max(1.0, q)) {
                const auto key = static_cast<long long>(r);
                {
                    std::lock_guard lock(mutex_);
                    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
                }
                const double v = integrate_f(tau);
                std::lock_guard lock(mutex_);
                cache_.emplace(key, v);
                return v;
            }
        }
        return integrate_f(tau);
    }

    /// (A f_lambda(tau) - b (tau - delta)_+^{alpha-1}) / Gamma(alpha), A = c^2 gamma + b^2 e^{-lambda delta}.
    double g_lambda(double tau) const {
        if (!(tau >= 0.0)) throw std::domain_error("g_lambda: tau must be nonnegative");
        if (singular_at_delay() && tau == model_.delta)
            throw std::domain_error("g_lambda: evaluation at the singular offset tau = delta");
        return (model_.kernel_amplitude() * f_lambda(tau) -
                model_.b * detail::pos_pow(tau - model_.delta, model_.alpha - 1.0)) /
               gamma_alpha_;
    }

    /// g(t - s) below the diagonal, e^{-lambda (s - t)} g(s - t) above it.
    double k_lambda(double t, double s) const {
        if (t >= s) return g_lambda(t - s);
        return std::exp(-model_.lambda * (s - t)) * g_lambda(s - t);
    }

    /// Convolution form kappa(tau) = k_lambda(t, t - tau).
    double kappa(double tau) const { return tau >= 0.0 ? k_lambda(tau, 0.0) : k_lambda(0.0, -tau); }

    /**
     * int_{ta}^{tb} kappa(tau) dtau. The (tau - delta)_+^{alpha-1} factor and the exponential
     * weight are integrated exactly; f_lambda is sampled at the midpoint of each side of zero.
     */
    double cell_integral(double ta, double tb) const {
        if (tb <= ta) return 0.0;
        if (ta < 0.0 && tb > 0.0) return backward_piece(0.0, -ta) + forward_piece(0.0, tb);
        if (ta >= 0.0) return forward_piece(ta, tb);
        return backward_piece(-tb, -ta);
    }

    /// True when g has a non-integrable-looking spike (integrable, but unbounded) at tau = delta.
    bool singular_at_delay() const { return model_.b != 0.0 && model_.alpha < 1.0; }

private:
    // Past branch: int_a^b g(tau) dtau, 0 <= a < b.
    double forward_piece(double a, double b) const {
        const double amp = model_.kernel_amplitude();
        const double al = model_.alpha;
        const double smooth = amp * f_lambda(0.5 * (a + b)) * (b - a);
        const double sing = (detail::pos_pow(b - model_.delta, al) -
                             detail::pos_pow(a - model_.delta, al)) / al;
        return (smooth - model_.b * sing) / gamma_alpha_;
    }

    // Anticipating branch: int_a^b e^{-lambda s} g(s) ds, 0 <= a < b.
    double backward_piece(double a, double b) const {
        const double amp = model_.kernel_amplitude();
        const double lam = model_.lambda;
        const double expint = std::exp(-lam * a) * (-std::expm1(-lam * (b - a))) / lam;
        const double smooth = amp * f_lambda(0.5 * (a + b)) * expint / gamma_alpha_;
        if (model_.b == 0.0) return smooth;
        const double lo = std::max(0.0, a - model_.delta);
        const double hi = std::max(0.0, b - model_.delta);
        const double sing =
            std::exp(-lam * model_.delta) * exp_frac_cell_weight(model_.alpha, lam, lo, hi);
        return smooth - model_.b * sing;
    }

    double integrate_f(double tau) const {
        using boost::math::quadrature::exp_sinh;
        using boost::math::quadrature::tanh_sinh;
        const double al = model_.alpha;
        const double lam = model_.lambda;
        if (al == 1.0) return 1.0 / lam;

        // theta = u^p on [0, 1] cancels theta^{2 alpha - 2}; the remaining factor is bounded
        // but only Hoelder at u = 0, which tanh-sinh absorbs.
        const double p = 1.0 / (2.0 * al - 1.0);
        auto near = [&](double u) {
            if (u <= 0.0) return tau == 0.0 ? p : 0.0;
            const double th = std::pow(u, p);
            const double ratio = tau == 0.0 ? 1.0 : th / (th + tau);
            return p * std::exp(-lam * th) * std::pow(ratio, 1.0 - al);
        };
        thread_local tanh_sinh<double> near_rule;
        double err_near = 0.0;
        const double i_near = near_rule.integrate(near, 0.0, 1.0, 1e-13, &err_near);

        auto far = [&](double th) {
            return std::exp(-lam * th) * std::pow(th, al - 1.0) * std::pow(th + tau, al - 1.0);
        };
        thread_local exp_sinh<double> tail_rule;
        double err_far = 0.0;
        const double i_far = tail_rule.integrate(far, 1.0, std::numeric_limits<double>::infinity(),
                                                 1e-13, &err_far);
        const double err = err_near + err_far;
        if (!(err <= quad_tol_ * gamma_alpha_))
            throw ConvergenceError("f_lambda quadrature did not reach tolerance", err);
        return (i_near + i_far) / gamma_alpha_;
    }

    LqModel model_;
    double quad_tol_;
    double quantum_;
    double gamma_alpha_;
    mutable std::mutex mutex_;
    mutable std::unordered_map<long long, double> cache_;
};

/// Stand-alone conveniences for one-off evaluations (no caching).
inline double f_lambda(const LqModel& m, double tau) { return KernelEvaluator(m).f_lambda(tau); }
inline double g_lambda(const LqModel& m, double tau) { return KernelEvaluator(m).g_lambda(tau); }
inline double k_lambda(const LqModel& m, double t, double s) {
    return KernelEvaluator(m).k_lambda(t, s);
}

} // namespace fraclqr

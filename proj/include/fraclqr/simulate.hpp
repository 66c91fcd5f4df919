#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "errors.hpp"
#include "fredholm.hpp"
#include "grid.hpp"
#include "kernels.hpp"
#include "model.hpp"
#include "parallel.hpp"

namespace fraclqr {

/// n independent N(0, h) increments, reproducible from the seed.
struct BrownianPath {
    TimeGrid grid;
    std::vector<double> increments;
    std::uint64_t seed = 0;

    /// W(t_i), i = 0..n.
    std::vector<double> values() const {
        std::vector<double> w(increments.size() + 1, 0.0);
        for (std::size_t i = 0; i < increments.size(); ++i) w[i + 1] = w[i] + increments[i];
        return w;
    }

    /// Same path on a grid with `factor` times fewer cells (increments summed in blocks).
    BrownianPath coarsen(int factor) const {
        if (factor < 1 || grid.n % factor != 0) throw GridError("coarsening factor must divide n");
        BrownianPath c{TimeGrid(grid.horizon, grid.n / factor), {}, seed};
        c.increments.assign(grid.n / factor, 0.0);
        for (int i = 0; i < grid.n; ++i) c.increments[i / factor] += increments[i];
        return c;
    }
};

inline BrownianPath sample_brownian(const TimeGrid& grid, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, std::sqrt(grid.h()));
    BrownianPath p{grid, std::vector<double>(grid.n), seed};
    for (double& x : p.increments) x = normal(rng);
    return p;
}

enum class PathKind { state, control, auxiliary };

/// Values at the n+1 nodes of a grid.
struct SamplePath {
    TimeGrid grid;
    std::vector<double> values;
    PathKind kind = PathKind::state;

    static SamplePath zeros(const TimeGrid& g, PathKind k) {
        return {g, std::vector<double>(g.n + 1, 0.0), k};
    }
};

/**
 * X(t) = phi(t) + int_0^t b(t, s, X(s), X(s - delay), u(s)) ds
 *               + int_0^t sigma(t, s, X(s), X(s - delay), u(s)) dW(s),   X = history on [-delay, 0].
 */
struct SdvieCoefficients {
    std::function<double(double, double, double, double, double)> drift;
    std::function<double(double, double, double, double, double)> diffusion;
    std::function<double(double)> free_term;
    std::function<double(double)> history;
    double delay = 0.0;
};

namespace detail {

inline void require_same_grid(const TimeGrid& a, const TimeGrid& b) {
    if (!(a == b)) throw GridError("paths live on different grids");
}

inline void guard(double x, int node) {
    if (!std::isfinite(x) || std::abs(x) > 1e12) throw DivergenceError("state diverged", node);
}

} // namespace detail

/// Left-point Volterra-Euler scheme for a general SDVIE.
inline SamplePath simulate_sdvie(const SdvieCoefficients& co, const SamplePath& control,
                                 const BrownianPath& w) {
    detail::require_same_grid(control.grid, w.grid);
    const TimeGrid& g = w.grid;
    const int n = g.n;
    const int m = g.delay_steps(co.delay);
    const double h = g.h();
    SamplePath x = SamplePath::zeros(g, PathKind::state);
    auto delayed = [&](int j) { return j >= m ? x.values[j - m] : co.history(g.t(j) - co.delay); };
    for (int i = 0; i <= n; ++i) {
        const double ti = g.t(i);
        CompensatedSum s;
        s.add(co.free_term(ti));
        for (int j = 0; j < i; ++j) {
            const double tj = g.t(j);
            const double x1 = x.values[j];
            const double x2 = delayed(j);
            const double u = control.values[j];
            s.add(co.drift(ti, tj, x1, x2, u) * h);
            s.add(co.diffusion(ti, tj, x1, x2, u) * w.increments[j]);
        }
        x.values[i] = s.value();
        detail::guard(x.values[i], i);
    }
    return x;
}

/**
 * Lifted two-component SVIE: X1 solves the SDVIE, X2 is driven by the shifted coefficients
 * 1_{s <= t - delay} b(t - delay, s, ...) with free term phi(t - delay) (history on [0, delay)).
 * On the grid X2(t_i) = X1(t_{i-m}) holds exactly because both use the same sums.
 */
inline std::pair<SamplePath, SamplePath> lift_and_simulate(const SdvieCoefficients& co,
                                                           const SamplePath& control,
                                                           const BrownianPath& w) {
    detail::require_same_grid(control.grid, w.grid);
    const TimeGrid& g = w.grid;
    const int n = g.n;
    const int m = g.delay_steps(co.delay);
    const double h = g.h();
    SamplePath x1 = SamplePath::zeros(g, PathKind::state);
    SamplePath x2 = SamplePath::zeros(g, PathKind::auxiliary);
    for (int i = 0; i <= n; ++i) {
        if (i < m) {
            x2.values[i] = co.history(g.t(i) - co.delay);
        } else {
            // Shifted time t_i - delay = t_{i-m}; the indicator keeps j < i - m.
            const double ts = g.t(i - m);
            CompensatedSum s;
            s.add(co.free_term(ts));
            for (int j = 0; j < i - m; ++j) {
                const double tj = g.t(j);
                const double u = control.values[j];
                s.add(co.drift(ts, tj, x1.values[j], x2.values[j], u) * h);
                s.add(co.diffusion(ts, tj, x1.values[j], x2.values[j], u) * w.increments[j]);
            }
            x2.values[i] = s.value();
        }
        const double ti = g.t(i);
        CompensatedSum s;
        s.add(co.free_term(ti));
        for (int j = 0; j < i; ++j) {
            const double tj = g.t(j);
            const double u = control.values[j];
            s.add(co.drift(ti, tj, x1.values[j], x2.values[j], u) * h);
            s.add(co.diffusion(ti, tj, x1.values[j], x2.values[j], u) * w.increments[j]);
        }
        x1.values[i] = s.value();
        detail::guard(x1.values[i], i);
        detail::guard(x2.values[i], i);
    }
    return {x1, x2};
}

/// How the drift integrand is interpolated inside a cell.
enum class DriftRule {
    left_point, // constant at the left node, first order
    trapezoid   // linear between nodes, second order for smooth integrands
};

/**
 * Product-integration weights of the fractional Volterra kernel on one grid. The drift part of
 * X(t_i) is sum_{j<=i} weight(i, j) f(t_j).
 */
struct FracWeights {
    DriftRule rule = DriftRule::left_point;
    std::vector<double> drift; // drift[k] = int_{kh}^{(k+1)h} tau^{alpha-1} dtau / Gamma(alpha)
    std::vector<double> noise; // noise[k] = sqrt(int_{kh}^{(k+1)h} tau^{2alpha-2} dtau / h) / Gamma(alpha)
    std::vector<double> trap;  // trapezoid weight for lag k >= 0 (j >= 1)
    std::vector<double> first; // trapezoid weight of f(0) in X(t_i)

    FracWeights(double alpha, const TimeGrid& g, DriftRule r = DriftRule::left_point)
        : rule(r), drift(g.n), noise(g.n) {
        const double h = g.h();
        for (int k = 0; k < g.n; ++k) {
            if (alpha == 1.0) {
                drift[k] = h;
                noise[k] = 1.0;
            } else {
                drift[k] = frac_cell_weight(alpha, k * h, (k + 1) * h);
                noise[k] = std::sqrt(frac_cell_square_weight(alpha, k * h, (k + 1) * h) / h);
            }
        }
        if (rule == DriftRule::trapezoid) {
            trap.assign(g.n + 1, 0.0);
            first.assign(g.n + 1, 0.0);
            const double scale = std::pow(h, alpha) / std::tgamma(alpha + 2.0);
            auto p = [alpha](double k) { return std::pow(k, alpha + 1.0); };
            trap[0] = scale;
            for (int k = 1; k <= g.n; ++k) {
                trap[k] = scale * (p(k + 1.0) - 2.0 * p(k) + p(k - 1.0));
                first[k] = scale * (p(k - 1.0) - (k - 1.0 - alpha) * std::pow(k, alpha));
            }
        }
    }

    /// Weight of f(t_j) in X(t_i), 0 <= j <= i.
    double weight(int i, int j) const {
        if (rule == DriftRule::left_point) return j < i ? drift[i - j - 1] : 0.0;
        if (i == 0) return 0.0;
        return j == 0 ? first[i] : trap[i - j];
    }

    /// Toeplitz part: weight of f(t_j) in X(t_i) for lag = i - j and j >= 1.
    double lag_weight(int lag) const {
        if (rule == DriftRule::left_point) return lag > 0 ? drift[lag - 1] : 0.0;
        return trap[lag];
    }
};

/**
 * X(t) = x0 + (1/Gamma(alpha)) int_0^t (t - s)^{alpha-1} {b X(s - delta) + c u(s)} ds
 *           + (sigma/Gamma(alpha)) int_0^t (t - s)^{alpha-1} dW(s),   X = x0 on [-delta, 0].
 *
 * Exact cell weights against node values of the drift integrand (left-point by default),
 * variance-exact RMS weights for dW. With the trapezoid rule and delta = 0 the current node
 * enters implicitly and is solved for.
 */
inline SamplePath simulate_frac_sdde(const LqModel& model, const SamplePath& control,
                                     const BrownianPath& w, const FracWeights* weights = nullptr) {
    detail::require_same_grid(control.grid, w.grid);
    const TimeGrid& g = w.grid;
    const int n = g.n;
    const int m = g.delay_steps(model.delta);
    std::optional<FracWeights> own;
    if (!weights) weights = &own.emplace(model.alpha, g);
    const bool trapezoid = weights->rule == DriftRule::trapezoid;
    SamplePath x = SamplePath::zeros(g, PathKind::state);
    std::vector<double> f(n + 1, 0.0);
    for (int i = 0; i <= n; ++i) {
        CompensatedSum s;
        s.add(model.x0);
        for (int j = 0; j < i; ++j) {
            s.add(weights->weight(i, j) * f[j]);
            s.add(model.sigma * weights->noise[i - j - 1] * w.increments[j]);
        }
        double xi = s.value();
        if (trapezoid && i > 0) {
            const double a = weights->weight(i, i);
            xi += a * model.c * control.values[i];
            if (m > 0)
                xi += a * model.b * (i >= m ? x.values[i - m] : model.x0);
            else
                xi /= 1.0 - a * model.b;
        }
        x.values[i] = xi;
        detail::guard(x.values[i], i);
        const double delayed = i >= m ? x.values[i - m] : model.x0;
        f[i] = model.b * delayed + model.c * control.values[i];
    }
    return x;
}

/**
 * C(t_i) = sum_{j<i} psi(t_i - t_j - h/2) dW_j. Midpoint-sampled psi is used directly,
 * node-sampled psi is interpolated linearly.
 */
inline SamplePath stochastic_convolution(const SampledFunction& psi, const BrownianPath& w) {
    detail::require_same_grid(psi.grid, w.grid);
    const TimeGrid& g = w.grid;
    const int n = g.n;
    std::vector<double> kern(n);
    for (int k = 0; k < n; ++k)
        kern[k] = psi.sampling == Sampling::midpoints ? psi.values[k] : psi.at(g.mid(k));
    SamplePath c = SamplePath::zeros(g, PathKind::auxiliary);
    for (int i = 1; i <= n; ++i) {
        CompensatedSum s;
        for (int j = 0; j < i; ++j) s.add(kern[i - j - 1] * w.increments[j]);
        c.values[i] = s.value();
    }
    return c;
}

/// Runs fn(path_index, brownian_path) over seeds base_seed + i; results are ordered by index.
template <class Result, class Fn>
std::vector<Result> map_paths(const TimeGrid& grid, int n_paths, std::uint64_t base_seed, Fn&& fn) {
    std::vector<Result> out(n_paths);
    parallel_for(n_paths, [&](int i) {
        out[i] = fn(i, sample_brownian(grid, base_seed + static_cast<std::uint64_t>(i)));
    });
    return out;
}

} // namespace fraclqr

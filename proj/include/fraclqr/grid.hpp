#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "errors.hpp"
#include "model.hpp"

namespace fraclqr {

/// Uniform grid t_i = i h, i = 0..n, on the truncated horizon [0, T].
struct TimeGrid {
    double horizon = 1.0;
    int n = 2;

    TimeGrid() = default;
    TimeGrid(double T, int cells) : horizon(T), n(cells) {
        if (!(T > 0.0) || !std::isfinite(T)) throw GridError("horizon must be positive");
        if (cells < 2) throw GridError("grid needs at least 2 cells");
    }

    double h() const { return horizon / n; }
    double t(int i) const { return i * h(); }
    double mid(int j) const { return (j + 0.5) * h(); }

    /// delta / h as an integer; throws when the delay does not fall on a node.
    int delay_steps(double delta) const {
        if (delta == 0.0) return 0;
        const double q = delta / h();
        const double r = std::round(q);
        if (std::abs(q - r) > 1e-9 * std::max(1.0, q)) {
            const double suggested = delta / std::ceil(q);
            throw GridError("delay " + std::to_string(delta) + " is not a multiple of h = " +
                            std::to_string(h()) + "; try h = " + std::to_string(suggested));
        }
        return static_cast<int>(r);
    }

    bool operator==(const TimeGrid& o) const { return n == o.n && horizon == o.horizon; }

    /// Grid with every cell split into `factor` cells.
    TimeGrid refined(int factor) const { return TimeGrid(horizon, n * factor); }
};

/// max(10/lambda, 8/mu, 4 delta + 1).
inline double default_horizon(const LqModel& m, double mu) {
    return std::max({10.0 / m.lambda, 8.0 / mu, 4.0 * m.delta + 1.0});
}

/**
 * Grid covering at least `min_horizon` with step at most `target_h`, adjusted so that the
 * delay lands on a node (the horizon is stretched to a whole number of cells).
 */
inline TimeGrid delay_compatible_grid(const LqModel& m, double min_horizon, double target_h) {
    double h = target_h;
    if (m.delta > 0.0) h = m.delta / std::ceil(m.delta / target_h - 1e-12);
    const int n = std::max(2, static_cast<int>(std::ceil(min_horizon / h - 1e-9)));
    return TimeGrid(n * h, n);
}

} // namespace fraclqr

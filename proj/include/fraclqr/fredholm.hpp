#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "grid.hpp"
#include "kernels.hpp"
#include "model.hpp"
#include "parallel.hpp"

namespace fraclqr {

enum class Sampling { nodes, midpoints };

/// Grid function stored either at the nodes t_i (n+1 values) or at cell midpoints (n values).
struct SampledFunction {
    TimeGrid grid;
    Sampling sampling = Sampling::nodes;
    std::vector<double> values;

    static SampledFunction at_nodes(const TimeGrid& g, std::vector<double> v) {
        if (static_cast<int>(v.size()) != g.n + 1) throw GridError("node function needs n+1 values");
        return {g, Sampling::nodes, std::move(v)};
    }
    static SampledFunction at_midpoints(const TimeGrid& g, std::vector<double> v) {
        if (static_cast<int>(v.size()) != g.n) throw GridError("midpoint function needs n values");
        return {g, Sampling::midpoints, std::move(v)};
    }

    int size() const { return static_cast<int>(values.size()); }
    double time(int k) const { return sampling == Sampling::nodes ? grid.t(k) : grid.mid(k); }

    /// Linear interpolation between samples, constant extension beyond the first and last.
    double at(double t) const {
        const double h = grid.h();
        const double pos = sampling == Sampling::nodes ? t / h : t / h - 0.5;
        if (pos <= 0.0) return values.front();
        const int last = size() - 1;
        if (pos >= last) return values.back();
        const int k = static_cast<int>(pos);
        const double w = pos - k;
        return (1.0 - w) * values[k] + w * values[k + 1];
    }

    Eigen::VectorXd vector() const { return Eigen::Map<const Eigen::VectorXd>(values.data(), size()); }
};

/**
 * Collocation discretization of the Fredholm operator (K x)(t) = int_0^T k_lambda(t, s) x(s) ds.
 *
 * Unknowns are cell values at the midpoints t_{j+1/2}; entry (i, j) is the cell integral
 * int_{cell j} k_lambda(t_{i+1/2}, s) ds. The kernel is of convolution type, so every entry
 * depends on i - j only and the tables below hold O(n) exact cell integrals. Node rows
 * (collocation point t_i) are used to carry a midpoint solution back to the nodes.
 */
class DiscretizedKernel {
public:
    DiscretizedKernel(const LqModel& model, const TimeGrid& grid, double mu)
        : model_(model), grid_(grid), mu_(mu) {
        validate(model_);
        grid_.delay_steps(model_.delta);
        const int n = grid_.n;
        const double h = grid_.h();
        eval_ = std::make_shared<KernelEvaluator>(model_, 1e-10, 0.25 * h);

        // mid_[d + n - 1], d in [-(n-1), n-1]; node_[d + n - 1], d in [-(n-1), n].
        mid_.assign(2 * n - 1, 0.0);
        node_.assign(2 * n, 0.0);
        const KernelEvaluator& ev = *eval_;
        parallel_for(2 * n, [&](int k) {
            const int d = k - (n - 1);
            node_[k] = ev.cell_integral((d - 1) * h, d * h);
            if (k < 2 * n - 1) mid_[k] = ev.cell_integral((d - 0.5) * h, (d + 0.5) * h);
        });

        weights_.resize(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) weights_(i, j) = mid_[i - j + n - 1];

        double row_max = 0.0;
        double col_max = 0.0;
        for (int i = 0; i < n; ++i) {
            double r = 0.0;
            double c = 0.0;
            for (int j = 0; j < n; ++j) {
                r += std::abs(mid_[i - j + n - 1]) * std::exp(-mu_ * (i - j) * h);
                c += std::abs(mid_[j - i + n - 1]) * std::exp(-mu_ * (j - i) * h);
            }
            row_max = std::max(row_max, r);
            col_max = std::max(col_max, c);
        }
        norm_estimate_ = std::max(row_max, col_max);
    }

    const LqModel& model() const { return model_; }
    const TimeGrid& grid() const { return grid_; }
    double mu() const { return mu_; }
    double norm_estimate() const { return norm_estimate_; }
    const KernelEvaluator& evaluator() const { return *eval_; }

    /// Collocation matrix at the midpoints.
    const Eigen::MatrixXd& weights() const { return weights_; }

    /// int_{cell j} k_lambda(t_{i+1/2}, s) ds as a function of d = i - j.
    double mid_weight(int d) const { return mid_[d + grid_.n - 1]; }

    /// int_{cell j} k_lambda(t_i, s) ds as a function of d = i - j, d in [-(n-1), n].
    double node_weight(int d) const { return node_[d + grid_.n - 1]; }

    /// Row of node weights for collocation at t_i.
    Eigen::RowVectorXd node_row(int i) const {
        Eigen::RowVectorXd r(grid_.n);
        for (int j = 0; j < grid_.n; ++j) r(j) = node_weight(i - j);
        return r;
    }

    /// int_{cell j} k_lambda(t, s) ds for an arbitrary t.
    double row_integral(double t, int j) const {
        const double h = grid_.h();
        return eval_->cell_integral(t - (j + 1) * h, t - j * h);
    }

    /// LU factorization of I + K, computed on first use.
    const Eigen::PartialPivLU<Eigen::MatrixXd>& lu() const {
        std::call_once(*lu_once_, [this] {
            const int n = grid_.n;
            lu_ = std::make_shared<Eigen::PartialPivLU<Eigen::MatrixXd>>(
                Eigen::MatrixXd::Identity(n, n) + weights_);
        });
        return *lu_;
    }

private:
    LqModel model_;
    TimeGrid grid_;
    double mu_;
    double norm_estimate_ = 0.0;
    std::shared_ptr<KernelEvaluator> eval_;
    std::vector<double> mid_;
    std::vector<double> node_;
    Eigen::MatrixXd weights_;
    mutable std::shared_ptr<std::once_flag> lu_once_ = std::make_shared<std::once_flag>();
    mutable std::shared_ptr<Eigen::PartialPivLU<Eigen::MatrixXd>> lu_;
};

/**
 * Assembles the kernel and checks the contraction regime. With `allow_outside_contraction`
 * a norm estimate >= 1 is accepted; only the direct solver is meaningful then.
 */
inline DiscretizedKernel discretize(const LqModel& model, const TimeGrid& grid, double mu,
                                    bool allow_outside_contraction = false) {
    DiscretizedKernel k(model, grid, mu);
    if (!allow_outside_contraction && !(k.norm_estimate() < 1.0))
        throw ContractionError("outside contraction regime (norm estimate " +
                               std::to_string(k.norm_estimate()) + "); raise mu or lambda");
    return k;
}

enum class ResolventMethod { neumann, direct };

struct ResolventMatrix {
    Eigen::MatrixXd values;
    ResolventMethod method = ResolventMethod::direct;
    int iterations = 0;
};

/// Max absolute row sum.
inline double inf_norm(const Eigen::MatrixXd& m) {
    return m.size() == 0 ? 0.0 : m.cwiseAbs().rowwise().sum().maxCoeff();
}

/// ||R + K R - K|| (left) and ||R + R K - K|| (right) in the max-row-sum norm.
struct ResolventResiduals {
    double left = 0.0;
    double right = 0.0;
};

inline ResolventResiduals resolvent_residuals(const Eigen::MatrixXd& K, const Eigen::MatrixXd& R) {
    return {inf_norm(R + K * R - K), inf_norm(R + R * K - K)};
}

/// Solves (I + K) R = K by LU. Throws DiscretizationError when I + K is numerically singular.
inline ResolventMatrix direct_resolvent(const Eigen::MatrixXd& K) {
    const Eigen::Index n = K.rows();
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(Eigen::MatrixXd::Identity(n, n) + K);
    const double rc = lu.rcond();
    if (!(rc > 1e-14))
        throw DiscretizationError("I + K is singular (reciprocal condition " + std::to_string(rc) +
                                  ")");
    return {lu.solve(K), ResolventMethod::direct, 0};
}

inline ResolventMatrix direct_resolvent(const DiscretizedKernel& K) {
    const double rc = K.lu().rcond();
    if (!(rc > 1e-14))
        throw DiscretizationError("I + K is singular (reciprocal condition " + std::to_string(rc) +
                                  ")");
    return {K.lu().solve(K.weights()), ResolventMethod::direct, 0};
}

/**
 * R = sum_{m>=1} (-1)^{m+1} K^m, truncated once a term falls below `tol` both in the plain
 * max-row-sum norm and in the weighted norm given by `scale` (x_i -> scale_i x_i), where the
 * series contracts.
 */
inline ResolventMatrix neumann_resolvent(const Eigen::MatrixXd& K, double tol, int max_iter,
                                         const Eigen::VectorXd& scale = {}) {
    auto weighted = [&](const Eigen::MatrixXd& m) {
        const double plain = inf_norm(m);
        if (scale.size() == 0) return plain;
        const Eigen::MatrixXd w = scale.asDiagonal() * m * scale.cwiseInverse().asDiagonal();
        return std::max({plain, inf_norm(w), inf_norm(w.transpose())});
    };
    Eigen::MatrixXd term = K;
    Eigen::MatrixXd R = K;
    double size = weighted(term);
    int m = 1;
    while (size >= tol) {
        if (m >= max_iter) throw ConvergenceError("Neumann series did not converge", size);
        term = -(K * term);
        R += term;
        size = weighted(term);
        ++m;
    }
    return {R, ResolventMethod::neumann, m};
}

inline ResolventMatrix neumann_resolvent(const DiscretizedKernel& K, double tol = 1e-13,
                                         int max_iter = 500) {
    if (!(K.norm_estimate() < 1.0))
        throw ContractionError("Neumann series requires norm estimate < 1 (got " +
                               std::to_string(K.norm_estimate()) + ")");
    const int n = K.grid().n;
    Eigen::VectorXd scale(n);
    for (int i = 0; i < n; ++i) scale(i) = std::exp(-K.mu() * K.grid().mid(i));
    return neumann_resolvent(K.weights(), tol, max_iter, scale);
}

/// sup |x + K x - a|.
inline double fie_residual(const Eigen::MatrixXd& K, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& a) {
    return x.size() == 0 ? 0.0 : (x + K * x - a).cwiseAbs().maxCoeff();
}

/// x = a - R a.
inline Eigen::VectorXd solve_fie(const ResolventMatrix& R, const Eigen::VectorXd& a) {
    return a - R.values * a;
}

/// Canonical solve of (I + K) x = a at the midpoints.
inline SampledFunction solve_fie(const DiscretizedKernel& K, const SampledFunction& a) {
    if (a.sampling != Sampling::midpoints || !(a.grid == K.grid()))
        throw GridError("forcing must be sampled at the kernel's midpoints");
    const Eigen::VectorXd x = K.lu().solve(a.vector());
    return SampledFunction::at_midpoints(K.grid(), std::vector<double>(x.data(), x.data() + x.size()));
}

/// Nystrom extension of a midpoint solution to the nodes: x(t_i) = a(t_i) - sum_j K_node(i, j) x_j.
inline std::vector<double> nystrom_nodes(const DiscretizedKernel& K, const SampledFunction& x_mid,
                                         const std::vector<double>& a_nodes) {
    const int n = K.grid().n;
    std::vector<double> out(n + 1);
    for (int i = 0; i <= n; ++i) {
        CompensatedSum s;
        for (int j = 0; j < n; ++j) s.add(K.node_weight(i - j) * x_mid.values[j]);
        out[i] = a_nodes[i] - s.value();
    }
    return out;
}

/// Solution of one of the two deterministic FIEs with its diagnostics.
struct FieSolution {
    SampledFunction mid;
    std::optional<SampledFunction> nodes; // only when the forcing is finite at every node
    double residual = 0.0;
    double route_gap = std::numeric_limits<double>::quiet_NaN(); // vs. the closed resolvent form
};

namespace detail {

inline FieSolution finish_fie(const DiscretizedKernel& K, const ResolventMatrix* R,
                              const SampledFunction& a, double route_tol) {
    FieSolution s{solve_fie(K, a), std::nullopt, 0.0, std::numeric_limits<double>::quiet_NaN()};
    const Eigen::VectorXd x = s.mid.vector();
    const Eigen::VectorXd av = a.vector();
    s.residual = fie_residual(K.weights(), x, av);
    if (R) {
        s.route_gap = (solve_fie(*R, av) - x).cwiseAbs().maxCoeff();
        if (!(s.route_gap < route_tol))
            throw DiscretizationError("direct solve and resolvent form disagree by " +
                                      std::to_string(s.route_gap));
    }
    return s;
}

} // namespace detail

/// phi_hat + K phi_hat + K_lambda x0 = 0.
inline FieSolution phi_hat(const DiscretizedKernel& K, const ResolventMatrix* R = nullptr,
                           double route_tol = 1e-8) {
    const LqModel& m = K.model();
    const double forcing = -k_constant(m) * m.x0;
    const int n = K.grid().n;
    auto a = SampledFunction::at_midpoints(K.grid(), std::vector<double>(n, forcing));
    FieSolution s = detail::finish_fie(K, R, a, route_tol);
    s.nodes = SampledFunction::at_nodes(K.grid(),
                                        nystrom_nodes(K, s.mid, std::vector<double>(n + 1, forcing)));
    return s;
}

/// psi_hat + K psi_hat + (sigma / c) g_lambda = 0, solved at the midpoints.
inline FieSolution psi_hat(const DiscretizedKernel& K, const ResolventMatrix* R = nullptr,
                           double route_tol = 1e-8) {
    const LqModel& m = K.model();
    const int n = K.grid().n;
    std::vector<double> a(n, 0.0);
    if (m.sigma != 0.0)
        for (int j = 0; j < n; ++j) a[j] = -(m.sigma / m.c) * K.evaluator().g_lambda(K.grid().mid(j));
    FieSolution s = detail::finish_fie(K, R, SampledFunction::at_midpoints(K.grid(), a), route_tol);
    if (m.sigma == 0.0 || !K.evaluator().singular_at_delay()) {
        std::vector<double> an(n + 1, 0.0);
        if (m.sigma != 0.0)
            for (int i = 0; i <= n; ++i) an[i] = -(m.sigma / m.c) * K.evaluator().g_lambda(K.grid().t(i));
        s.nodes = SampledFunction::at_nodes(K.grid(), nystrom_nodes(K, s.mid, an));
    }
    return s;
}

} // namespace fraclqr

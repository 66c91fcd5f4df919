#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <variant>
#include <vector>

#include "errors.hpp"
#include "fredholm.hpp"
#include "grid.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "simulate.hpp"

namespace fraclqr {

struct SynthesisOptions {
    std::optional<double> mu;
    bool allow_outside_contraction = false;
    bool compute_resolvent = false; // also form R and cross-check the closed resolvent form
    double fie_tol = 1e-9;
    double route_tol = 1e-8;
    DriftRule drift_rule = DriftRule::trapezoid; // used when simulating the optimal pair
};

/**
 * Optimal control recipe: u(t) = gain X(t - delta) + v(t), v(t) = phi(t) + int_0^t psi(t - s) dW(s).
 * phi is kept at the nodes (and midpoints); psi at the midpoints, where it is finite.
 */
struct FeedbackLaw {
    LqModel model;
    TimeGrid grid;
    AdmissibilityConstants constants;
    double gain = 0.0;
    double k_const = 0.0;
    SampledFunction phi_nodes;
    SampledFunction phi_mid;
    SampledFunction psi_mid;
    std::optional<SampledFunction> psi_nodes;
    double phi_residual = 0.0;
    double psi_residual = 0.0;
    double phi_route_gap = std::numeric_limits<double>::quiet_NaN();
    double psi_route_gap = std::numeric_limits<double>::quiet_NaN();
    std::shared_ptr<const DiscretizedKernel> kernel;
    std::shared_ptr<const ResolventMatrix> resolvent;
    DriftRule drift_rule = DriftRule::trapezoid;

    FracWeights weights() const { return FracWeights(model.alpha, grid, drift_rule); }
};

inline FeedbackLaw synthesize(const LqModel& model, const TimeGrid& grid,
                              const SynthesisOptions& opt = {}) {
    const auto consts = admissibility(model, opt.mu, opt.allow_outside_contraction);
    auto K = std::make_shared<const DiscretizedKernel>(
        discretize(model, grid, consts.mu, opt.allow_outside_contraction));
    std::shared_ptr<const ResolventMatrix> R;
    if (opt.compute_resolvent) R = std::make_shared<const ResolventMatrix>(direct_resolvent(*K));
    const FieSolution phi = phi_hat(*K, R.get(), opt.route_tol);
    const FieSolution psi = psi_hat(*K, R.get(), opt.route_tol);
    if (!(phi.residual < opt.fie_tol) || !(psi.residual < opt.fie_tol))
        throw DiscretizationError("FIE residual above tolerance (phi " +
                                  std::to_string(phi.residual) + ", psi " +
                                  std::to_string(psi.residual) + "); refine the grid");
    FeedbackLaw law{model,
                    grid,
                    consts,
                    -model.b / model.c,
                    k_constant(model),
                    *phi.nodes,
                    phi.mid,
                    psi.mid,
                    psi.nodes,
                    phi.residual,
                    psi.residual,
                    phi.route_gap,
                    psi.route_gap,
                    K,
                    R,
                    opt.drift_rule};
    return law;
}

/// v(t_i) = (b/c) x(t_{i-m}) + u(t_i), with x = x0 before time 0.
inline SamplePath transform_T(const LqModel& model, const SamplePath& u, const SamplePath& x) {
    detail::require_same_grid(u.grid, x.grid);
    const int m = u.grid.delay_steps(model.delta);
    SamplePath v = SamplePath::zeros(u.grid, PathKind::control);
    for (int i = 0; i <= u.grid.n; ++i) {
        const double xd = i >= m ? x.values[i - m] : model.x0;
        v.values[i] = (model.b / model.c) * xd + u.values[i];
    }
    return v;
}

/**
 * Simulates the delay-free state driven by v and returns (u, X) with
 * u(t) = -(b/c) X(t - delta) + v(t); X is then also the state generated by u.
 */
inline std::pair<SamplePath, SamplePath> inverse_T(const LqModel& model, const SamplePath& v,
                                                   const BrownianPath& w,
                                                   const FracWeights* weights = nullptr) {
    LqModel free = model;
    free.b = 0.0;
    free.delta = 0.0;
    SamplePath x = simulate_frac_sdde(free, v, w, weights);
    const int m = v.grid.delay_steps(model.delta);
    SamplePath u = SamplePath::zeros(v.grid, PathKind::control);
    for (int i = 0; i <= v.grid.n; ++i) {
        const double xd = i >= m ? x.values[i - m] : model.x0;
        u.values[i] = -(model.b / model.c) * xd + v.values[i];
    }
    return {u, x};
}

struct OptimalPaths {
    SamplePath v_hat;
    SamplePath u_hat;
    SamplePath x_hat;
};

inline OptimalPaths optimal_paths(const FeedbackLaw& law, const BrownianPath& w,
                                  const FracWeights* weights = nullptr) {
    detail::require_same_grid(law.grid, w.grid);
    SamplePath v = stochastic_convolution(law.psi_mid, w);
    v.kind = PathKind::control;
    for (int i = 0; i <= law.grid.n; ++i) v.values[i] += law.phi_nodes.values[i];
    std::optional<FracWeights> own;
    if (!weights) weights = &own.emplace(law.weights());
    auto [u, x] = inverse_T(law.model, v, w, weights);
    return {std::move(v), std::move(u), std::move(x)};
}

/// Deterministic mean x0 + (c/Gamma(alpha)) int_0^t (t - s)^{alpha-1} phi(s) ds with product weights.
inline std::vector<double> mean_state(const FeedbackLaw& law) {
    const FracWeights fw = law.weights();
    const int n = law.grid.n;
    std::vector<double> mean(n + 1);
    for (int i = 0; i <= n; ++i) {
        CompensatedSum s;
        s.add(law.model.x0);
        for (int j = 0; j <= i; ++j) s.add(law.model.c * fw.weight(i, j) * law.phi_nodes.values[j]);
        mean[i] = s.value();
    }
    return mean;
}

struct CostEstimate {
    double mean = 0.0;
    double std_error = 0.0;
    int n_paths = 0;
    double horizon_truncation_bound = 0.0;
};

/// Exogenous control family: control path for (path index, Brownian path).
using ControlFamily = std::function<SamplePath(int, const BrownianPath&)>;
using ControlSource = std::variant<std::reference_wrapper<const FeedbackLaw>, ControlFamily>;

/// 1/2 int_0^T e^{-lambda t} (X^2 + u^2 / gamma) dt by the trapezoid rule.
inline double discounted_cost(const LqModel& model, const SamplePath& x, const SamplePath& u) {
    const TimeGrid& g = x.grid;
    CompensatedSum s;
    for (int i = 0; i <= g.n; ++i) {
        const double wgt = (i == 0 || i == g.n) ? 0.5 : 1.0;
        const double xi = x.values[i];
        const double ui = u.values[i];
        s.add(wgt * std::exp(-model.lambda * g.t(i)) * (xi * xi + ui * ui / model.gamma));
    }
    return 0.5 * g.h() * s.value();
}

/// Mean of the undiscounted running cost 1/2 (X^2 + u^2/gamma) over the last 10% of nodes.
inline double tail_running_cost(const LqModel& model, const SamplePath& x, const SamplePath& u) {
    const int n = x.grid.n;
    const int first = n - std::max(1, n / 10);
    double s = 0.0;
    for (int i = first; i <= n; ++i)
        s += 0.5 * (x.values[i] * x.values[i] + u.values[i] * u.values[i] / model.gamma);
    return s / (n - first + 1);
}

inline CostEstimate summarize_costs(const std::vector<double>& costs, double tail_bound) {
    const int n = static_cast<int>(costs.size());
    CompensatedSum s;
    for (double c : costs) s.add(c);
    const double mean = s.value() / n;
    CompensatedSum v;
    for (double c : costs) v.add((c - mean) * (c - mean));
    const double var = v.value() / (n - 1);
    return {mean, std::sqrt(var / n), n, tail_bound};
}

/**
 * Monte Carlo discounted cost with seeds base_seed + i. For a FeedbackLaw the optimal pair is
 * simulated with the law's drift rule; for a control family the state is simulated from the
 * given control with `rule`.
 */
inline CostEstimate cost_estimate(const LqModel& model, const ControlSource& source,
                                  const TimeGrid& grid, int n_paths, std::uint64_t base_seed,
                                  DriftRule rule = DriftRule::trapezoid) {
    if (n_paths < 2) throw std::invalid_argument("cost_estimate needs at least 2 paths");
    if (auto law = std::get_if<std::reference_wrapper<const FeedbackLaw>>(&source))
        rule = law->get().drift_rule;
    const FracWeights fw(model.alpha, grid, rule);
    struct PathCost {
        double cost = 0.0;
        double tail = 0.0;
    };
    auto results = map_paths<PathCost>(grid, n_paths, base_seed, [&](int i, const BrownianPath& w) {
        SamplePath x, u;
        if (auto law = std::get_if<std::reference_wrapper<const FeedbackLaw>>(&source)) {
            OptimalPaths p = optimal_paths(law->get(), w, &fw);
            x = std::move(p.x_hat);
            u = std::move(p.u_hat);
        } else {
            u = std::get<ControlFamily>(source)(i, w);
            x = simulate_frac_sdde(model, u, w, &fw);
        }
        return PathCost{discounted_cost(model, x, u), tail_running_cost(model, x, u)};
    });
    std::vector<double> costs(n_paths);
    double tail = 0.0;
    for (int i = 0; i < n_paths; ++i) {
        costs[i] = results[i].cost;
        tail += results[i].tail;
    }
    tail /= n_paths;
    const double bound = std::exp(-model.lambda * grid.horizon) * tail / model.lambda;
    return summarize_costs(costs, bound);
}

/// Zero control on a grid, for use as a ControlFamily.
inline ControlFamily zero_control(const TimeGrid& grid) {
    return [grid](int, const BrownianPath&) { return SamplePath::zeros(grid, PathKind::control); };
}

} // namespace fraclqr

#include <cmath>

#include <gtest/gtest.h>

#include "fraclqr/synthesis.hpp"
#include "fraclqr/verify.hpp"

using namespace fraclqr;

namespace {

LqModel reference3() {
    LqModel m;
    m.b = 0.1;
    m.sigma = 0.5;
    m.alpha = 0.75;
    m.delta = 0.5;
    m.lambda = 3.0;
    return m;
}

SamplePath sine_control(const TimeGrid& g) {
    SamplePath u = SamplePath::zeros(g, PathKind::control);
    for (int i = 0; i <= g.n; ++i) u.values[i] = 0.3 * std::sin(2.0 * g.t(i));
    return u;
}

} // namespace

TEST(TransformT, IdentityWithoutDelayCoefficient) {
    LqModel m = reference3();
    m.b = 0.0;
    const TimeGrid g(4.0, 64);
    const SamplePath u = sine_control(g);
    const SamplePath x = simulate_frac_sdde(m, u, sample_brownian(g, 1));
    EXPECT_EQ(transform_T(m, u, x).values, u.values);
}

TEST(TransformT, NullControlGivesDelayedState) {
    LqModel m = reference3();
    m.b = 1.0;
    m.c = 1.0;
    const TimeGrid g(4.0, 64);
    const SamplePath u = SamplePath::zeros(g, PathKind::control);
    const SamplePath x = simulate_frac_sdde(m, u, sample_brownian(g, 2));
    const SamplePath v = transform_T(m, u, x);
    const int s = g.delay_steps(m.delta);
    for (int i = 0; i <= g.n; ++i) EXPECT_EQ(v.values[i], i >= s ? x.values[i - s] : m.x0);
}

TEST(InverseT, RoundTripAndConsistency) {
    const LqModel m = reference3();
    const TimeGrid g(4.0, 128);
    const auto w = sample_brownian(g, 3);
    for (DriftRule rule : {DriftRule::left_point, DriftRule::trapezoid}) {
        const FracWeights fw(m.alpha, g, rule);
        const SamplePath u = sine_control(g);
        const SamplePath x = simulate_frac_sdde(m, u, w, &fw);
        const auto [u2, x2] = inverse_T(m, transform_T(m, u, x), w, &fw);
        for (int i = 0; i <= g.n; ++i) {
            EXPECT_NEAR(u2.values[i], u.values[i], 1e-10);
            EXPECT_NEAR(x2.values[i], x.values[i], 1e-10);
        }
        // X^{T^{-1} v} reproduced by the controlled simulator.
        SamplePath v = sine_control(g);
        const auto [uv, xv] = inverse_T(m, v, w, &fw);
        const SamplePath xs = simulate_frac_sdde(m, uv, w, &fw);
        for (int i = 0; i <= g.n; ++i) EXPECT_NEAR(xs.values[i], xv.values[i], 1e-9);
    }
}

TEST(InverseT, ZeroSignalWithoutNoise) {
    LqModel m = reference3();
    m.sigma = 0.0;
    const TimeGrid g(4.0, 64);
    const auto [u, x] = inverse_T(m, SamplePath::zeros(g, PathKind::control), sample_brownian(g, 1));
    for (int i = 0; i <= g.n; ++i) {
        EXPECT_DOUBLE_EQ(x.values[i], m.x0);
        EXPECT_DOUBLE_EQ(u.values[i], -(m.b / m.c) * m.x0);
    }
}

TEST(Synthesize, ZeroProblem) {
    LqModel m = reference3();
    m.sigma = 0.0;
    m.x0 = 0.0;
    const TimeGrid g(8.0, 128);
    const FeedbackLaw law = synthesize(m, g);
    for (double v : law.phi_nodes.values) EXPECT_EQ(v, 0.0);
    for (double v : law.psi_mid.values) EXPECT_EQ(v, 0.0);
    const auto p = optimal_paths(law, sample_brownian(g, 5));
    for (double v : p.u_hat.values) EXPECT_EQ(v, 0.0);
    const auto cost = cost_estimate(m, std::cref(law), g, 4, 1);
    EXPECT_EQ(cost.mean, 0.0);
}

TEST(Synthesize, GainAndResiduals) {
    const LqModel m = reference3();
    SynthesisOptions opt;
    opt.compute_resolvent = true;
    const FeedbackLaw law = synthesize(m, TimeGrid(8.0, 256), opt);
    EXPECT_DOUBLE_EQ(law.gain * m.c, -m.b);
    EXPECT_LT(law.phi_residual, 1e-9);
    EXPECT_LT(law.psi_residual, 1e-9);
    EXPECT_LT(law.phi_route_gap, 1e-8);
    EXPECT_LT(law.psi_route_gap, 1e-8);
    EXPECT_DOUBLE_EQ(law.k_const, k_constant(m));
    EXPECT_THROW(synthesize(m, TimeGrid(8.0, 100)), GridError);
    LqModel bad = m;
    bad.lambda = 2.0;
    EXPECT_THROW(synthesize(bad, TimeGrid(8.0, 256)), AdmissibilityError);
}

TEST(Synthesize, PureGaussianControlWithoutDelayCoefficient) {
    LqModel m = reference3();
    m.b = 0.0;
    const TimeGrid g(8.0, 128);
    const FeedbackLaw law = synthesize(m, g);
    EXPECT_EQ(law.gain, 0.0);
    const auto p = optimal_paths(law, sample_brownian(g, 6));
    EXPECT_EQ(p.u_hat.values, p.v_hat.values);
}

TEST(Synthesize, RiccatiLimit) {
    LqModel m;
    m.lambda = 3.0;
    const RiccatiSolution ric = riccati_oracle(m);
    const FeedbackLaw law = synthesize(m, TimeGrid(8.0, 1024));
    EXPECT_NEAR(law.phi_nodes.values[0], ric.u0, 0.01 * std::abs(ric.u0));
    const auto cost = cost_estimate(m, std::cref(law), law.grid, 2, 1);
    EXPECT_NEAR(cost.mean, ric.J_star, 0.01 * ric.J_star);
    // Closed-loop state e^{-c^2 gamma P t} with the control -c gamma P X.
    const double rate = ric.P;
    for (int i : {64, 256, 512})
        EXPECT_NEAR(law.phi_nodes.values[i], -ric.P * std::exp(-rate * law.grid.t(i)), 2e-3);
}

TEST(OptimalPaths, DeterministicMeanFormula) {
    LqModel m = reference3();
    m.sigma = 0.0;
    const TimeGrid g(8.0, 256);
    const FeedbackLaw law = synthesize(m, g);
    const auto p = optimal_paths(law, sample_brownian(g, 1));
    const auto mean = mean_state(law);
    for (int i = 0; i <= g.n; ++i) EXPECT_NEAR(p.x_hat.values[i], mean[i], 1e-8);
}

TEST(OptimalPaths, SampleMeanMatchesGaussianMean) {
    const LqModel m = reference3();
    const TimeGrid g(8.0, 128);
    const FeedbackLaw law = synthesize(m, g);
    const auto mean = mean_state(law);
    const int paths = 10000;
    const int probe = 48;
    std::vector<double> xs;
    for (int s = 0; s < paths; ++s) xs.push_back(optimal_paths(law, sample_brownian(g, 100 + s)).x_hat.values[probe]);
    double mu = 0.0;
    for (double v : xs) mu += v;
    mu /= paths;
    double var = 0.0;
    for (double v : xs) var += (v - mu) * (v - mu);
    const double se = std::sqrt(var / (paths - 1) / paths);
    EXPECT_NEAR(mu, mean[probe], 5.0 * se);
}

TEST(CostEstimate, NullControlClosedForm) {
    LqModel m;
    m.sigma = 0.5;
    m.lambda = 1.0;
    const TimeGrid g(30.0, 1500);
    const auto est = cost_estimate(m, zero_control(g), g, 4000, 17);
    EXPECT_NEAR(est.mean, 0.625, 3.0 * est.std_error);
    EXPECT_LT(est.horizon_truncation_bound, 1e-3);
    EXPECT_THROW(cost_estimate(m, zero_control(g), g, 1, 17), std::invalid_argument);
}

TEST(CostEstimate, NoNoiseNoStateIsFree) {
    LqModel m;
    m.x0 = 0.0;
    const TimeGrid g(5.0, 50);
    EXPECT_EQ(cost_estimate(m, zero_control(g), g, 3, 1).mean, 0.0);
}

TEST(CostEstimate, OptimalBeatsNullControl) {
    const LqModel m = reference3();
    const TimeGrid g(8.0, 256);
    const FeedbackLaw law = synthesize(m, g);
    const auto opt = cost_estimate(m, std::cref(law), g, 400, 9);
    const auto null = cost_estimate(m, zero_control(g), g, 400, 9);
    EXPECT_LT(opt.mean + 3.0 * opt.std_error, null.mean - 3.0 * null.std_error);
}

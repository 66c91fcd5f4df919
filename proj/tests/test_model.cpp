#include <cmath>

#include <gtest/gtest.h>

#include "fraclqr/grid.hpp"
#include "fraclqr/model.hpp"

using namespace fraclqr;

namespace {

LqModel reference(double lambda = 2.0) {
    LqModel m;
    m.x0 = 1.0;
    m.b = 0.1;
    m.sigma = 0.5;
    m.alpha = 0.75;
    m.delta = 0.5;
    m.lambda = lambda;
    return m;
}

} // namespace

TEST(Validate, RejectsZeroC) {
    LqModel m;
    m.c = 0.0;
    try {
        validate(m);
        FAIL() << "expected ModelError";
    } catch (const ModelError& e) {
        EXPECT_STREQ(e.what(), "c must be nonzero");
    }
}

TEST(Validate, RejectsAlphaHalf) {
    LqModel m;
    m.alpha = 0.5;
    try {
        validate(m);
        FAIL() << "expected ModelError";
    } catch (const ModelError& e) {
        EXPECT_STREQ(e.what(), "alpha must exceed 1/2");
    }
}

TEST(Validate, OtherDomains) {
    LqModel m;
    m.gamma = 0.0;
    EXPECT_THROW(validate(m), ModelError);
    m = {};
    m.alpha = 1.01;
    EXPECT_THROW(validate(m), ModelError);
    m = {};
    m.delta = -0.1;
    EXPECT_THROW(validate(m), ModelError);
    m = {};
    m.lambda = 0.0;
    EXPECT_THROW(validate(m), ModelError);
    m = {};
    m.b = std::nan("");
    EXPECT_THROW(validate(m), ModelError);
}

TEST(Validate, ReferenceConfigIsValid) { EXPECT_NO_THROW(validate(reference())); }

TEST(RhoAlpha, ZeroWhenBIsZero) { EXPECT_EQ(rho_alpha(0.0, 0.3, 0.8), 0.0); }

TEST(RhoAlpha, ClosedFormWithoutDelay) {
    for (double alpha : {1.0, 0.75}) {
        const double r = rho_alpha(0.5, 0.0, alpha);
        EXPECT_NEAR(r, 1.0, 1e-12) << alpha;
        // Substitution into |b|(1 + e^{-rho delta}) rho^{-alpha} = 1.
        EXPECT_NEAR(0.5 * 2.0 * std::pow(r, -alpha), 1.0, 1e-12);
        EXPECT_NEAR(r, std::pow(2.0 * 0.5, 1.0 / alpha), 1e-12);
    }
}

TEST(RhoAlpha, SolvesDefiningEquationWithDelay) {
    const double r = rho_alpha(0.3, 0.7, 0.8);
    EXPECT_NEAR(0.3 * (1.0 + std::exp(-0.7 * r)) * std::pow(r, -0.8), 1.0, 1e-12);
}

TEST(RhoTilde, ClassicalCases) {
    LqModel m;
    m.delta = 2.5;
    EXPECT_NEAR(rho_tilde_alpha(m), 1.0, 1e-12);
    EXPECT_NEAR(rho_tilde_criterion(m, 1.0), 0.5, 1e-15);
    m.c = 2.0;
    EXPECT_NEAR(rho_tilde_alpha(m), 2.0, 1e-12);
}

TEST(RhoTilde, ExceedsRhoAlpha) {
    LqModel m;
    m.b = 0.5;
    const double rt = rho_tilde_alpha(m);
    EXPECT_GT(rt, rho_alpha(m));
    EXPECT_NEAR(rho_tilde_criterion(m, rt), 0.5, 1e-12);
    const LqModel r = reference();
    EXPECT_GT(rho_tilde_alpha(r), rho_alpha(r));
    EXPECT_NEAR(rho_tilde_alpha(r), 1.35109, 5e-5);
}

TEST(KConstant, Examples) {
    LqModel m;
    EXPECT_DOUBLE_EQ(k_constant(m), 1.0);
    m.c = 2.0;
    m.lambda = 4.0;
    EXPECT_DOUBLE_EQ(k_constant(m), 0.5);
    const LqModel r = reference();
    const double expected = (1.0 + 0.01 * std::exp(-1.0)) * std::pow(2.0, -0.75) - 0.1;
    EXPECT_NEAR(k_constant(r), expected, 1e-14);
    EXPECT_NEAR(k_constant(r), 0.49679, 1e-5);
}

TEST(Admissibility, ReferenceAtLambdaTwoIsOutside) {
    EXPECT_THROW(admissibility(reference(2.0)), AdmissibilityError);
    const auto k = admissibility(reference(2.0), std::nullopt, true);
    EXPECT_DOUBLE_EQ(k.mu, 1.0);
}

TEST(Admissibility, DefaultMuInsideInterval) {
    const auto k = admissibility(reference(3.0));
    EXPECT_GT(k.mu, k.rho_tilde_alpha);
    EXPECT_LE(k.mu, 1.5);
    EXPECT_THROW(admissibility(reference(3.0), 1.0), AdmissibilityError);
    EXPECT_THROW(admissibility(reference(3.0), 1.6), AdmissibilityError);
    EXPECT_DOUBLE_EQ(admissibility(reference(3.0), 1.5).mu, 1.5);
}

TEST(Grid, DelaySteps) {
    const TimeGrid g(8.0, 512);
    EXPECT_EQ(g.delay_steps(0.5), 32);
    EXPECT_EQ(g.delay_steps(0.0), 0);
    EXPECT_THROW(g.delay_steps(0.51), GridError);
    EXPECT_DOUBLE_EQ(g.t(512), 8.0);
    EXPECT_THROW(TimeGrid(0.0, 4), GridError);
    EXPECT_THROW(TimeGrid(1.0, 1), GridError);
}

TEST(Grid, DefaultHorizonAndDelayCompatibleGrid) {
    LqModel m = reference(3.0);
    EXPECT_DOUBLE_EQ(default_horizon(m, 1.0), 8.0);
    const TimeGrid g = delay_compatible_grid(m, 7.9, 0.03);
    EXPECT_NO_THROW(g.delay_steps(m.delta));
    EXPECT_GE(g.horizon, 7.9);
    EXPECT_LE(g.h(), 0.03);
}

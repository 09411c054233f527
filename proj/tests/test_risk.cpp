#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "riskdp/oracle.hpp"
#include "riskdp/risk.hpp"
#include "riskdp/rng.hpp"

using namespace riskdp;

namespace {

// Independent oracle: dense 1-D grid maximization of w*y - lambda*phi(w)
// over [0, L]. Deliberately ignorant of the closed forms under test.
double conjugate_grid_oracle(const PhiSpec& phi, double lambda, double L, double y, int steps) {
    double best = -1e300;
    for (int i = 0; i <= steps; ++i) {
        const double w = L * i / steps;
        best = std::max(best, w * y - lambda * phi(w));
    }
    return best;
}

DiscreteDist bernoulli(double p1, double v0 = 0.0, double v1 = 1.0) {
    return DiscreteDist{{{v0, 1.0 - p1}, {v1, p1}}};
}

}  // namespace

// --- eval_f -----------------------------------------------------------------

TEST(EvalF, CvarArithmetic) {
    const auto fam = RiskFamily::cvar(0.5, 1.0);
    EXPECT_DOUBLE_EQ(eval_f(fam, {0.2}, 0.7), 0.2 + 2.0 * 0.5);  // 1.2
    EXPECT_DOUBLE_EQ(eval_f(fam, {0.5}, 0.5), 0.5);              // hinge inactive
}

TEST(EvalF, PhiDualKlAgainstGridOracle) {
    const auto fam = RiskFamily::phi_dual(PhiSpec::kl(), 0.1, 10.0, 1.0);
    const double got = eval_f(fam, {1.0, 0.0}, 0.5);
    const double oracle = 1.0 * 0.1 + 0.0 + conjugate_grid_oracle(PhiSpec::kl(), 1.0, 10.0, 0.5, 2000000);
    EXPECT_NEAR(got, oracle, 1e-9);
    EXPECT_NEAR(got, 0.74872127070012817, 1e-12);  // 0.1 + e^0.5 - 1
}

TEST(EvalF, RejectsBadInputs) {
    const auto fam = RiskFamily::cvar(0.5, 1.0);
    EXPECT_THROW(eval_f(fam, {2.0}, 0.5), std::domain_error);  // outside [0, 1]
    EXPECT_THROW(eval_f(fam, {0.5}, std::nan("")), std::invalid_argument);
}

// --- conjugate_truncated ----------------------------------------------------

TEST(ConjugateTruncated, Chi2BoundaryAndInterior) {
    const auto chi2 = PhiSpec::chi_squared();
    // heavily negative argument forces w = 0: value -phi(0) = -1
    EXPECT_DOUBLE_EQ(conjugate_truncated(chi2, 1.0, 10.0, -10.0), -1.0);
    // interior maximizer w = 2: 2*2 - (2-1)^2 = 3
    EXPECT_DOUBLE_EQ(conjugate_truncated(chi2, 1.0, 10.0, 2.0), 3.0);
}

TEST(ConjugateTruncated, KlClampedAtCap) {
    // stationary point e^{y/lambda} = e^2 > 4, so the cap binds
    const double got = conjugate_truncated(PhiSpec::kl(), 0.5, 4.0, 1.0);
    const double oracle = conjugate_grid_oracle(PhiSpec::kl(), 0.5, 4.0, 1.0, 4000000);
    EXPECT_NEAR(got, oracle, 1e-9);
    EXPECT_NEAR(got, 2.727411277760219, 1e-12);
}

TEST(ConjugateTruncated, CustomPhiMatchesBuiltin) {
    const auto custom = PhiSpec::custom([](double w) { return (w - 1.0) * (w - 1.0); }, true);
    for (double y : {-3.0, -0.5, 0.0, 0.7, 2.5, 30.0}) {
        EXPECT_NEAR(conjugate_truncated(custom, 0.8, 5.0, y),
                    conjugate_truncated(PhiSpec::chi_squared(), 0.8, 5.0, y), 1e-8);
    }
}

TEST(ConjugateTruncated, LambdaFloorEnforced) {
    EXPECT_THROW(conjugate_truncated(PhiSpec::kl(), 1e-6, 4.0, 0.5), std::domain_error);
}

TEST(ConjugateTruncated, ConvexInArgument) {
    const CounterRng rng = CounterRng::derive(41);
    for (int i = 0; i < 300; ++i) {
        const double y0 = -4.0 + 8.0 * rng.uniform(3 * i);
        const double y1 = -4.0 + 8.0 * rng.uniform(3 * i + 1);
        const double lam = 0.1 + rng.uniform(3 * i + 2);
        const auto phi = (i % 2 == 0) ? PhiSpec::kl() : PhiSpec::chi_squared();
        const double mid = conjugate_truncated(phi, lam, 8.0, 0.5 * (y0 + y1));
        const double avg = 0.5 * (conjugate_truncated(phi, lam, 8.0, y0) +
                                  conjugate_truncated(phi, lam, 8.0, y1));
        EXPECT_LE(mid, avg + 1e-9);
    }
}

TEST(ConjugateTruncated, NeverBelowValueAtZero) {
    const CounterRng rng = CounterRng::derive(42);
    for (int i = 0; i < 200; ++i) {
        const double y = -5.0 + 10.0 * rng.uniform(2 * i);
        const double lam = kLambdaMin + rng.uniform(2 * i + 1);
        for (const auto& phi : {PhiSpec::kl(), PhiSpec::chi_squared(), PhiSpec::total_variation()})
            EXPECT_GE(conjugate_truncated(phi, lam, 6.0, y), -lam * phi(0.0) - 1e-12);
    }
}

// --- risk_of_distribution ---------------------------------------------------

TEST(RiskOfDistribution, CvarExamples) {
    const auto fam = RiskFamily::cvar(0.5, 1.0);
    const auto grid = ThetaGrid::uniform(fam.theta_box, 129);
    const auto rv = risk_of_distribution(fam, bernoulli(0.5), grid);
    EXPECT_NEAR(rv.value, 1.0, 1e-9);

    const auto fam1 = RiskFamily::cvar(1.0, 1.0);
    EXPECT_NEAR(risk_of_distribution(fam1, bernoulli(0.5), ThetaGrid::uniform(fam1.theta_box, 129)).value,
                0.5, 1e-9);

    // degenerate distribution: CVaR at any level is the constant
    const DiscreteDist point{{{0.37, 1.0}}};
    const auto fam2 = RiskFamily::cvar(0.25, 1.0);
    EXPECT_NEAR(risk_of_distribution(fam2, point, ThetaGrid::uniform(fam2.theta_box, 129)).value, 0.37,
                1e-9);
}

TEST(RiskOfDistribution, EmptyGridRejected) {
    const auto fam = RiskFamily::cvar(0.5, 1.0);
    ThetaGrid empty;
    EXPECT_THROW(risk_of_distribution(fam, bernoulli(0.5), empty), config_error);
}

TEST(RiskOfDistribution, CvarMonotoneInAlpha) {
    const CounterRng rng = CounterRng::derive(99);
    for (int trial = 0; trial < 20; ++trial) {
        DiscreteDist d;
        double rem = 1.0;
        for (int k = 0; k < 3; ++k) {
            const double p = (k == 2) ? rem : rem * rng.uniform(trial * 8 + k);
            d.atoms.emplace_back(rng.uniform(trial * 8 + 4 + k), p);
            rem -= p;
        }
        double prev = 1e300;
        for (double alpha : {0.1, 0.25, 0.5, 0.75, 1.0}) {
            const auto fam = RiskFamily::cvar(alpha, 1.0);
            const double val =
                risk_of_distribution(fam, d, ThetaGrid::uniform(fam.theta_box, 129)).value;
            EXPECT_LE(val, prev + 1e-9);
            prev = val;
        }
    }
}

TEST(RiskOfDistribution, DualGridMatchesSortedTailClosedForm) {
    const CounterRng rng = CounterRng::derive(7);
    for (int trial = 0; trial < 50; ++trial) {
        DiscreteDist d;
        double rem = 1.0;
        const int n = 2 + static_cast<int>(rng.uniform(trial * 16) * 4.0);
        for (int k = 0; k < n; ++k) {
            const double p = (k == n - 1) ? rem : rem * rng.uniform(trial * 16 + 1 + k);
            d.atoms.emplace_back(rng.uniform(trial * 16 + 8 + k), p);
            rem -= p;
        }
        for (double alpha : {0.25, 0.5, 0.9}) {
            const auto fam = RiskFamily::cvar(alpha, 1.0);
            const auto grid = ThetaGrid::uniform(fam.theta_box, 129);
            const double dual = risk_of_distribution(fam, d, grid).value;
            const double closed = cvar_closed_form(d, alpha);
            EXPECT_NEAR(dual, closed, 2.0 * grid.max_step() * fam.lipschitz_cost);
        }
    }
}

TEST(RiskOfDistribution, PhiTruncationMonotoneInCap) {
    const DiscreteDist d{{{0.1, 0.3}, {0.5, 0.4}, {0.9, 0.3}}};
    double prev = -1e300;
    for (double L : {1.5, 2.0, 4.0, 8.0}) {
        const auto fam = RiskFamily::phi_dual(PhiSpec::chi_squared(), 0.3, L, 1.0);
        const double val = risk_of_distribution(fam, d, ThetaGrid::uniform(fam.theta_box, 65)).value;
        EXPECT_GE(val, prev - 1e-9);
        prev = val;
    }
    // surrogate for the uncapped dual dominates every truncated value
    const auto big = RiskFamily::phi_dual(PhiSpec::chi_squared(), 0.3, 1e6, 1.0);
    const double top = risk_of_distribution(big, d, ThetaGrid::uniform(big.theta_box, 65)).value;
    EXPECT_GE(top, prev - 1e-9);
}

// --- Lipschitz probes (Assumption-style sampled checks) ----------------------

TEST(RiskFamily, SampledLipschitzInArgument) {
    const auto cvar = RiskFamily::cvar(0.5, 2.0);
    const auto dual = RiskFamily::phi_dual(PhiSpec::kl(), 0.2, 5.0, 2.0);
    const CounterRng rng = CounterRng::derive(13);
    for (int i = 0; i < 1000; ++i) {
        const double z0 = -1.0 + 4.0 * rng.uniform(4 * i);
        const double z1 = -1.0 + 4.0 * rng.uniform(4 * i + 1);
        const double th = 2.0 * rng.uniform(4 * i + 2);
        EXPECT_LE(std::abs(eval_f(cvar, {th}, z0) - eval_f(cvar, {th}, z1)),
                  cvar.lipschitz_cost * std::abs(z0 - z1) + 1e-9);
        const double lam = kLambdaMin + 5.0 * rng.uniform(4 * i + 3);
        EXPECT_LE(std::abs(eval_f(dual, {lam, 0.3}, z0) - eval_f(dual, {lam, 0.3}, z1)),
                  dual.lipschitz_cost * std::abs(z0 - z1) + 1e-9);
    }
}

TEST(RiskFamily, SampledLipschitzInTheta) {
    const auto cvar = RiskFamily::cvar(0.25, 2.0);
    const auto dual = RiskFamily::phi_dual(PhiSpec::chi_squared(), 0.2, 3.0, 2.0);
    const CounterRng rng = CounterRng::derive(14);
    for (int i = 0; i < 1000; ++i) {
        const double z = 2.0 * rng.uniform(6 * i);
        const double t0 = 2.0 * rng.uniform(6 * i + 1);
        const double t1 = 2.0 * rng.uniform(6 * i + 2);
        EXPECT_LE(std::abs(eval_f(cvar, {t0}, z) - eval_f(cvar, {t1}, z)),
                  cvar.lipschitz_theta * std::abs(t0 - t1) + 1e-9);
        const std::vector<double> th0 = {kLambdaMin + 3.0 * rng.uniform(6 * i + 3),
                                         -1.0 + 2.0 * rng.uniform(6 * i + 4)};
        const std::vector<double> th1 = {th0[0], -1.0 + 2.0 * rng.uniform(6 * i + 5)};
        const double dist = std::hypot(th0[0] - th1[0], th0[1] - th1[1]);
        EXPECT_LE(std::abs(eval_f(dual, th0, z) - eval_f(dual, th1, z)),
                  dual.lipschitz_theta * dist + 1e-9);
    }
}

// --- scaling property --------------------------------------------------------

TEST(CheckScaling, CvarExact) {
    const auto fam = RiskFamily::cvar(0.5, 2.0);
    EXPECT_LE(check_scaling(fam, {0.4}, 0.9, {1.0}), 1e-12);
    EXPECT_LE(check_scaling(fam, {0.4}, 1.0, {0.3, 0.9, 2.0}), 1e-12);
    const CounterRng rng = CounterRng::derive(15);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const double th = 2.0 * rng.uniform(3 * i);
        const double g = 0.05 + 0.95 * rng.uniform(3 * i + 1);
        const double x = -1.0 + 4.0 * rng.uniform(3 * i + 2);
        worst = std::max(worst, check_scaling(fam, {th}, g, {x}));
    }
    EXPECT_LE(worst, 1e-12);
}

TEST(CheckScaling, TruncatedDualWithinConjugateTolerance) {
    const auto fam = RiskFamily::phi_dual(PhiSpec::kl(), 0.2, 4.0, 2.0);
    EXPECT_LE(check_scaling(fam, {1.0, 0.2}, 0.5, {0.7}), 1e-9);
    EXPECT_LE(check_scaling(fam, {0.6, -0.1}, 0.8, {0.1, 0.4, 1.3}), 1e-9);
}

// --- phi specs ----------------------------------------------------------------

TEST(PhiSpec, BuiltinsConvexAndMinimizedAtOne) {
    const CounterRng rng = CounterRng::derive(16);
    for (const auto& phi : {PhiSpec::kl(), PhiSpec::chi_squared(), PhiSpec::total_variation()}) {
        EXPECT_DOUBLE_EQ(phi(1.0), 0.0);
        EXPECT_DOUBLE_EQ(phi(0.0), 1.0);
        EXPECT_TRUE(std::isinf(phi(-0.5)));
        for (int i = 0; i < 200; ++i) {
            const double a = 6.0 * rng.uniform(3 * i);
            const double b = 6.0 * rng.uniform(3 * i + 1);
            EXPECT_LE(phi(0.5 * (a + b)), 0.5 * (phi(a) + phi(b)) + 1e-9);
            EXPECT_GE(phi(6.0 * rng.uniform(3 * i + 2)), 0.0);
        }
    }
}

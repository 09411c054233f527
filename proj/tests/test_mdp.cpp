#include <gtest/gtest.h>

#include <cmath>

#include "riskdp/mdp.hpp"
#include "riskdp/oracle.hpp"
#include "support/instances.hpp"

using namespace riskdp;
using testsup::two_action_instance;

namespace {

FiniteHorizonMdp single_path_chain(const std::vector<double>& stage_costs) {
    FiniteHorizonMdp m;
    m.horizon = static_cast<int>(stage_costs.size()) - 1;
    m.num_states.assign(m.horizon + 1, 1);
    m.num_actions.assign(m.horizon + 1, 1);
    m.kernels.assign(m.horizon, {{{1.0}}});
    for (double c : stage_costs) m.costs.push_back({{c}});
    m.validate();
    return m;
}

}  // namespace

// --- augmented stage cost -----------------------------------------------------

TEST(AugmentedCost, CvarPlugIn) {
    auto m = single_path_chain({0.0, 0.4});
    const auto fam = RiskFamily::cvar(0.5, 2.0);
    // f(0.3 + 0.4) - f(0.3) = 0.9 - 0.5 = 0.4
    EXPECT_NEAR(augmented_cost(m, fam, {0.5}, 1, 0, 0.3, 0), 0.4, 1e-15);

    auto zero = single_path_chain({0.0, 0.0});
    EXPECT_DOUBLE_EQ(augmented_cost(zero, fam, {0.5}, 1, 0, 0.3, 0), 0.0);

    auto unit = single_path_chain({1.0});
    // f(1) - f(0) = 1.5 - 0.5 = 1.0
    EXPECT_NEAR(augmented_cost(unit, fam, {0.5}, 0, 0, 0.0, 0), 1.0, 1e-15);

    EXPECT_THROW(augmented_cost(m, fam, {0.5}, 1, 0, 1.7, 0), std::domain_error);
}

// --- moduli ---------------------------------------------------------------------

TEST(Moduli, LemmaFormulas) {
    EXPECT_DOUBLE_EQ(opt_modulus(2, 0, 2.0), 12.0);
    EXPECT_DOUBLE_EQ(eval_modulus(2, 0, 2.0, 0.0), 12.0);  // L_pi = 0 collapse
    EXPECT_DOUBLE_EQ(opt_modulus(5, 5, 1.0), 2.0);         // boundary stage
    EXPECT_DOUBLE_EQ(eval_modulus(3, 1, 1.0, 2.0), (2.0 + 2.0 * 2.0) * 3.0);
}

// --- dp_optimize ------------------------------------------------------------------

TEST(DpOptimize, ZeroCostsGiveZeroTables) {
    auto m = single_path_chain({0.0, 0.0, 0.0});
    for (const auto& fam :
         {RiskFamily::cvar(0.5, 2.0), RiskFamily::phi_dual(PhiSpec::kl(), 0.1, 4.0, 2.0)}) {
        const std::vector<double> theta =
            (fam.kind == RiskKind::CVaR) ? std::vector<double>{0.7} : std::vector<double>{1.0, 0.2};
        const auto res = dp_optimize(m, fam, theta, XGrid::lattice(2));
        for (const auto& stage : res.table.values)
            for (const auto& row : stage)
                for (double v : row) EXPECT_NEAR(v, 0.0, 1e-12);
    }
}

TEST(DpOptimize, TwoActionInstance) {
    const auto m = two_action_instance();
    const auto grid = XGrid::lattice(10);

    // CVaR_{1/2}: the certain 0.6 beats the Bernoulli branch (CVaR = 1.0)
    const auto fam = RiskFamily::cvar(0.5, 2.0);
    ThetaGrid tg;
    tg.axes = {{}};
    for (int i = 0; i <= 20; ++i) tg.axes[0].push_back(0.05 * i);
    const auto opt = optimal_risk(m, fam, tg, 0, grid);
    EXPECT_NEAR(opt.risk, 0.6, 1e-12);
    EXPECT_EQ(opt.policy.action[0][0][0], 1);

    // CVaR_1 is the expectation: the random branch wins at 0.5
    const auto fam1 = RiskFamily::cvar(1.0, 2.0);
    const auto opt1 = optimal_risk(m, fam1, tg, 0, grid);
    EXPECT_NEAR(opt1.risk, 0.5, 1e-12);
    EXPECT_EQ(opt1.policy.action[0][0][0], 0);
}

TEST(DpOptimize, TieBreaksToLowestActionIndex) {
    FiniteHorizonMdp m;
    m.horizon = 0;
    m.num_states = {1};
    m.num_actions = {3};
    m.costs = {{{0.5, 0.5, 0.5}}};
    m.validate();
    const auto res = dp_optimize(m, RiskFamily::cvar(0.5, 1.0), {0.2}, XGrid::lattice(2));
    EXPECT_EQ(res.greedy.action[0][0][0], 0);
}

TEST(DpOptimize, LatticeViolationRejected) {
    auto m = single_path_chain({0.3, 0.0});
    EXPECT_THROW(dp_optimize(m, RiskFamily::cvar(0.5, 2.0), {0.5}, XGrid::lattice(4)), config_error);
}

// --- dp_evaluate --------------------------------------------------------------------

TEST(DpEvaluate, TwoActionBranchValue) {
    const auto m = two_action_instance();
    const auto grid = XGrid::lattice(10);
    const auto fam = RiskFamily::cvar(0.5, 2.0);
    const auto pol = testsup::constant_policy(m, grid, 0);
    const auto table = dp_evaluate(m, pol, fam, {0.5}, grid);
    EXPECT_NEAR(table.values[0][0][0], 0.5, 1e-12);
    // adding f_theta(0) recovers E[f_theta(total)] = 0.25 + 0.75
    EXPECT_NEAR(table.values[0][0][0] + eval_f(fam, {0.5}, 0.0), 1.0, 1e-12);
}

TEST(DpEvaluate, DeterministicChainTelescopes) {
    auto m = single_path_chain({0.25, 0.5, 0.75});
    const auto grid = XGrid::lattice(4);
    const auto fam = RiskFamily::cvar(0.25, 3.0);
    const auto pol = testsup::constant_policy(m, grid, 0);
    const auto table = dp_evaluate(m, pol, fam, {0.8}, grid);
    const double total = 0.25 + 0.5 + 0.75;
    EXPECT_NEAR(table.values[0][0][0],
                eval_f(fam, {0.8}, total) - eval_f(fam, {0.8}, 0.0), 1e-12);
}

TEST(DpEvaluate, SymmetricActionsMatchEitherDeterministicChoice) {
    FiniteHorizonMdp m;
    m.horizon = 1;
    m.num_states = {1, 2};
    m.num_actions = {2, 1};
    m.kernels = {{{{0.5, 0.5}, {0.5, 0.5}}}};
    m.costs = {{{0.25, 0.25}}, {{0.0}, {0.5}}};
    m.validate();
    const auto grid = XGrid::lattice(4);
    const auto fam = RiskFamily::cvar(0.5, 2.0);
    const auto mixed = dp_evaluate(m, testsup::uniform_random_policy(m, grid), fam, {0.4}, grid);
    const auto pure = dp_evaluate(m, testsup::constant_policy(m, grid, 0), fam, {0.4}, grid);
    EXPECT_NEAR(mixed.values[0][0][0], pure.values[0][0][0], 1e-12);
}

TEST(DpEvaluate, MisshapenPolicyRejected) {
    const auto m = two_action_instance();
    auto pol = testsup::constant_policy(m, XGrid::lattice(10), 0);
    pol.action[1].pop_back();
    EXPECT_THROW(dp_evaluate(m, pol, RiskFamily::cvar(0.5, 2.0), {0.5}, XGrid::lattice(10)),
                 config_error);
}

// --- optimal_risk / policy_risk -------------------------------------------------------

TEST(PolicyRisk, TwoActionExamples) {
    const auto m = two_action_instance();
    const auto grid = XGrid::lattice(10);
    ThetaGrid tg;
    tg.axes = {{}};
    for (int i = 0; i <= 20; ++i) tg.axes[0].push_back(0.05 * i);

    const auto fam = RiskFamily::cvar(0.5, 2.0);
    EXPECT_NEAR(policy_risk(m, testsup::constant_policy(m, grid, 0), fam, tg, 0, grid).risk, 1.0,
                1e-12);
    EXPECT_NEAR(policy_risk(m, testsup::constant_policy(m, grid, 1), fam, tg, 0, grid).risk, 0.6,
                1e-12);
    const auto fam1 = RiskFamily::cvar(1.0, 2.0);
    EXPECT_NEAR(policy_risk(m, testsup::constant_policy(m, grid, 0), fam1, tg, 0, grid).risk, 0.5,
                1e-12);
}

TEST(OptimalRisk, DegenerateCases) {
    auto zero = single_path_chain({0.0, 0.0});
    const auto fam = RiskFamily::cvar(0.5, 2.0);
    const auto tg = ThetaGrid::uniform(fam.theta_box, 41);
    const auto res = optimal_risk(zero, fam, tg, 0, XGrid::lattice(2));
    EXPECT_NEAR(res.risk, 0.0, 1e-12);
    EXPECT_NEAR(res.theta_star[0], 0.0, 1e-12);

    // single-action instance: optimal risk equals the only policy's risk
    auto chain = single_path_chain({0.5, 0.25});
    const auto opt = optimal_risk(chain, fam, tg, 0, XGrid::lattice(4));
    const auto pol = testsup::constant_policy(chain, XGrid::lattice(4), 0);
    EXPECT_NEAR(opt.risk, policy_risk(chain, pol, fam, tg, 0, XGrid::lattice(4)).risk, 1e-12);
}

// --- properties over random instances ---------------------------------------------------

TEST(Properties, TelescopingIdentityExactOnLattice) {
    for (std::uint64_t seed = 1; seed <= 12; ++seed) {
        const auto m = testsup::random_lattice_instance(seed);
        const auto grid = XGrid::lattice(4);
        const auto fam = RiskFamily::cvar(0.5, m.horizon + 1.0);
        const CounterRng rng = CounterRng::derive(seed, 0x7e1eULL);
        for (int k = 0; k < 20; ++k) {
            const auto pol = testsup::random_node_policy(m, grid, seed * 100 + k);
            const std::vector<double> theta = {(m.horizon + 1.0) * rng.uniform(k)};
            const auto table = dp_evaluate(m, pol, fam, theta, grid);
            const auto dist = exact_total_cost_distribution(m, pol, 0);
            double expected = 0.0;
            for (const auto& [v, p] : dist.atoms) expected += p * eval_f(fam, theta, v);
            EXPECT_NEAR(table.values[0][0][0] + eval_f(fam, theta, 0.0), expected, 1e-12);
        }
    }
}

TEST(Properties, OptimalityAgainstRandomPolicies) {
    const auto m = testsup::random_lattice_instance(5);
    const auto grid = XGrid::lattice(4);
    const auto fam = RiskFamily::cvar(0.25, m.horizon + 1.0);
    const std::vector<double> theta = {0.62};
    const auto opt = dp_optimize(m, fam, theta, grid);
    for (int k = 0; k < 100; ++k) {
        const auto pol = testsup::random_node_policy(m, grid, 9000 + k);
        const auto ev = dp_evaluate(m, pol, fam, theta, grid);
        for (std::size_t t = 0; t < ev.values.size(); ++t)
            for (std::size_t s = 0; s < ev.values[t].size(); ++s)
                for (std::size_t xi = 0; xi < ev.values[t][s].size(); ++xi)
                    EXPECT_GE(ev.values[t][s][xi], opt.table.values[t][s][xi] - 1e-12);
    }
}

TEST(Properties, GreedyReEvaluatesToOptimalTables) {
    for (std::uint64_t seed = 21; seed <= 28; ++seed) {
        const auto m = testsup::random_lattice_instance(seed);
        const auto grid = XGrid::lattice(4);
        const auto fam = RiskFamily::cvar(0.5, m.horizon + 1.0);
        const std::vector<double> theta = {0.31};
        const auto opt = dp_optimize(m, fam, theta, grid);
        const auto ev = dp_evaluate(m, opt.greedy, fam, theta, grid);
        for (std::size_t t = 0; t < ev.values.size(); ++t)
            for (std::size_t s = 0; s < ev.values[t].size(); ++s)
                for (std::size_t xi = 0; xi < ev.values[t][s].size(); ++xi)
                    EXPECT_NEAR(ev.values[t][s][xi], opt.table.values[t][s][xi], 1e-12);
    }
}

TEST(Properties, TablesRespectModuliAndValueBound) {
    for (std::uint64_t seed = 31; seed <= 36; ++seed) {
        const auto m = testsup::random_lattice_instance(seed);
        const auto grid = XGrid::lattice(4);
        const auto fam = RiskFamily::cvar(0.5, m.horizon + 1.0);
        const double L_C = fam.lipschitz_cost;
        const auto opt = dp_optimize(m, fam, {0.44}, grid);
        const auto evt =
            dp_evaluate(m, testsup::random_state_policy(m, grid, seed), fam, {0.44}, grid);
        for (int t = 0; t <= m.horizon; ++t) {
            const auto& nodes = opt.table.xnodes[t];
            for (int s = 0; s < m.num_states[t]; ++s) {
                for (std::size_t xi = 0; xi < nodes.size(); ++xi) {
                    EXPECT_LE(std::abs(opt.table.values[t][s][xi]),
                              (m.horizon - t + 1) * L_C + 1e-12);
                    if (xi == 0) continue;
                    const double dx = nodes[xi] - nodes[xi - 1];
                    EXPECT_LE(std::abs(opt.table.values[t][s][xi] - opt.table.values[t][s][xi - 1]),
                              opt_modulus(m.horizon, t, L_C) * dx + 1e-9);
                    EXPECT_LE(std::abs(evt.values[t][s][xi] - evt.values[t][s][xi - 1]),
                              eval_modulus(m.horizon, t, L_C, 0.0) * dx + 1e-9);
                }
            }
        }
    }
}

TEST(Properties, UniformGridTracksLatticeWithinLedger) {
    for (std::uint64_t seed = 41; seed <= 46; ++seed) {
        const auto m = testsup::random_lattice_instance(seed);
        const auto fam = RiskFamily::cvar(0.5, m.horizon + 1.0);
        const std::vector<double> theta = {0.52};
        const auto exact = dp_optimize(m, fam, theta, XGrid::lattice(4));
        const double h = 1.0 / 32.0;
        const auto approx = dp_optimize(m, fam, theta, XGrid::uniform(h));
        const double bound = m.horizon * opt_modulus(m.horizon, 0, fam.lipschitz_cost) * h;
        EXPECT_LE(std::abs(approx.table.values[0][0][0] - exact.table.values[0][0][0]),
                  bound + 1e-9);
    }
}

#include <gtest/gtest.h>

#include <cmath>

#include "riskdp/soc.hpp"
#include "support/instances.hpp"

using namespace riskdp;

namespace {

SocProblem one_d_linear(int T, double cost_bias, double cost_slope) {
    SocProblem p;
    p.horizon = T;
    p.state_box = {{-1.0, 1.0}};
    p.action_box = {{-0.5, 0.5}};
    LinearDynamics dyn;
    dyn.A = {{0.5}};
    dyn.B = {{1.0}};
    dyn.clamp = true;
    p.dynamics = dyn;
    SocCost cost;
    cost.kind = SocCost::Kind::AffineAbs;
    cost.w_state = {cost_slope};
    cost.w_action = {0.1};
    cost.s_ref = {0.0};
    cost.a_ref = {0.0};
    cost.bias = cost_bias;
    p.cost = cost;
    p.noise = {{{-0.25}, 0.5}, {{0.25}, 0.5}};
    p.lipschitz_joint = 1.0;
    p.validate();
    return p;
}

}  // namespace

// --- moduli -----------------------------------------------------------------------

TEST(SocModuliFormulas, BaseAndRecursion) {
    // optimal recursion, t = T base case: L_S = L * L_C
    EXPECT_DOUBLE_EQ(soc_moduli(3, 3, 1.0, 2.0, std::nullopt).in_state, 2.0);
    // hand-unrolled: T=1, L_C=1, L=1 -> L_X^1 = 2, L_S^1 = 1, L_S^0 = (1+2+1) = 4
    const auto m = soc_moduli(1, 0, 1.0, 1.0, std::nullopt);
    EXPECT_DOUBLE_EQ(m.in_x, 4.0);  // 2(T-t+1)L_C = 2*2*1
    EXPECT_DOUBLE_EQ(m.in_state, 4.0);
    // L_pi = 0 collapses the evaluation recursion onto the optimal one
    const auto me = soc_moduli(1, 0, 1.0, 1.0, 0.0);
    EXPECT_DOUBLE_EQ(me.in_x, m.in_x);
    EXPECT_DOUBLE_EQ(me.in_state, m.in_state);
    // x-modulus matches the tabular ledger at matching arguments
    EXPECT_DOUBLE_EQ(soc_moduli(4, 1, 2.0, 1.5, std::nullopt).in_x, opt_modulus(4, 1, 2.0));
    EXPECT_DOUBLE_EQ(soc_moduli(4, 1, 2.0, 1.5, 0.7).in_x, eval_modulus(4, 1, 2.0, 0.7));
}

// --- dp over grids -------------------------------------------------------------------

TEST(SocDp, ZeroCostProblemIsZeroEverywhere) {
    auto p = one_d_linear(2, 0.0, 0.0);
    p.cost.w_action = {0.0};
    const auto fam = RiskFamily::cvar(0.5, 3.0);
    SocGrid grid;
    grid.h_state = 0.25;
    grid.h_action = 0.25;
    grid.xgrid = XGrid::uniform(0.25);
    const auto res = soc_dp_optimize(p, fam, {0.4}, grid);
    for (const auto& stage : res.table.values)
        for (const auto& row : stage)
            for (double v : row) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(SocDp, SingleScenarioSinglePathTelescopes) {
    // F(s,a,xi) = s, constant cost 0.3, single action: the augmented value at
    // (s, 0) telescopes to f(0.3 (T+1)) - f(0)
    SocProblem p;
    p.horizon = 1;
    p.state_box = {{0.0, 1.0}};
    p.action_box = {{0.0, 0.0}};
    LinearDynamics dyn;
    dyn.A = {{1.0}};
    dyn.B = {{0.0}};
    p.dynamics = dyn;
    p.cost.kind = SocCost::Kind::Constant;
    p.cost.value = 0.3;
    p.noise = {{{0.0}, 1.0}};
    p.validate();

    const auto fam = RiskFamily::cvar(0.5, 2.0);
    SocGrid grid;
    grid.h_state = 0.5;
    grid.h_action = 1.0;
    grid.xgrid = XGrid::uniform(0.1);
    const auto res = soc_dp_optimize(p, fam, {0.6}, grid);
    const double expect = eval_f(fam, {0.6}, 0.6) - eval_f(fam, {0.6}, 0.0);
    EXPECT_NEAR(res.table.values[0][0][0], expect, 1e-9);

    // theta grid with step 0.05 contains the optimizer theta* = 0.6 exactly
    ThetaGrid tg = ThetaGrid::uniform(fam.theta_box, 41);
    EXPECT_NEAR(soc_optimal_risk(p, fam, tg, 0, grid).risk, 0.6, 1e-9);
}

TEST(SocDp, EvaluateMatchesOptimizeForGreedy) {
    const auto p = one_d_linear(2, 0.2, 0.3);
    const auto fam = RiskFamily::cvar(0.5, 3.0);
    SocGrid grid;
    grid.h_state = 0.25;
    grid.h_action = 0.25;
    grid.xgrid = XGrid::uniform(0.125);
    const auto opt = soc_dp_optimize(p, fam, {0.8}, grid);
    const auto ev = soc_dp_evaluate(p, opt.greedy, fam, {0.8}, grid);
    for (std::size_t t = 0; t < ev.values.size(); ++t)
        for (std::size_t si = 0; si < ev.values[t].size(); ++si)
            for (std::size_t xi = 0; xi < ev.values[t][si].size(); ++xi)
                EXPECT_NEAR(ev.values[t][si][xi], opt.table.values[t][si][xi], 1e-12);
}

TEST(SocDp, DynamicsLeavingBoxRejectedWithoutClamp) {
    auto p = one_d_linear(1, 0.1, 0.2);
    auto dyn = std::get<LinearDynamics>(p.dynamics);
    dyn.A = {{3.0}};  // pushes past the box from the boundary nodes
    dyn.clamp = false;
    p.dynamics = dyn;
    const auto fam = RiskFamily::cvar(0.5, 2.0);
    SocGrid grid;
    grid.h_state = 0.5;
    grid.h_action = 0.25;
    grid.xgrid = XGrid::uniform(0.25);
    EXPECT_THROW(soc_dp_optimize(p, fam, {0.5}, grid), dynamics_error);
}

// --- discrete embedding ---------------------------------------------------------------

TEST(SocEmbedding, TwoActionInstanceReproducesTabularRisk) {
    const auto mdp = testsup::two_action_instance();  // kernel entries are halves
    const auto soc = embed_mdp_as_soc(mdp, 2);
    const auto fam = RiskFamily::cvar(0.5, 2.0);
    ThetaGrid tg;
    tg.axes = {{}};
    for (int i = 0; i <= 20; ++i) tg.axes[0].push_back(0.05 * i);

    SocGrid grid;
    grid.h_state = 1.0;
    grid.h_action = 1.0;
    grid.xgrid = XGrid::lattice(10);

    const auto via_soc = soc_optimal_risk(soc, fam, tg, 0, grid);
    const auto via_mdp = optimal_risk(mdp, fam, tg, 0, XGrid::lattice(10));
    EXPECT_NEAR(via_soc.risk, 0.6, 1e-9);
    EXPECT_NEAR(via_soc.risk, via_mdp.risk, 1e-9);
}

TEST(SocEmbedding, RandomRationalKernelInstancesMatch) {
    testsup::LatticeInstanceOptions opt;
    opt.rational_kernel = true;
    opt.kernel_denom = 8;
    for (std::uint64_t seed = 300; seed < 306; ++seed) {
        const auto mdp = testsup::random_lattice_instance(seed, opt);
        const auto soc = embed_mdp_as_soc(mdp, 8);
        const auto fam = RiskFamily::cvar(0.25, mdp.horizon + 1.0);
        const auto tg = ThetaGrid::uniform(fam.theta_box, 33);
        SocGrid grid;
        grid.h_state = 1.0;
        grid.h_action = 1.0;
        grid.xgrid = XGrid::lattice(4);
        const auto via_soc = soc_optimal_risk(soc, fam, tg, 0, grid);
        const auto via_mdp = optimal_risk(mdp, fam, tg, 0, XGrid::lattice(4));
        EXPECT_NEAR(via_soc.risk, via_mdp.risk, 1e-9) << "seed " << seed;
    }
}

TEST(SocEmbedding, IrrationalKernelRejected) {
    auto mdp = testsup::random_lattice_instance(123);  // dense normalized kernel
    bool lattice_rows = true;
    for (const auto& stage : mdp.kernels)
        for (const auto& per_state : stage)
            for (const auto& row : per_state)
                for (double pr : row)
                    if (std::abs(pr * 8 - std::llround(pr * 8)) > 1e-9) lattice_rows = false;
    if (!lattice_rows) EXPECT_THROW(embed_mdp_as_soc(mdp, 8), config_error);
}

// --- grid refinement ledger --------------------------------------------------------------

TEST(SocProperties, RefinementDeltaWithinModuliBudget) {
    const auto p = one_d_linear(2, 0.15, 0.4);
    const auto fam = RiskFamily::cvar(0.5, 3.0);
    const std::vector<double> theta = {0.7};

    SocGrid coarse;
    coarse.h_state = 0.25;
    coarse.h_action = 0.25;
    coarse.xgrid = XGrid::uniform(0.125);
    SocGrid fine = coarse;
    fine.h_state = 0.125;
    fine.h_action = 0.125;
    fine.xgrid = XGrid::uniform(0.0625);

    const auto vc = soc_dp_optimize(p, fam, theta, coarse);
    const auto vf = soc_dp_optimize(p, fam, theta, fine);
    const auto mod = soc_moduli(p.horizon, 0, fam.lipschitz_cost, p.lipschitz_joint, std::nullopt);
    const double budget =
        (mod.in_state * coarse.h_state + mod.in_state * coarse.h_action + mod.in_x * 0.125) *
        p.horizon;
    EXPECT_LE(std::abs(vf.table.values[0][4][0] - vc.table.values[0][2][0]), budget + 1e-9);
}

TEST(SocProperties, TablesRespectStateAndXModuli) {
    const auto p = one_d_linear(2, 0.2, 0.35);
    const auto fam = RiskFamily::cvar(0.5, 3.0);
    SocGrid grid;
    grid.h_state = 0.125;
    grid.h_action = 0.125;
    grid.xgrid = XGrid::uniform(0.0625);
    const auto res = soc_dp_optimize(p, fam, {0.5}, grid);
    const auto& sgrid = res.table.state_grid;
    for (int t = 0; t <= p.horizon; ++t) {
        const auto mod = soc_moduli(p.horizon, t, fam.lipschitz_cost, p.lipschitz_joint, std::nullopt);
        const auto& nodes = res.table.xnodes[t];
        const std::size_t ns = sgrid.axes[0].size();
        for (std::size_t si = 0; si < ns; ++si) {
            for (std::size_t xi = 0; xi < nodes.size(); ++xi) {
                if (xi > 0) {
                    const double dx = nodes[xi] - nodes[xi - 1];
                    EXPECT_LE(std::abs(res.table.values[t][si][xi] - res.table.values[t][si][xi - 1]),
                              mod.in_x * dx + 1e-9);
                }
                if (si > 0) {
                    const double ds = sgrid.axes[0][si] - sgrid.axes[0][si - 1];
                    EXPECT_LE(std::abs(res.table.values[t][si][xi] - res.table.values[t][si - 1][xi]),
                              mod.in_state * ds + 1e-9);
                }
            }
        }
    }
}

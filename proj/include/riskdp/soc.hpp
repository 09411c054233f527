#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "riskdp/errors.hpp"
#include "riskdp/mdp.hpp"
#include "riskdp/risk.hpp"

namespace riskdp {

// ---------------------------------------------------------------------------
// Finite-horizon stochastic optimal control over compact boxes: continuous
// state and action, transition function driven by a finite scenario set, and
// grid-discretized backward induction over the augmented state (s, x).
// ---------------------------------------------------------------------------

struct LinearDynamics {
    std::vector<std::vector<double>> A;  // d_S x d_S
    std::vector<std::vector<double>> B;  // d_S x d_A
    bool clamp = true;                   // clamp outputs to the state box
};

struct TabulatedDynamics {
    // next[t][state_node][action_node][scenario] -> next-state coordinates
    std::vector<std::vector<std::vector<std::vector<std::vector<double>>>>> next;
};

struct SocCost {
    enum class Kind { Constant, AffineAbs, Tabulated };
    Kind kind = Kind::Constant;
    double value = 0.0;  // Constant
    // AffineAbs: clamp01(bias + sum_i ws_i |s_i - sref_i| + sum_j wa_j |a_j - aref_j|)
    std::vector<double> w_state, w_action, s_ref, a_ref;
    double bias = 0.0;
    std::vector<std::vector<std::vector<double>>> table;  // Tabulated: [t][state_node][action_node]
};

struct Scenario {
    std::vector<double> xi;
    double prob = 0.0;
};

struct SocProblem {
    int horizon = 0;
    std::vector<std::array<double, 2>> state_box;
    std::vector<std::array<double, 2>> action_box;
    std::variant<LinearDynamics, TabulatedDynamics> dynamics;
    SocCost cost;
    std::vector<Scenario> noise;                      // shared across stages
    std::vector<std::vector<Scenario>> noise_stages;  // optional per-stage override
    double lipschitz_joint = 1.0;                     // L: joint modulus of cost and dynamics

    int state_dim() const { return static_cast<int>(state_box.size()); }
    int action_dim() const { return static_cast<int>(action_box.size()); }

    const std::vector<Scenario>& scenarios(int t) const {
        if (!noise_stages.empty()) return noise_stages.at(static_cast<std::size_t>(t));
        return noise;
    }

    void validate() const {
        if (horizon < 0) throw config_error("soc: negative horizon");
        if (state_box.empty() || action_box.empty()) throw config_error("soc: empty box");
        for (const auto& ax : state_box)
            if (!(ax[0] <= ax[1])) throw config_error("soc: bad state box");
        for (const auto& ax : action_box)
            if (!(ax[0] <= ax[1])) throw config_error("soc: bad action box");
        if (!noise_stages.empty() && static_cast<int>(noise_stages.size()) != horizon &&
            horizon > 0)
            throw config_error("soc: per-stage noise must cover stages 0..T-1");
        auto check = [](const std::vector<Scenario>& set) {
            if (set.empty()) throw config_error("soc: empty scenario set");
            double sum = 0.0;
            for (const auto& sc : set) {
                if (sc.prob < 0.0) throw config_error("soc: negative scenario probability");
                sum += sc.prob;
            }
            if (std::abs(sum - 1.0) > 1e-12)
                throw config_error("soc: scenario probabilities sum to " + std::to_string(sum));
        };
        if (noise_stages.empty()) {
            check(noise);
        } else {
            for (const auto& set : noise_stages) check(set);
        }
        if (!(lipschitz_joint > 0.0)) throw config_error("soc: Lipschitz constant must be positive");
    }
};

// ---------------------------------------------------------------------------
// Axis grids over boxes with multilinear interpolation.
// ---------------------------------------------------------------------------

struct BoxGrid {
    std::vector<std::vector<double>> axes;

    static BoxGrid cover(const std::vector<std::array<double, 2>>& box, double h) {
        if (!(h > 0.0)) throw config_error("BoxGrid: spacing must be positive");
        BoxGrid g;
        for (const auto& ax : box) {
            std::vector<double> nodes;
            if (ax[1] <= ax[0]) {
                nodes = {ax[0]};
            } else {
                const int m = std::max(1, static_cast<int>(std::ceil((ax[1] - ax[0]) / h - 1e-12)));
                for (int i = 0; i <= m; ++i) nodes.push_back(ax[0] + (ax[1] - ax[0]) * i / m);
            }
            g.axes.push_back(std::move(nodes));
        }
        return g;
    }

    std::size_t count() const {
        std::size_t n = 1;
        for (const auto& ax : axes) n *= ax.size();
        return n;
    }

    std::vector<double> coords(std::size_t idx) const {
        std::vector<double> c(axes.size());
        for (std::size_t k = 0; k < axes.size(); ++k) {
            c[k] = axes[k][idx % axes[k].size()];
            idx /= axes[k].size();
        }
        return c;
    }

    double max_spacing() const {
        double s = 0.0;
        for (const auto& ax : axes)
            for (std::size_t i = 1; i < ax.size(); ++i) s = std::max(s, ax[i] - ax[i - 1]);
        return s;
    }

    /// Multilinear interpolation of node values at q (clamped into the box).
    double interp(const std::vector<double>& vals, const std::vector<double>& q) const {
        const std::size_t d = axes.size();
        std::vector<std::size_t> seg(d);
        std::vector<double> w(d);
        for (std::size_t k = 0; k < d; ++k) {
            const auto& ax = axes[k];
            const double x = std::clamp(q[k], ax.front(), ax.back());
            if (ax.size() == 1) {
                seg[k] = 0;
                w[k] = 0.0;
                continue;
            }
            std::size_t hi = static_cast<std::size_t>(
                std::upper_bound(ax.begin(), ax.end(), x) - ax.begin());
            hi = std::clamp<std::size_t>(hi, 1, ax.size() - 1);
            seg[k] = hi - 1;
            w[k] = (x - ax[seg[k]]) / (ax[seg[k] + 1] - ax[seg[k]]);
        }
        double acc = 0.0;
        for (std::size_t corner = 0; corner < (1u << d); ++corner) {
            double weight = 1.0;
            std::size_t idx = 0, stride = 1;
            for (std::size_t k = 0; k < d; ++k) {
                const bool hi = (corner >> k) & 1u;
                weight *= hi ? w[k] : 1.0 - w[k];
                std::size_t i = seg[k] + (hi ? 1 : 0);
                if (axes[k].size() == 1) i = 0;
                idx += i * stride;
                stride *= axes[k].size();
            }
            if (weight != 0.0) acc += weight * vals[idx];
        }
        return acc;
    }
};

struct SocGrid {
    double h_state = 0.125;
    double h_action = 0.125;
    XGrid xgrid = XGrid::uniform(1.0 / 16.0);
};

// ---------------------------------------------------------------------------
// Cost and dynamics evaluation at grid nodes.
// ---------------------------------------------------------------------------

namespace detail {

inline double soc_cost_at(const SocProblem& prob, int t, std::size_t si, std::size_t ai,
                          const std::vector<double>& s, const std::vector<double>& a) {
    switch (prob.cost.kind) {
        case SocCost::Kind::Constant:
            return prob.cost.value;
        case SocCost::Kind::AffineAbs: {
            double c = prob.cost.bias;
            for (std::size_t k = 0; k < s.size(); ++k)
                c += prob.cost.w_state[k] * std::abs(s[k] - prob.cost.s_ref[k]);
            for (std::size_t k = 0; k < a.size(); ++k)
                c += prob.cost.w_action[k] * std::abs(a[k] - prob.cost.a_ref[k]);
            return std::clamp(c, 0.0, 1.0);
        }
        case SocCost::Kind::Tabulated: {
            const double c = prob.cost.table.at(t).at(si).at(ai);
            if (!(c >= 0.0 && c <= 1.0)) throw config_error("soc: tabulated cost outside [0,1]");
            return c;
        }
    }
    return 0.0;
}

inline std::vector<double> soc_next_state(const SocProblem& prob, int t, std::size_t si,
                                          std::size_t ai, const std::vector<double>& s,
                                          const std::vector<double>& a, std::size_t k) {
    const auto& sc = prob.scenarios(t)[k];
    if (std::holds_alternative<TabulatedDynamics>(prob.dynamics)) {
        return std::get<TabulatedDynamics>(prob.dynamics).next.at(t).at(si).at(ai).at(k);
    }
    const auto& lin = std::get<LinearDynamics>(prob.dynamics);
    std::vector<double> out(prob.state_dim(), 0.0);
    for (int i = 0; i < prob.state_dim(); ++i) {
        double v = 0.0;
        for (int j = 0; j < prob.state_dim(); ++j) v += lin.A[i][j] * s[j];
        for (int j = 0; j < prob.action_dim(); ++j) v += lin.B[i][j] * a[j];
        v += sc.xi.at(i);
        out[i] = v;
    }
    for (int i = 0; i < prob.state_dim(); ++i) {
        const auto& box = prob.state_box[i];
        if (out[i] < box[0] - 1e-9 || out[i] > box[1] + 1e-9) {
            if (!lin.clamp)
                throw dynamics_error("soc: dynamics left the state box at t=" + std::to_string(t) +
                                     ", state node " + std::to_string(si) + ", action node " +
                                     std::to_string(ai) + ", scenario " + std::to_string(k));
        }
        out[i] = std::clamp(out[i], box[0], box[1]);
    }
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Lipschitz moduli (augmented variable and state) for SOC value functions.
// ---------------------------------------------------------------------------

struct SocModuli {
    double in_x = 0.0;     // modulus in the accumulated-cost variable
    double in_state = 0.0; // modulus in the state
};

/// Moduli at stage t. With a policy modulus L_pi the evaluation recursions
/// apply; without one (std::nullopt) the optimal-value recursions apply.
inline SocModuli soc_moduli(int T, int t, double L_C, double L, std::optional<double> L_pi) {
    if (t < 0 || t > T) throw config_error("soc_moduli: stage out of range");
    SocModuli out;
    if (L_pi) {
        out.in_x = (2.0 + 0.5 * (T - t + 2) * (*L_pi)) * (T - t + 1) * L_C;
        double ls = (*L_pi) * L_C + L * L_C;  // stage T
        for (int i = T - 1; i >= t; --i) {
            const double lx_next = (2.0 + 0.5 * (T - i + 1) * (*L_pi)) * (T - i) * L_C;
            ls = (T - i + 1) * (*L_pi) * L_C + (L_C + lx_next + ls) * L;
        }
        out.in_state = ls;
    } else {
        out.in_x = 2.0 * (T - t + 1) * L_C;
        double ls = L * L_C;  // stage T
        for (int i = T - 1; i >= t; --i) {
            const double lx_next = 2.0 * (T - i) * L_C;
            ls = (L_C + lx_next + ls) * L;
        }
        out.in_state = ls;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Backward induction on the (state-grid x x-grid) product.
// ---------------------------------------------------------------------------

struct SocValueTable {
    BoxGrid state_grid;
    std::vector<std::vector<double>> xnodes;                // [t][xi]
    std::vector<std::vector<std::vector<double>>> values;   // [t][state_idx][xi]
};

struct SocDpResult {
    SocValueTable table;
    AugPolicy greedy;  // action holds action-node indices; "state" axis is the flattened node
};

namespace detail {

struct SocWorkspace {
    const SocProblem& prob;
    const RiskFamily& family;
    const std::vector<double>& theta;
    BoxGrid sgrid, agrid;
    std::vector<std::vector<double>> xnodes;

    SocWorkspace(const SocProblem& p, const RiskFamily& fam, const std::vector<double>& th,
                 const SocGrid& grid)
        : prob(p), family(fam), theta(th) {
        p.validate();
        sgrid = BoxGrid::cover(p.state_box, grid.h_state);
        agrid = BoxGrid::cover(p.action_box, grid.h_action);
        xnodes.resize(p.horizon + 1);
        for (int t = 0; t <= p.horizon; ++t) xnodes[t] = grid.xgrid.nodes(t);
    }

    double q_value(int t, std::size_t si, const std::vector<double>& scoords, int xi,
                   std::size_t ai, const std::vector<double>& acoords,
                   const std::vector<std::vector<double>>& next_slice) const {
        const double x = xnodes[t][xi];
        const double c = soc_cost_at(prob, t, si, ai, scoords, acoords);
        double q = eval_f_raw(family, theta, x + c) - eval_f_raw(family, theta, x);
        if (t < prob.horizon) {
            const auto& scen = prob.scenarios(t);
            const double xn = x + c;
            double cont = 0.0;
            for (std::size_t k = 0; k < scen.size(); ++k) {
                if (scen[k].prob == 0.0) continue;
                const auto snext = soc_next_state(prob, t, si, ai, scoords, acoords, k);
                cont += scen[k].prob * interp_state_then_x(snext, xn, t + 1, next_slice);
            }
            q += cont;
        }
        return q;
    }

    double interp_state_then_x(const std::vector<double>& snext, double xn, int tnext,
                               const std::vector<std::vector<double>>& slice) const {
        // linear in x at each state node, multilinear across state nodes
        const auto& nodes = xnodes[tnext];
        std::vector<double> per_node(slice.size());
        for (std::size_t i = 0; i < slice.size(); ++i)
            per_node[i] = interp_linear(nodes, slice[i], xn);
        return sgrid.interp(per_node, snext);
    }
};

}  // namespace detail

inline SocDpResult soc_dp_optimize(const SocProblem& prob, const RiskFamily& family,
                                   const std::vector<double>& theta, const SocGrid& grid) {
    detail::SocWorkspace ws(prob, family, theta, grid);
    const int T = prob.horizon;
    const std::size_t nstate = ws.sgrid.count();
    const std::size_t naction = ws.agrid.count();

    SocDpResult out;
    out.table.state_grid = ws.sgrid;
    out.table.xnodes = ws.xnodes;
    out.table.values.resize(T + 1);
    out.greedy.deterministic = true;
    out.greedy.action.resize(T + 1);
    out.greedy.xnodes = ws.xnodes;

    std::vector<std::vector<double>> next_slice;
    std::vector<std::vector<double>> acoords(naction);
    for (std::size_t ai = 0; ai < naction; ++ai) acoords[ai] = ws.agrid.coords(ai);

    for (int t = T; t >= 0; --t) {
        const std::size_t nx = ws.xnodes[t].size();
        std::vector<std::vector<double>> slice(nstate, std::vector<double>(nx));
        out.greedy.action[t].assign(nstate, std::vector<int>(nx, 0));
        for (std::size_t si = 0; si < nstate; ++si) {
            const auto scoords = ws.sgrid.coords(si);
            for (std::size_t xi = 0; xi < nx; ++xi) {
                double best = std::numeric_limits<double>::infinity();
                int best_a = 0;
                for (std::size_t ai = 0; ai < naction; ++ai) {
                    const double q = ws.q_value(t, si, scoords, static_cast<int>(xi), ai,
                                                acoords[ai], next_slice);
                    if (q < best) {
                        best = q;
                        best_a = static_cast<int>(ai);
                    }
                }
                if (!std::isfinite(best))
                    throw numeric_error("soc_dp_optimize: non-finite value at stage " +
                                        std::to_string(t));
                slice[si][xi] = best;
                out.greedy.action[t][si][xi] = best_a;
            }
        }
        out.table.values[t] = slice;
        next_slice = std::move(slice);
    }
    return out;
}

inline SocValueTable soc_dp_evaluate(const SocProblem& prob, const AugPolicy& policy,
                                     const RiskFamily& family, const std::vector<double>& theta,
                                     const SocGrid& grid) {
    detail::SocWorkspace ws(prob, family, theta, grid);
    const int T = prob.horizon;
    const std::size_t nstate = ws.sgrid.count();
    const std::size_t naction = ws.agrid.count();
    if (policy.stages() != T + 1) throw config_error("soc_dp_evaluate: policy stage count mismatch");

    SocValueTable table;
    table.state_grid = ws.sgrid;
    table.xnodes = ws.xnodes;
    table.values.resize(T + 1);

    std::vector<std::vector<double>> acoords(naction);
    for (std::size_t ai = 0; ai < naction; ++ai) acoords[ai] = ws.agrid.coords(ai);

    std::vector<std::vector<double>> next_slice;
    for (int t = T; t >= 0; --t) {
        const std::size_t nx = ws.xnodes[t].size();
        std::vector<std::vector<double>> slice(nstate, std::vector<double>(nx));
        for (std::size_t si = 0; si < nstate; ++si) {
            const auto scoords = ws.sgrid.coords(si);
            for (std::size_t xi = 0; xi < nx; ++xi) {
                double v = 0.0;
                if (policy.deterministic) {
                    const auto ai = static_cast<std::size_t>(policy.action[t][si][xi]);
                    if (ai >= naction) throw config_error("soc_dp_evaluate: bad action node index");
                    v = ws.q_value(t, si, scoords, static_cast<int>(xi), ai, acoords[ai],
                                   next_slice);
                } else {
                    const auto& dist = policy.probs[t][si][xi];
                    if (dist.size() != naction)
                        throw config_error("soc_dp_evaluate: policy distribution shape mismatch");
                    for (std::size_t ai = 0; ai < naction; ++ai)
                        if (dist[ai] != 0.0)
                            v += dist[ai] * ws.q_value(t, si, scoords, static_cast<int>(xi), ai,
                                                       acoords[ai], next_slice);
                }
                slice[si][xi] = v;
            }
        }
        table.values[t] = slice;
        next_slice = slice;
    }
    return table;
}

struct SocOptimalRiskResult {
    double risk = 0.0;
    std::vector<double> theta_star;
    AugPolicy policy;
};

/// min over the theta grid of Vtilde_0^theta(s0-node, 0) + f_theta(0).
inline SocOptimalRiskResult soc_optimal_risk(const SocProblem& prob, const RiskFamily& family,
                                             const ThetaGrid& theta_grid, std::size_t s0_node,
                                             const SocGrid& grid) {
    if (theta_grid.size() == 0) throw config_error("soc_optimal_risk: empty theta grid");
    SocOptimalRiskResult best;
    best.risk = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < theta_grid.size(); ++i) {
        const auto theta = theta_grid.point(i);
        auto res = soc_dp_optimize(prob, family, theta, grid);
        if (s0_node >= res.table.values[0].size())
            throw config_error("soc_optimal_risk: bad initial state node");
        const double risk = res.table.values[0][s0_node][0] + detail::eval_f_raw(family, theta, 0.0);
        if (risk < best.risk) {
            best.risk = risk;
            best.theta_star = theta;
            best.policy = std::move(res.greedy);
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Exact embedding of a tabular MDP: states and actions become integer grid
// points, and the kernel is realized by inverse-CDF scenarios on a uniform
// grid of probabilities (exact when kernel entries are multiples of 1/K).
// ---------------------------------------------------------------------------

inline SocProblem embed_mdp_as_soc(const FiniteHorizonMdp& mdp, int scenario_count) {
    mdp.validate();
    if (scenario_count < 1) throw config_error("embed_mdp_as_soc: need at least one scenario");
    int max_s = 0, max_a = 0;
    for (int v : mdp.num_states) max_s = std::max(max_s, v);
    for (int v : mdp.num_actions) max_a = std::max(max_a, v);

    SocProblem prob;
    prob.horizon = mdp.horizon;
    prob.state_box = {{0.0, static_cast<double>(max_s - 1)}};
    prob.action_box = {{0.0, static_cast<double>(max_a - 1)}};
    prob.lipschitz_joint = 2.0;  // declared; tabulated instances are checked on the grid
    for (int k = 0; k < scenario_count; ++k)
        prob.noise.push_back({{(k + 0.5) / scenario_count}, 1.0 / scenario_count});

    SocCost cost;
    cost.kind = SocCost::Kind::Tabulated;
    cost.table.resize(mdp.horizon + 1);
    TabulatedDynamics dyn;
    dyn.next.resize(std::max(mdp.horizon, 0));

    for (int t = 0; t <= mdp.horizon; ++t) {
        cost.table[t].assign(max_s, std::vector<double>(max_a));
        for (int si = 0; si < max_s; ++si) {
            const int s = std::min(si, mdp.num_states[t] - 1);
            for (int ai = 0; ai < max_a; ++ai) {
                const int a = std::min(ai, mdp.num_actions[t] - 1);
                cost.table[t][si][ai] = mdp.costs[t][s][a];
            }
        }
        if (t == mdp.horizon) continue;
        dyn.next[t].assign(max_s, std::vector<std::vector<std::vector<double>>>(
                                      max_a, std::vector<std::vector<double>>(scenario_count)));
        for (int si = 0; si < max_s; ++si) {
            const int s = std::min(si, mdp.num_states[t] - 1);
            for (int ai = 0; ai < max_a; ++ai) {
                const int a = std::min(ai, mdp.num_actions[t] - 1);
                const auto& row = mdp.kernels[t][s][a];
                // the scenario frequencies must reproduce the row exactly
                for (double p : row) {
                    const double scaled = p * scenario_count;
                    if (std::abs(scaled - std::llround(scaled)) > 1e-9)
                        throw config_error(
                            "embed_mdp_as_soc: kernel entry is not a multiple of 1/K");
                }
                for (int k = 0; k < scenario_count; ++k) {
                    const double u = (k + 0.5) / scenario_count;
                    double acc = 0.0;
                    int sn = static_cast<int>(row.size()) - 1;
                    for (std::size_t j = 0; j < row.size(); ++j) {
                        acc += row[j];
                        if (u < acc) {
                            sn = static_cast<int>(j);
                            break;
                        }
                    }
                    dyn.next[t][si][ai][k] = {static_cast<double>(sn)};
                }
            }
        }
    }
    prob.cost = std::move(cost);
    prob.dynamics = std::move(dyn);
    prob.validate();
    return prob;
}

}  // namespace riskdp

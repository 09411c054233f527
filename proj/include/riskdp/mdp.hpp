#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "riskdp/errors.hpp"
#include "riskdp/risk.hpp"
#include "riskdp/rng.hpp"

namespace riskdp {

// ---------------------------------------------------------------------------
// Finite-horizon tabular MDP with stages 0..T, per-stage state/action sets,
// row-stochastic kernels for t < T, and stage costs in [0, 1].
// ---------------------------------------------------------------------------

struct FiniteHorizonMdp {
    int horizon = 0;                      // T
    std::vector<int> num_states;          // size T+1
    std::vector<int> num_actions;         // size T+1
    // kernels[t][s][a] is the distribution of the next state, t in 0..T-1
    std::vector<std::vector<std::vector<std::vector<double>>>> kernels;
    // costs[t][s][a], t in 0..T
    std::vector<std::vector<std::vector<double>>> costs;

    void validate() const {
        if (horizon < 0) throw config_error("mdp: negative horizon");
        const auto stages = static_cast<std::size_t>(horizon) + 1;
        if (num_states.size() != stages || num_actions.size() != stages)
            throw config_error("mdp: per-stage set lists must have T+1 entries");
        for (std::size_t t = 0; t < stages; ++t)
            if (num_states[t] < 1 || num_actions[t] < 1)
                throw config_error("mdp: state/action sets must be non-empty");
        if (costs.size() != stages) throw config_error("mdp: costs must cover stages 0..T");
        if (kernels.size() != static_cast<std::size_t>(horizon))
            throw config_error("mdp: kernels must cover stages 0..T-1");
        for (std::size_t t = 0; t < stages; ++t) {
            if (static_cast<int>(costs[t].size()) != num_states[t])
                throw config_error("mdp: cost table shape mismatch at stage " + std::to_string(t));
            for (int s = 0; s < num_states[t]; ++s) {
                if (static_cast<int>(costs[t][s].size()) != num_actions[t])
                    throw config_error("mdp: cost table shape mismatch at stage " + std::to_string(t));
                for (double c : costs[t][s])
                    if (!(c >= 0.0 && c <= 1.0))
                        throw config_error("mdp: stage costs must lie in [0,1]");
            }
        }
        for (int t = 0; t < horizon; ++t) {
            if (static_cast<int>(kernels[t].size()) != num_states[t])
                throw config_error("mdp: kernel shape mismatch at stage " + std::to_string(t));
            for (int s = 0; s < num_states[t]; ++s) {
                if (static_cast<int>(kernels[t][s].size()) != num_actions[t])
                    throw config_error("mdp: kernel shape mismatch at stage " + std::to_string(t));
                for (const auto& row : kernels[t][s]) {
                    if (static_cast<int>(row.size()) != num_states[t + 1])
                        throw config_error("mdp: kernel row length mismatch at stage " + std::to_string(t));
                    double sum = 0.0;
                    for (double p : row) {
                        if (p < 0.0) throw config_error("mdp: negative transition probability");
                        sum += p;
                    }
                    if (std::abs(sum - 1.0) > 1e-12)
                        throw config_error("mdp: kernel row sums to " + std::to_string(sum));
                }
            }
        }
    }

    /// Tight bound on the accumulated cost: sum over stages of the max stage cost.
    double max_total_cost() const {
        double total = 0.0;
        for (const auto& stage : costs) {
            double m = 0.0;
            for (const auto& row : stage)
                for (double c : row) m = std::max(m, c);
            total += m;
        }
        return total;
    }
};

// ---------------------------------------------------------------------------
// Discretization of the accumulated-cost variable x.
//
// Lattice mode: every cost is an integer multiple of 1/K, so the reachable
// x-set at stage t is exactly {0, 1/K, ..., t}; the DP is exact.
// Uniform mode: nodes cover [0, t] (or a per-stage cap) with spacing <= h and
// values are linearly interpolated between nodes.
// ---------------------------------------------------------------------------

struct XGrid {
    enum class Mode { Lattice, Uniform };

    Mode mode = Mode::Lattice;
    int lattice_k = 4;
    double uniform_h = 1.0 / 16.0;
    // optional per-stage upper bounds for the x-range (defaults to [0, t]);
    // used by discounted truncations where x_t <= (1 - gamma^t)/(1 - gamma)
    std::vector<double> stage_hi;

    static XGrid lattice(int k) {
        if (k < 1) throw config_error("XGrid: lattice resolution must be >= 1");
        XGrid g;
        g.mode = Mode::Lattice;
        g.lattice_k = k;
        return g;
    }

    static XGrid uniform(double h) {
        if (!(h > 0.0)) throw config_error("XGrid: spacing must be positive");
        XGrid g;
        g.mode = Mode::Uniform;
        g.uniform_h = h;
        return g;
    }

    double stage_upper(int t) const {
        if (!stage_hi.empty()) return stage_hi.at(static_cast<std::size_t>(t));
        return static_cast<double>(t);
    }

    std::vector<double> nodes(int t) const {
        std::vector<double> out;
        if (mode == Mode::Lattice) {
            const int n = t * lattice_k;
            out.reserve(n + 1);
            for (int j = 0; j <= n; ++j) out.push_back(static_cast<double>(j) / lattice_k);
        } else {
            const double hi = stage_upper(t);
            if (hi <= 0.0) return {0.0};
            const int m = std::max(1, static_cast<int>(std::ceil(hi / uniform_h - 1e-12)));
            out.reserve(m + 1);
            for (int i = 0; i <= m; ++i) out.push_back(hi * i / m);
        }
        return out;
    }

    void validate_for(const FiniteHorizonMdp& mdp) const {
        if (mode != Mode::Lattice) return;
        for (const auto& stage : mdp.costs)
            for (const auto& row : stage)
                for (double c : row) {
                    const double scaled = c * lattice_k;
                    if (std::abs(scaled - std::round(scaled)) > 1e-9)
                        throw config_error("XGrid: cost " + std::to_string(c) +
                                           " is not on the 1/" + std::to_string(lattice_k) + " lattice");
                }
    }
};

/// Piecewise-linear interpolation with clamping outside the node range.
inline double interp_linear(const std::vector<double>& nodes, const std::vector<double>& vals, double x) {
    if (nodes.size() == 1) return vals[0];
    if (x <= nodes.front()) return vals.front();
    if (x >= nodes.back()) return vals.back();
    const auto it = std::upper_bound(nodes.begin(), nodes.end(), x);
    const std::size_t hi = static_cast<std::size_t>(it - nodes.begin());
    const std::size_t lo = hi - 1;
    const double w = (x - nodes[lo]) / (nodes[hi] - nodes[lo]);
    return vals[lo] + w * (vals[hi] - vals[lo]);
}

// ---------------------------------------------------------------------------
// Stage-indexed tables over (state, x-node).
// ---------------------------------------------------------------------------

struct ValueTable {
    std::vector<std::vector<std::vector<double>>> values;  // [t][s][xi]
    std::vector<std::vector<double>> xnodes;               // [t][xi]

    double at(int t, int s, double x) const {
        return interp_linear(xnodes[t], values[t][s], x);
    }
};

struct AugPolicy {
    bool deterministic = true;
    std::vector<std::vector<std::vector<int>>> action;                  // [t][s][xi]
    std::vector<std::vector<std::vector<std::vector<double>>>> probs;   // [t][s][xi][a]
    std::vector<std::vector<double>> xnodes;                            // [t][xi]
    std::optional<double> lipschitz_pi;                                 // declared L^pi, if any

    int stages() const {
        return static_cast<int>(deterministic ? action.size() : probs.size());
    }

    /// Index of the x-node closest to x at stage t (exact on lattice atoms).
    int node_index(int t, double x) const {
        const auto& nodes = xnodes[t];
        const auto it = std::lower_bound(nodes.begin(), nodes.end(), x);
        if (it == nodes.begin()) return 0;
        if (it == nodes.end()) return static_cast<int>(nodes.size()) - 1;
        const auto hi = static_cast<int>(it - nodes.begin());
        return (x - nodes[hi - 1] <= nodes[hi] - x) ? hi - 1 : hi;
    }
};

/// Uniform randomization over actions at every (s, x-node); constant in x,
/// so it satisfies the policy-Lipschitz condition with modulus 0.
inline AugPolicy uniform_aug_policy(const FiniteHorizonMdp& mdp, const XGrid& grid) {
    AugPolicy pol;
    pol.deterministic = false;
    pol.lipschitz_pi = 0.0;
    pol.probs.resize(mdp.horizon + 1);
    pol.xnodes.resize(mdp.horizon + 1);
    for (int t = 0; t <= mdp.horizon; ++t) {
        pol.xnodes[t] = grid.nodes(t);
        const std::vector<double> u(mdp.num_actions[t], 1.0 / mdp.num_actions[t]);
        pol.probs[t].assign(mdp.num_states[t],
                            std::vector<std::vector<double>>(pol.xnodes[t].size(), u));
    }
    return pol;
}

/// Deterministic policy with seeded random actions per (t, s, x-node).
inline AugPolicy random_aug_policy(const FiniteHorizonMdp& mdp, const XGrid& grid,
                                   std::uint64_t seed) {
    const CounterRng rng = CounterRng::derive(seed, 0x90c1ULL);
    std::uint64_t ctr = 0;
    AugPolicy pol;
    pol.deterministic = true;
    pol.action.resize(mdp.horizon + 1);
    pol.xnodes.resize(mdp.horizon + 1);
    for (int t = 0; t <= mdp.horizon; ++t) {
        pol.xnodes[t] = grid.nodes(t);
        pol.action[t].resize(mdp.num_states[t]);
        for (auto& per_state : pol.action[t]) {
            per_state.resize(pol.xnodes[t].size());
            for (auto& a : per_state)
                a = static_cast<int>(rng.uniform(ctr++) * mdp.num_actions[t] * 0.999999);
        }
    }
    return pol;
}

// ---------------------------------------------------------------------------
// Augmented stage cost and the Lipschitz moduli ledger.
// ---------------------------------------------------------------------------

/// f_theta(x + c_t(s,a)) - f_theta(x); magnitude bounded by L_C * c_t(s,a).
inline double augmented_cost(const FiniteHorizonMdp& mdp, const RiskFamily& family,
                             const std::vector<double>& theta, int t, int s, double x, int a) {
    if (t < 0 || t > mdp.horizon) throw std::domain_error("augmented_cost: stage out of range");
    if (s < 0 || s >= mdp.num_states[t] || a < 0 || a >= mdp.num_actions[t])
        throw std::domain_error("augmented_cost: state/action out of range");
    if (x < -1e-9 || x > t + 1e-9) throw std::domain_error("augmented_cost: x outside [0, t]");
    x = std::clamp(x, 0.0, static_cast<double>(t));
    const double c = mdp.costs[t][s][a];
    return detail::eval_f_raw(family, theta, x + c) - detail::eval_f_raw(family, theta, x);
}

/// Lipschitz modulus of the policy-evaluation value in x at stage t.
inline double eval_modulus(int T, int t, double L_C, double L_pi) {
    return (2.0 + 0.5 * (T - t + 2) * L_pi) * (T - t + 1) * L_C;
}

/// Lipschitz modulus of the optimal value in x at stage t.
inline double opt_modulus(int T, int t, double L_C) {
    return 2.0 * (T - t + 1) * L_C;
}

// ---------------------------------------------------------------------------
// Backward induction over the augmented state (s, x).
// ---------------------------------------------------------------------------

namespace detail {

struct DpWorkspace {
    const FiniteHorizonMdp& mdp;
    const RiskFamily& family;
    const std::vector<double>& theta;
    const XGrid& grid;
    bool lattice;
    std::vector<std::vector<double>> nodes;              // [t][xi]
    std::vector<std::vector<std::vector<int>>> cstep;    // lattice: [t][s][a] -> cost in 1/K units

    DpWorkspace(const FiniteHorizonMdp& m, const RiskFamily& fam, const std::vector<double>& th,
                const XGrid& g)
        : mdp(m), family(fam), theta(th), grid(g), lattice(g.mode == XGrid::Mode::Lattice) {
        g.validate_for(m);
        nodes.resize(m.horizon + 1);
        for (int t = 0; t <= m.horizon; ++t) nodes[t] = g.nodes(t);
        if (lattice) {
            cstep.resize(m.horizon + 1);
            for (int t = 0; t <= m.horizon; ++t) {
                cstep[t].resize(m.num_states[t]);
                for (int s = 0; s < m.num_states[t]; ++s) {
                    cstep[t][s].resize(m.num_actions[t]);
                    for (int a = 0; a < m.num_actions[t]; ++a)
                        cstep[t][s][a] = static_cast<int>(std::llround(m.costs[t][s][a] * g.lattice_k));
                }
            }
        }
    }

    // One-step lookahead value of action a at node (t, s, xi), given the
    // already-built stage-(t+1) slice. Shared verbatim by optimization and
    // evaluation so the greedy policy re-evaluates to bit-identical values.
    double q_value(int t, int s, int xi, int a,
                   const std::vector<std::vector<double>>& next_slice) const {
        const double x = nodes[t][xi];
        const double c = mdp.costs[t][s][a];
        double q = eval_f_raw(family, theta, x + c) - eval_f_raw(family, theta, x);
        if (t < mdp.horizon) {
            const auto& row = mdp.kernels[t][s][a];
            double cont = 0.0;
            if (lattice) {
                const int xj = xi + cstep[t][s][a];
                for (std::size_t sn = 0; sn < row.size(); ++sn)
                    if (row[sn] != 0.0) cont += row[sn] * next_slice[sn][xj];
            } else {
                const double xnext = x + c;
                for (std::size_t sn = 0; sn < row.size(); ++sn)
                    if (row[sn] != 0.0)
                        cont += row[sn] * interp_linear(nodes[t + 1], next_slice[sn], xnext);
            }
            q += cont;
        }
        return q;
    }
};

}  // namespace detail

struct DpResult {
    ValueTable table;
    AugPolicy greedy;
};

/// Optimal cost-to-go tables of the augmented problem at a fixed theta, plus
/// the greedy policy (argmin ties broken by lowest action index).
inline DpResult dp_optimize(const FiniteHorizonMdp& mdp, const RiskFamily& family,
                            const std::vector<double>& theta, const XGrid& grid) {
    mdp.validate();
    detail::DpWorkspace ws(mdp, family, theta, grid);
    const int T = mdp.horizon;

    DpResult out;
    out.table.values.resize(T + 1);
    out.table.xnodes = ws.nodes;
    out.greedy.deterministic = true;
    out.greedy.action.resize(T + 1);
    out.greedy.xnodes = ws.nodes;

    std::vector<std::vector<double>> next_slice;
    for (int t = T; t >= 0; --t) {
        const int ns = mdp.num_states[t];
        const int nx = static_cast<int>(ws.nodes[t].size());
        std::vector<std::vector<double>> slice(ns, std::vector<double>(nx));
        out.greedy.action[t].assign(ns, std::vector<int>(nx, 0));
        for (int s = 0; s < ns; ++s) {
            for (int xi = 0; xi < nx; ++xi) {
                double best = std::numeric_limits<double>::infinity();
                int best_a = 0;
                for (int a = 0; a < mdp.num_actions[t]; ++a) {
                    const double q = ws.q_value(t, s, xi, a, next_slice);
                    if (q < best) {
                        best = q;
                        best_a = a;
                    }
                }
                if (!std::isfinite(best))
                    throw numeric_error("dp_optimize: non-finite value at stage " + std::to_string(t) +
                                        ", state " + std::to_string(s) + ", x-node " + std::to_string(xi));
                slice[s][xi] = best;
                out.greedy.action[t][s][xi] = best_a;
            }
        }
        out.table.values[t] = slice;
        next_slice = std::move(slice);
    }
    return out;
}

/// Policy-evaluation tables for a policy defined on every (s, x-node) pair.
inline ValueTable dp_evaluate(const FiniteHorizonMdp& mdp, const AugPolicy& policy,
                              const RiskFamily& family, const std::vector<double>& theta,
                              const XGrid& grid) {
    mdp.validate();
    detail::DpWorkspace ws(mdp, family, theta, grid);
    const int T = mdp.horizon;
    if (policy.stages() != T + 1) throw config_error("dp_evaluate: policy stage count mismatch");

    ValueTable table;
    table.values.resize(T + 1);
    table.xnodes = ws.nodes;

    std::vector<std::vector<double>> next_slice;
    for (int t = T; t >= 0; --t) {
        const int ns = mdp.num_states[t];
        const int nx = static_cast<int>(ws.nodes[t].size());
        if (policy.deterministic) {
            if (static_cast<int>(policy.action[t].size()) != ns ||
                static_cast<int>(policy.action[t][0].size()) != nx)
                throw config_error("dp_evaluate: policy not defined on the (s, x-node) grid");
        } else {
            if (static_cast<int>(policy.probs[t].size()) != ns ||
                static_cast<int>(policy.probs[t][0].size()) != nx)
                throw config_error("dp_evaluate: policy not defined on the (s, x-node) grid");
        }
        std::vector<std::vector<double>> slice(ns, std::vector<double>(nx));
        for (int s = 0; s < ns; ++s) {
            for (int xi = 0; xi < nx; ++xi) {
                double v = 0.0;
                if (policy.deterministic) {
                    const int a = policy.action[t][s][xi];
                    if (a < 0 || a >= mdp.num_actions[t])
                        throw config_error("dp_evaluate: invalid action index in policy");
                    v = ws.q_value(t, s, xi, a, next_slice);
                } else {
                    const auto& dist = policy.probs[t][s][xi];
                    if (static_cast<int>(dist.size()) != mdp.num_actions[t])
                        throw config_error("dp_evaluate: policy distribution shape mismatch");
                    for (int a = 0; a < mdp.num_actions[t]; ++a)
                        if (dist[a] != 0.0) v += dist[a] * ws.q_value(t, s, xi, a, next_slice);
                }
                if (!std::isfinite(v))
                    throw numeric_error("dp_evaluate: non-finite value at stage " + std::to_string(t) +
                                        ", state " + std::to_string(s) + ", x-node " + std::to_string(xi));
                slice[s][xi] = v;
            }
        }
        table.values[t] = slice;
        next_slice = slice;
    }
    return table;
}

// ---------------------------------------------------------------------------
// Outer minimization over the theta grid.
// ---------------------------------------------------------------------------

struct OptimalRiskResult {
    double risk = 0.0;
    std::vector<double> theta_star;
    AugPolicy policy;
};

struct PolicyRiskResult {
    double risk = 0.0;
    std::vector<double> theta_star;
};

/// min over the theta grid of  Vtilde_0^theta(s0, 0) + f_theta(0), together
/// with the attaining theta and its greedy policy.
inline OptimalRiskResult optimal_risk(const FiniteHorizonMdp& mdp, const RiskFamily& family,
                                      const ThetaGrid& theta_grid, int s0, const XGrid& grid) {
    if (theta_grid.size() == 0) throw config_error("optimal_risk: empty theta grid");
    if (s0 < 0 || s0 >= mdp.num_states.at(0)) throw config_error("optimal_risk: bad initial state");
    OptimalRiskResult best;
    best.risk = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < theta_grid.size(); ++i) {
        const auto theta = theta_grid.point(i);
        auto res = dp_optimize(mdp, family, theta, grid);
        const double risk = res.table.values[0][s0][0] + detail::eval_f_raw(family, theta, 0.0);
        if (risk < best.risk) {
            best.risk = risk;
            best.theta_star = theta;
            best.policy = std::move(res.greedy);
        }
    }
    return best;
}

/// min over the theta grid of  Vtilde_0^{pi,theta}(s0, 0) + f_theta(0).
inline PolicyRiskResult policy_risk(const FiniteHorizonMdp& mdp, const AugPolicy& policy,
                                    const RiskFamily& family, const ThetaGrid& theta_grid, int s0,
                                    const XGrid& grid) {
    if (theta_grid.size() == 0) throw config_error("policy_risk: empty theta grid");
    if (s0 < 0 || s0 >= mdp.num_states.at(0)) throw config_error("policy_risk: bad initial state");
    PolicyRiskResult best;
    best.risk = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < theta_grid.size(); ++i) {
        const auto theta = theta_grid.point(i);
        const auto table = dp_evaluate(mdp, policy, family, theta, grid);
        const double risk = table.values[0][s0][0] + detail::eval_f_raw(family, theta, 0.0);
        if (risk < best.risk) {
            best.risk = risk;
            best.theta_star = theta;
        }
    }
    return best;
}

}  // namespace riskdp

#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "riskdp/errors.hpp"
#include "riskdp/mdp.hpp"
#include "riskdp/risk.hpp"

namespace riskdp {

// ---------------------------------------------------------------------------
// Discounted infinite-horizon MDP and its T-stage approximation: same state,
// action sets and kernel at every stage, stage-t cost gamma^t * c. The
// truncation error of the risk is at most L_C * gamma^T / (1 - gamma).
// ---------------------------------------------------------------------------

struct InfiniteMdp {
    int n_states = 0;
    int n_actions = 0;
    std::vector<std::vector<std::vector<double>>> kernel;  // [s][a][s']
    std::vector<std::vector<double>> cost;                 // [s][a] in [0,1]
    double gamma = 0.9;

    void validate() const {
        if (n_states < 1 || n_actions < 1) throw config_error("InfiniteMdp: empty state/action set");
        if (!(gamma >= 0.0 && gamma < 1.0))
            throw config_error("InfiniteMdp: discount factor must lie in [0,1)");
        if (static_cast<int>(kernel.size()) != n_states ||
            static_cast<int>(cost.size()) != n_states)
            throw config_error("InfiniteMdp: table shape mismatch");
        for (int s = 0; s < n_states; ++s) {
            if (static_cast<int>(kernel[s].size()) != n_actions ||
                static_cast<int>(cost[s].size()) != n_actions)
                throw config_error("InfiniteMdp: table shape mismatch");
            for (double c : cost[s])
                if (!(c >= 0.0 && c <= 1.0)) throw config_error("InfiniteMdp: costs must lie in [0,1]");
            for (const auto& row : kernel[s]) {
                if (static_cast<int>(row.size()) != n_states)
                    throw config_error("InfiniteMdp: kernel row length mismatch");
                double sum = 0.0;
                for (double p : row) {
                    if (p < 0.0) throw config_error("InfiniteMdp: negative probability");
                    sum += p;
                }
                if (std::abs(sum - 1.0) > 1e-12) throw config_error("InfiniteMdp: kernel row not stochastic");
            }
        }
    }
};

struct StationaryPolicy {
    std::vector<std::vector<double>> probs;  // [s][a]

    void validate_for(const InfiniteMdp& m) const {
        if (static_cast<int>(probs.size()) != m.n_states)
            throw config_error("StationaryPolicy: state count mismatch");
        for (const auto& row : probs) {
            if (static_cast<int>(row.size()) != m.n_actions)
                throw config_error("StationaryPolicy: action count mismatch");
            double sum = 0.0;
            for (double p : row) sum += p;
            if (std::abs(sum - 1.0) > 1e-12) throw config_error("StationaryPolicy: weights must sum to 1");
        }
    }

    static StationaryPolicy uniform(const InfiniteMdp& m) {
        StationaryPolicy p;
        p.probs.assign(m.n_states, std::vector<double>(m.n_actions, 1.0 / m.n_actions));
        return p;
    }

    static StationaryPolicy pure(const InfiniteMdp& m, const std::vector<int>& actions) {
        StationaryPolicy p;
        p.probs.assign(m.n_states, std::vector<double>(m.n_actions, 0.0));
        for (int s = 0; s < m.n_states; ++s) p.probs[s].at(actions.at(s)) = 1.0;
        return p;
    }
};

struct TruncationPlan {
    int horizon = 1;
    double epsilon_trunc = 0.0;
};

/// T-stage approximation with stage costs gamma^t * c.
inline FiniteHorizonMdp t_stage_approximation(const InfiniteMdp& inf, int T) {
    inf.validate();
    if (T < 1) throw config_error("t_stage_approximation: horizon must be >= 1");
    FiniteHorizonMdp m;
    m.horizon = T;
    m.num_states.assign(T + 1, inf.n_states);
    m.num_actions.assign(T + 1, inf.n_actions);
    m.kernels.assign(T, inf.kernel);
    m.costs.resize(T + 1);
    double scale = 1.0;
    for (int t = 0; t <= T; ++t) {
        m.costs[t].resize(inf.n_states);
        for (int s = 0; s < inf.n_states; ++s) {
            m.costs[t][s].resize(inf.n_actions);
            for (int a = 0; a < inf.n_actions; ++a) m.costs[t][s][a] = scale * inf.cost[s][a];
        }
        scale *= inf.gamma;
    }
    return m;
}

/// Smallest T with L_C * gamma^T / (1-gamma) <= eps, and that approximation.
inline std::pair<FiniteHorizonMdp, TruncationPlan> truncate(const InfiniteMdp& inf, double eps,
                                                            double L_C) {
    inf.validate();
    if (!(eps > 0.0)) throw config_error("truncate: tolerance must be positive");
    if (!(L_C > 0.0)) throw config_error("truncate: L_C must be positive");
    int T = 1;
    auto tail = [&](int t) { return L_C * std::pow(inf.gamma, t) / (1.0 - inf.gamma); };
    while (tail(T) > eps) {
        ++T;
        if (T > 1000000) throw config_error("truncate: horizon exceeds 1e6; tolerance too small");
    }
    TruncationPlan plan;
    plan.horizon = T;
    plan.epsilon_trunc = tail(T);
    return {t_stage_approximation(inf, T), plan};
}

/// Uniform x-grid whose stage ranges follow the accumulated discounted cost,
/// x_t <= (1 - gamma^t) / (1 - gamma).
inline XGrid truncation_xgrid(const InfiniteMdp& inf, int T, double h) {
    XGrid g = XGrid::uniform(h);
    g.stage_hi.resize(T + 1);
    double acc = 0.0, scale = 1.0;
    for (int t = 0; t <= T; ++t) {
        g.stage_hi[t] = acc;
        acc += scale;
        scale *= inf.gamma;
    }
    return g;
}

/// Optimal risk of the T-stage approximation at the given x-resolution.
inline OptimalRiskResult risk_at_horizon(const InfiniteMdp& inf, const RiskFamily& family,
                                         const ThetaGrid& theta_grid, int s0, int T, double h) {
    const auto approx = t_stage_approximation(inf, T);
    return optimal_risk(approx, family, theta_grid, s0, truncation_xgrid(inf, T, h));
}

// ---------------------------------------------------------------------------
// Fixed-point operator residuals. The solve path is truncation + DP; these
// instruments certify that the truncated tables are near-fixed-points of the
// scaled operators. Tables hold V(s, x, theta) on a rectangular window; the
// operator reads the table at (x + c)/gamma and theta/gamma, extrapolating
// linearly (and flagging it) outside the window.
// ---------------------------------------------------------------------------

namespace detail {

// segment locate allowing out-of-range weights (linear extrapolation)
inline void locate_extrap(const std::vector<double>& nodes, double q, std::size_t& seg, double& w,
                          bool& outside) {
    const std::size_t n = nodes.size();
    if (n == 1) {
        seg = 0;
        w = 0.0;
        outside = outside || std::abs(q - nodes[0]) > 1e-12;
        return;
    }
    std::size_t hi = static_cast<std::size_t>(
        std::upper_bound(nodes.begin(), nodes.end(), q) - nodes.begin());
    hi = std::clamp<std::size_t>(hi, 1, n - 1);
    seg = hi - 1;
    w = (q - nodes[seg]) / (nodes[seg + 1] - nodes[seg]);
    if (w < -1e-12 || w > 1.0 + 1e-12) outside = true;
}

}  // namespace detail

struct HorizonTable {
    std::vector<double> xnodes;                    // uniform window
    std::vector<std::vector<double>> theta_axes;   // one axis per theta component
    // values[s][xi][ti], ti flattened over theta axes (axis 0 fastest)
    std::vector<std::vector<std::vector<double>>> values;
    int truncation_horizon = 0;

    std::size_t theta_count() const {
        std::size_t n = 1;
        for (const auto& ax : theta_axes) n *= ax.size();
        return n;
    }

    std::vector<double> theta_at(std::size_t ti) const {
        std::vector<double> th(theta_axes.size());
        for (std::size_t k = 0; k < theta_axes.size(); ++k) {
            th[k] = theta_axes[k][ti % theta_axes[k].size()];
            ti /= theta_axes[k].size();
        }
        return th;
    }

    /// Multilinear lookup in (x, theta) with linear extrapolation outside the
    /// window; sets `outside` when any axis extrapolated.
    double value(int s, double x, const std::vector<double>& theta, bool& outside) const {
        std::size_t xseg;
        double xw;
        detail::locate_extrap(xnodes, x, xseg, xw, outside);
        std::vector<std::size_t> seg(theta_axes.size());
        std::vector<double> w(theta_axes.size());
        for (std::size_t k = 0; k < theta_axes.size(); ++k)
            detail::locate_extrap(theta_axes[k], theta[k], seg[k], w[k], outside);

        // iterate over the 2^(1+d) corners of the cell
        const std::size_t d = theta_axes.size();
        double acc = 0.0;
        for (std::size_t corner = 0; corner < (1u << (d + 1)); ++corner) {
            double weight = (corner & 1u) ? xw : 1.0 - xw;
            const std::size_t xi = xseg + (corner & 1u ? 1 : 0);
            std::size_t ti = 0, stride = 1;
            for (std::size_t k = 0; k < d; ++k) {
                const bool hi = (corner >> (k + 1)) & 1u;
                weight *= hi ? w[k] : 1.0 - w[k];
                std::size_t idx = seg[k] + (hi ? 1 : 0);
                if (theta_axes[k].size() == 1) idx = 0;
                ti += idx * stride;
                stride *= theta_axes[k].size();
            }
            const std::size_t xidx = (xnodes.size() == 1) ? 0 : xi;
            acc += weight * values[s][xidx][ti];
        }
        return acc;
    }
};

/// Evenly spaced window nodes, inclusive of both endpoints.
inline std::vector<double> window_nodes(double lo, double hi, int count) {
    if (count < 1 || !(hi >= lo)) throw config_error("window_nodes: bad window");
    std::vector<double> out;
    if (count == 1) return {0.5 * (lo + hi)};
    out.reserve(count);
    for (int i = 0; i < count; ++i) out.push_back(lo + (hi - lo) * i / (count - 1));
    return out;
}

namespace detail {

inline void require_scaling_family(const InfiniteMdp& inf, const RiskFamily& family,
                                   const std::vector<std::vector<double>>& theta_axes) {
    if (!family.global_lipschitz())
        throw unsupported_family_error(
            "horizon: family has no global Lipschitz bound; use a truncated dual");
    // sampled scaling check at a few representative parameter points
    std::vector<double> theta(theta_axes.size());
    for (std::size_t k = 0; k < theta_axes.size(); ++k) theta[k] = theta_axes[k][theta_axes[k].size() / 2];
    if (theta.empty()) theta = {0.0};
    const double residual =
        check_scaling(family, theta, std::max(inf.gamma, 0.05), {0.0, 0.3, 0.7, 1.3, 2.4});
    if (residual > 1e-9)
        throw unsupported_family_error("horizon: scaling residual " + std::to_string(residual) +
                                       " exceeds 1e-9");
}

// Backward recursion for the T-stage approximation on an extended x-grid.
// mode: 0 = policy average, 1 = min over actions.
inline HorizonTable build_truncated_table(const InfiniteMdp& inf, const StationaryPolicy* pol,
                                          const RiskFamily& family, int T,
                                          const std::vector<double>& xnodes,
                                          const std::vector<std::vector<double>>& theta_axes,
                                          int mode) {
    inf.validate();
    if (pol) pol->validate_for(inf);
    if (xnodes.size() < 2) throw config_error("horizon table: need at least two x-nodes");

    // extend the window upward so x + sum_t gamma^t c stays on-grid
    const double h = xnodes[1] - xnodes[0];
    std::vector<double> ext = xnodes;
    const double reach = xnodes.back() + 1.0 / (1.0 - inf.gamma) + h;
    while (ext.back() < reach) ext.push_back(ext.back() + h);

    HorizonTable table;
    table.xnodes = xnodes;
    table.theta_axes = theta_axes;
    table.truncation_horizon = T;
    const std::size_t ntheta = table.theta_count();
    table.values.assign(inf.n_states,
                        std::vector<std::vector<double>>(xnodes.size(), std::vector<double>(ntheta)));

    for (std::size_t ti = 0; ti < ntheta; ++ti) {
        const auto theta = table.theta_at(ti);
        std::vector<std::vector<double>> next(inf.n_states, std::vector<double>(ext.size(), 0.0));
        std::vector<std::vector<double>> cur = next;
        for (int t = T; t >= 0; --t) {
            const double scale = std::pow(inf.gamma, t);
            for (int s = 0; s < inf.n_states; ++s) {
                for (std::size_t xi = 0; xi < ext.size(); ++xi) {
                    const double x = ext[xi];
                    double agg = (mode == 1) ? std::numeric_limits<double>::infinity() : 0.0;
                    for (int a = 0; a < inf.n_actions; ++a) {
                        const double stage = scale * inf.cost[s][a];
                        double q = eval_f_raw(family, theta, x + stage) - eval_f_raw(family, theta, x);
                        if (t < T) {
                            double cont = 0.0;
                            for (int sn = 0; sn < inf.n_states; ++sn)
                                if (inf.kernel[s][a][sn] != 0.0)
                                    cont += inf.kernel[s][a][sn] *
                                            interp_linear(ext, next[sn], x + stage);
                            q += cont;
                        }
                        if (mode == 1) {
                            agg = std::min(agg, q);
                        } else {
                            agg += pol->probs[s][a] * q;
                        }
                    }
                    cur[s][xi] = agg;
                }
            }
            std::swap(cur, next);
        }
        for (int s = 0; s < inf.n_states; ++s)
            for (std::size_t xi = 0; xi < xnodes.size(); ++xi)
                table.values[s][xi][ti] = interp_linear(ext, next[s], xnodes[xi]);
    }
    return table;
}

}  // namespace detail

/// Value table of a stationary policy in the T-stage approximation, as a
/// function of the starting accumulated cost x and the parameter theta.
inline HorizonTable truncated_eval_table(const InfiniteMdp& inf, const StationaryPolicy& pol,
                                         const RiskFamily& family, int T,
                                         const std::vector<double>& xnodes,
                                         const std::vector<std::vector<double>>& theta_axes) {
    return detail::build_truncated_table(inf, &pol, family, T, xnodes, theta_axes, 0);
}

/// Optimal value table of the T-stage approximation.
inline HorizonTable truncated_opt_table(const InfiniteMdp& inf, const RiskFamily& family, int T,
                                        const std::vector<double>& xnodes,
                                        const std::vector<std::vector<double>>& theta_axes) {
    return detail::build_truncated_table(inf, nullptr, family, T, xnodes, theta_axes, 1);
}

struct ResidualReport {
    double max_residual = 0.0;
    std::size_t evaluated = 0;
    std::size_t extrapolations = 0;

    double extrapolated_fraction() const {
        return evaluated ? static_cast<double>(extrapolations) / evaluated : 0.0;
    }
};

/// Scan restriction: residuals are reported only on nodes inside the window.
struct ScanWindow {
    double x_lo = -std::numeric_limits<double>::infinity();
    double x_hi = std::numeric_limits<double>::infinity();
    std::vector<std::array<double, 2>> theta;  // optional per-axis bounds
};

namespace detail {

template <typename Body>
ResidualReport scan_table(const HorizonTable& table, const ScanWindow* window, Body&& body) {
    ResidualReport rep;
    for (std::size_t s = 0; s < table.values.size(); ++s) {
        for (std::size_t xi = 0; xi < table.xnodes.size(); ++xi) {
            const double x = table.xnodes[xi];
            if (window && (x < window->x_lo - 1e-12 || x > window->x_hi + 1e-12)) continue;
            for (std::size_t ti = 0; ti < table.theta_count(); ++ti) {
                const auto theta = table.theta_at(ti);
                if (window && !window->theta.empty()) {
                    bool ok = true;
                    for (std::size_t k = 0; k < theta.size(); ++k)
                        if (theta[k] < window->theta[k][0] - 1e-12 ||
                            theta[k] > window->theta[k][1] + 1e-12)
                            ok = false;
                    if (!ok) continue;
                }
                bool outside = false;
                const double applied = body(static_cast<int>(s), x, theta, ti, outside);
                const double diff = std::abs(applied - table.values[s][xi][ti]);
                rep.max_residual = std::max(rep.max_residual, diff);
                ++rep.evaluated;
                if (outside) ++rep.extrapolations;
            }
        }
    }
    return rep;
}

}  // namespace detail

/// Max-norm residual of the gamma-scaled evaluation operator on the table:
/// the one-step image averages f-increments over the policy and reads the
/// table at ((x + c)/gamma, theta/gamma).
inline ResidualReport bellman_residual_eval(const InfiniteMdp& inf, const StationaryPolicy& pol,
                                            const RiskFamily& family, const HorizonTable& table,
                                            const ScanWindow* window = nullptr) {
    inf.validate();
    pol.validate_for(inf);
    detail::require_scaling_family(inf, family, table.theta_axes);
    return detail::scan_table(table, window, [&](int s, double x, const std::vector<double>& theta,
                                                 std::size_t, bool& outside) {
        std::vector<double> scaled(theta.size());
        for (std::size_t k = 0; k < theta.size(); ++k) scaled[k] = theta[k] / inf.gamma;
        double acc = 0.0;
        for (int a = 0; a < inf.n_actions; ++a) {
            if (pol.probs[s][a] == 0.0) continue;
            const double x1 = x + inf.cost[s][a];
            double q = detail::eval_f_raw(family, theta, x1) - detail::eval_f_raw(family, theta, x);
            double cont = 0.0;
            for (int sn = 0; sn < inf.n_states; ++sn)
                if (inf.kernel[s][a][sn] != 0.0)
                    cont += inf.kernel[s][a][sn] * table.value(sn, x1 / inf.gamma, scaled, outside);
            acc += pol.probs[s][a] * (q + inf.gamma * cont);
        }
        return acc;
    });
}

/// Max-norm residual of the gamma-scaled optimality operator (min over actions).
inline ResidualReport bellman_residual_opt(const InfiniteMdp& inf, const RiskFamily& family,
                                           const HorizonTable& table,
                                           const ScanWindow* window = nullptr) {
    inf.validate();
    detail::require_scaling_family(inf, family, table.theta_axes);
    return detail::scan_table(table, window, [&](int s, double x, const std::vector<double>& theta,
                                                 std::size_t, bool& outside) {
        std::vector<double> scaled(theta.size());
        for (std::size_t k = 0; k < theta.size(); ++k) scaled[k] = theta[k] / inf.gamma;
        double best = std::numeric_limits<double>::infinity();
        for (int a = 0; a < inf.n_actions; ++a) {
            const double x1 = x + inf.cost[s][a];
            double q = detail::eval_f_raw(family, theta, x1) - detail::eval_f_raw(family, theta, x);
            double cont = 0.0;
            for (int sn = 0; sn < inf.n_states; ++sn)
                if (inf.kernel[s][a][sn] != 0.0)
                    cont += inf.kernel[s][a][sn] * table.value(sn, x1 / inf.gamma, scaled, outside);
            best = std::min(best, q + inf.gamma * cont);
        }
        return best;
    });
}

// ---------------------------------------------------------------------------
// CVaR-specific operator with a single augmented variable: the parameter
// stays fixed and the table argument is shifted by (gamma - 1) * theta.
// ---------------------------------------------------------------------------

struct CvarWindowTable {
    std::vector<double> xnodes;
    std::vector<std::vector<double>> values;  // [s][xi]
    int truncation_horizon = 0;

    double value(int s, double x, bool& outside) const {
        std::size_t seg;
        double w;
        detail::locate_extrap(xnodes, x, seg, w, outside);
        if (xnodes.size() == 1) return values[s][0];
        return values[s][seg] + w * (values[s][seg + 1] - values[s][seg]);
    }
};

/// Value table of a stationary policy in the T-stage approximation for a
/// fixed CVaR parameter, over a window of starting accumulated costs.
inline CvarWindowTable truncated_cvar_table(const InfiniteMdp& inf, const StationaryPolicy& pol,
                                            double alpha, double theta, int T,
                                            const std::vector<double>& xnodes) {
    RiskFamily fam = RiskFamily::cvar(alpha, std::max(1.0, std::abs(theta) + 1.0));
    const auto full = detail::build_truncated_table(inf, &pol, fam, T, xnodes, {{theta}}, 0);
    CvarWindowTable out;
    out.xnodes = full.xnodes;
    out.truncation_horizon = T;
    out.values.resize(full.values.size());
    for (std::size_t s = 0; s < full.values.size(); ++s) {
        out.values[s].resize(full.xnodes.size());
        for (std::size_t xi = 0; xi < full.xnodes.size(); ++xi)
            out.values[s][xi] = full.values[s][xi][0];
    }
    return out;
}

/// Residual of the single-augmented-variable CVaR operator.
inline ResidualReport cvar_operator_residual(const InfiniteMdp& inf, const StationaryPolicy& pol,
                                             double alpha, double theta,
                                             const CvarWindowTable& table,
                                             double x_scan_lo = -std::numeric_limits<double>::infinity(),
                                             double x_scan_hi = std::numeric_limits<double>::infinity()) {
    inf.validate();
    pol.validate_for(inf);
    if (!(alpha > 0.0 && alpha <= 1.0))
        throw unsupported_family_error("cvar_operator_residual: alpha must be in (0,1]");
    const RiskFamily fam = RiskFamily::cvar(alpha, std::max(1.0, std::abs(theta) + 1.0));
    const std::vector<double> th = {theta};
    const double gamma = inf.gamma;

    ResidualReport rep;
    for (std::size_t s = 0; s < table.values.size(); ++s) {
        for (std::size_t xi = 0; xi < table.xnodes.size(); ++xi) {
            const double x = table.xnodes[xi];
            if (x < x_scan_lo - 1e-12 || x > x_scan_hi + 1e-12) continue;
            bool outside = false;
            double acc = (1.0 - gamma) * theta - detail::eval_f_raw(fam, th, x);
            for (int a = 0; a < inf.n_actions; ++a) {
                if (pol.probs[s][static_cast<int>(a)] == 0.0) continue;
                const double x1 = x + inf.cost[s][a];
                const double shifted = (x1 + (gamma - 1.0) * theta) / gamma;
                double cont = 0.0;
                for (int sn = 0; sn < inf.n_states; ++sn)
                    if (inf.kernel[s][a][sn] != 0.0)
                        cont += inf.kernel[s][a][sn] * table.value(sn, shifted, outside);
                acc += pol.probs[s][a] *
                       (gamma * cont + gamma * detail::eval_f_raw(fam, th, shifted));
            }
            const double diff = std::abs(acc - table.values[s][xi]);
            rep.max_residual = std::max(rep.max_residual, diff);
            ++rep.evaluated;
            if (outside) ++rep.extrapolations;
        }
    }
    return rep;
}

}  // namespace riskdp

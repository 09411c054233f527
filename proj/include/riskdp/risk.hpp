#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "riskdp/errors.hpp"
#include "riskdp/golden.hpp"

namespace riskdp {

inline constexpr double kLambdaMin = 1e-4;

// ---------------------------------------------------------------------------
// Finite distribution of a real random variable: the oracle's currency.
// ---------------------------------------------------------------------------

struct DiscreteDist {
    std::vector<std::pair<double, double>> atoms;  // (value, probability)

    void validate() const {
        if (atoms.empty()) throw std::invalid_argument("DiscreteDist: empty distribution");
        double total = 0.0;
        for (const auto& [v, p] : atoms) {
            if (!std::isfinite(v)) throw std::invalid_argument("DiscreteDist: non-finite value");
            if (p < 0.0) throw std::invalid_argument("DiscreteDist: negative probability");
            total += p;
        }
        if (std::abs(total - 1.0) > 1e-12)
            throw std::invalid_argument("DiscreteDist: probabilities sum to " + std::to_string(total));
    }

    double mean() const {
        double m = 0.0;
        for (const auto& [v, p] : atoms) m += v * p;
        return m;
    }

    double min_value() const {
        double m = std::numeric_limits<double>::infinity();
        for (const auto& [v, p] : atoms) m = std::min(m, v);
        return m;
    }

    double max_value() const {
        double m = -std::numeric_limits<double>::infinity();
        for (const auto& [v, p] : atoms) m = std::max(m, v);
        return m;
    }
};

// ---------------------------------------------------------------------------
// Divergence generators. Built-ins are convex, minimized at 1 with value 0,
// take the value 1 at 0, and are +inf on the negative axis.
// ---------------------------------------------------------------------------

enum class PhiId { KL, ChiSquared, TotalVariation, Custom };

struct PhiSpec {
    PhiId id = PhiId::KL;
    std::function<double(double)> fn;  // used for Custom only
    bool superlinear = true;           // lim phi(w)/w = +inf

    double operator()(double w) const {
        if (w < 0.0) return std::numeric_limits<double>::infinity();
        switch (id) {
            case PhiId::KL:
                if (w == 0.0) return 1.0;
                return w * std::log(w) - w + 1.0;
            case PhiId::ChiSquared:
                return (w - 1.0) * (w - 1.0);
            case PhiId::TotalVariation:
                return std::abs(w - 1.0);
            case PhiId::Custom:
                return fn(w);
        }
        return std::numeric_limits<double>::infinity();
    }

    const char* name() const {
        switch (id) {
            case PhiId::KL: return "kl";
            case PhiId::ChiSquared: return "chi2";
            case PhiId::TotalVariation: return "tv";
            case PhiId::Custom: return "custom";
        }
        return "?";
    }

    static PhiSpec kl() { return PhiSpec{PhiId::KL, nullptr, true}; }
    static PhiSpec chi_squared() { return PhiSpec{PhiId::ChiSquared, nullptr, true}; }
    static PhiSpec total_variation() { return PhiSpec{PhiId::TotalVariation, nullptr, false}; }
    static PhiSpec custom(std::function<double(double)> f, bool superlinear) {
        return PhiSpec{PhiId::Custom, std::move(f), superlinear};
    }
};

/// (lambda * phi_L)^*(y) = sup_{0 <= w <= L} { w*y - lambda*phi(w) } where
/// phi_L caps the density at L. Closed forms for the built-in divergences
/// (stationary point clamped to [0, L]); golden-section for Custom. The
/// result is convex and L-Lipschitz in y, and never below -lambda*phi(0).
inline double conjugate_truncated(const PhiSpec& phi, double lambda, double L, double y) {
    if (!(lambda >= kLambdaMin))
        throw std::domain_error("conjugate_truncated: lambda below " + std::to_string(kLambdaMin));
    if (!(L > 0.0) || !std::isfinite(L))
        throw std::domain_error("conjugate_truncated: requires finite L > 0");
    if (!std::isfinite(y)) throw std::invalid_argument("conjugate_truncated: non-finite argument");

    auto obj = [&](double w) { return w * y - lambda * phi(w); };
    switch (phi.id) {
        case PhiId::KL: {
            // stationary point w* = exp(y/lambda); avoid overflow before clamping
            const double t = y / lambda;
            const double w = (t >= std::log(L)) ? L : std::max(0.0, std::exp(t));
            return obj(w);
        }
        case PhiId::ChiSquared: {
            const double w = std::clamp(1.0 + y / (2.0 * lambda), 0.0, L);
            return obj(w);
        }
        case PhiId::TotalVariation:
            // piecewise-linear objective: max over the kinks {0, 1, L}
            return std::max({obj(0.0), obj(1.0), obj(L)});
        case PhiId::Custom: {
            auto [w, v] = golden_max(obj, 0.0, L, 1e-10);
            (void)w;
            return v;
        }
    }
    return std::numeric_limits<double>::quiet_NaN();
}

// ---------------------------------------------------------------------------
// Parameterized risk family f_theta with bounded parameter box Theta.
// ---------------------------------------------------------------------------

enum class RiskKind { CVaR, PhiDual };

struct RiskFamily {
    RiskKind kind = RiskKind::CVaR;

    // CVaR fields
    double alpha = 0.5;  // risk level in (0, 1]

    // PhiDual fields
    PhiSpec phi;
    double tau = 0.0;                                           // divergence budget
    double trunc_L = std::numeric_limits<double>::infinity();   // density cap; finite => Lipschitz dual

    std::vector<std::array<double, 2>> theta_box;  // per-axis [lo, hi]
    double lipschitz_cost = 1.0;    // L_C: Lipschitz constant of f_theta in its argument
    double lipschitz_theta = 1.0;   // L_Theta: Lipschitz constant in theta

    int theta_dim() const { return static_cast<int>(theta_box.size()); }

    double theta_radius() const {
        double sq = 0.0;
        for (const auto& ax : theta_box) {
            const double m = std::max(std::abs(ax[0]), std::abs(ax[1]));
            sq += m * m;
        }
        return std::sqrt(sq);
    }

    /// Global Lipschitz constant valid for all theta (not just the box), as
    /// required by the scaled fixed-point operators. CVaR: 1/alpha. Truncated
    /// dual: the density cap L. Untruncated duals have none.
    std::optional<double> global_lipschitz() const {
        if (kind == RiskKind::CVaR) return 1.0 / alpha;
        if (std::isfinite(trunc_L)) return trunc_L;
        return std::nullopt;
    }

    void validate() const {
        if (theta_box.empty()) throw config_error("RiskFamily: empty theta box");
        for (const auto& ax : theta_box) {
            if (!(ax[0] <= ax[1]) || !std::isfinite(ax[0]) || !std::isfinite(ax[1]))
                throw config_error("RiskFamily: bad theta box axis");
        }
        if (kind == RiskKind::CVaR) {
            if (!(alpha > 0.0 && alpha <= 1.0)) throw config_error("RiskFamily: alpha must be in (0,1]");
            if (theta_dim() != 1) throw config_error("RiskFamily: CVaR theta is scalar");
        } else {
            if (tau < 0.0) throw config_error("RiskFamily: tau must be >= 0");
            if (!(trunc_L > 1.0)) throw config_error("RiskFamily: truncation level must exceed 1");
            if (theta_dim() != 2) throw config_error("RiskFamily: phi-dual theta is (lambda, mu)");
            if (theta_box[0][0] < kLambdaMin) throw config_error("RiskFamily: lambda axis below lambda_min");
        }
    }

    /// CVaR_alpha with total costs in [0, bound]; Theta = [0, bound].
    static RiskFamily cvar(double alpha_, double total_cost_bound) {
        RiskFamily f;
        f.kind = RiskKind::CVaR;
        f.alpha = alpha_;
        f.theta_box = {{0.0, total_cost_bound}};
        f.lipschitz_cost = 1.0 / alpha_;
        f.lipschitz_theta = 1.0 / alpha_;
        f.validate();
        return f;
    }

    /// Distributionally robust functional in dual form with density cap L.
    /// Theta = [lambda_min, lambda_max] x [-B, B] with B the total-cost bound.
    static RiskFamily phi_dual(PhiSpec phi_, double tau_, double L, double total_cost_bound,
                               double lambda_min = kLambdaMin, double lambda_max = 10.0) {
        RiskFamily f;
        f.kind = RiskKind::PhiDual;
        f.phi = std::move(phi_);
        f.tau = tau_;
        f.trunc_L = L;
        f.theta_box = {{lambda_min, lambda_max}, {-total_cost_bound, total_cost_bound}};
        f.lipschitz_cost = L;
        // gradient bounds: |df/dlambda| <= tau + max phi on [0,L] (endpoints, by convexity),
        // |df/dmu| <= max(1, L-1).
        const double max_phi = std::max(f.phi(0.0), f.phi(L));
        f.lipschitz_theta = std::hypot(tau_ + max_phi, std::max(1.0, L - 1.0));
        f.validate();
        return f;
    }

    /// Dual family with no density cap. Constructible for comparison purposes,
    /// but rejected by every operation that needs the scaling structure.
    static RiskFamily phi_dual_untruncated(PhiSpec phi_, double tau_, double total_cost_bound) {
        RiskFamily f;
        f.kind = RiskKind::PhiDual;
        f.phi = std::move(phi_);
        f.tau = tau_;
        f.trunc_L = std::numeric_limits<double>::infinity();
        f.theta_box = {{kLambdaMin, 10.0}, {-total_cost_bound, total_cost_bound}};
        f.lipschitz_cost = std::numeric_limits<double>::infinity();
        f.lipschitz_theta = std::numeric_limits<double>::infinity();
        return f;
    }
};

namespace detail {

/// f_theta(z) without the theta-box check. The scaling identity evaluates
/// f at theta/gamma, which may legitimately leave the box.
inline double eval_f_raw(const RiskFamily& family, const std::vector<double>& theta, double z) {
    if (family.kind == RiskKind::CVaR) {
        const double th = theta[0];
        return th + std::max(z - th, 0.0) / family.alpha;
    }
    const double lambda = theta[0];
    const double mu = theta[1];
    if (!std::isfinite(family.trunc_L))
        throw unsupported_family_error("eval_f: untruncated dual has no usable conjugate");
    if (!(lambda > 0.0)) throw std::domain_error("eval_f: lambda must be positive");
    // raw evaluation tolerates lambda below the box floor only down to a hard guard
    const double lam = std::max(lambda, kLambdaMin);
    return lambda * family.tau + mu + conjugate_truncated(family.phi, lam, family.trunc_L, z - mu);
}

}  // namespace detail

/// f_theta(z). theta must lie in the family's box.
inline double eval_f(const RiskFamily& family, const std::vector<double>& theta, double z) {
    if (!std::isfinite(z)) throw std::invalid_argument("eval_f: non-finite argument");
    if (static_cast<int>(theta.size()) != family.theta_dim())
        throw std::domain_error("eval_f: theta dimension mismatch");
    for (int i = 0; i < family.theta_dim(); ++i) {
        const auto& ax = family.theta_box[i];
        if (theta[i] < ax[0] - 1e-12 || theta[i] > ax[1] + 1e-12)
            throw std::domain_error("eval_f: theta outside the parameter box");
    }
    return detail::eval_f_raw(family, theta, z);
}

/// Max residual of f_theta(g*x) = g * f_{theta/g}(x) over the probe points.
/// Exact (up to conjugate tolerance) for CVaR and truncated duals.
inline double check_scaling(const RiskFamily& family, const std::vector<double>& theta, double gamma,
                            const std::vector<double>& probes) {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw std::domain_error("check_scaling: gamma must be in (0,1]");
    std::vector<double> scaled(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) scaled[i] = theta[i] / gamma;
    double worst = 0.0;
    for (double x : probes) {
        const double lhs = detail::eval_f_raw(family, theta, gamma * x);
        const double rhs = gamma * detail::eval_f_raw(family, scaled, x);
        worst = std::max(worst, std::abs(lhs - rhs));
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Theta grids and minimization of theta -> E[f_theta(X)].
// ---------------------------------------------------------------------------

struct ThetaGrid {
    std::vector<std::vector<double>> axes;

    static ThetaGrid uniform(const std::vector<std::array<double, 2>>& box, int points_per_axis = 129) {
        if (points_per_axis < 1) throw config_error("ThetaGrid: need at least one point per axis");
        ThetaGrid g;
        for (const auto& ax : box) {
            std::vector<double> nodes;
            if (points_per_axis == 1 || ax[0] == ax[1]) {
                nodes.push_back(0.5 * (ax[0] + ax[1]));
            } else {
                for (int i = 0; i < points_per_axis; ++i)
                    nodes.push_back(ax[0] + (ax[1] - ax[0]) * i / (points_per_axis - 1));
            }
            g.axes.push_back(std::move(nodes));
        }
        return g;
    }

    std::size_t size() const {
        std::size_t n = 1;
        for (const auto& ax : axes) n *= ax.size();
        return n;
    }

    std::vector<double> point(std::size_t idx) const {
        std::vector<double> p(axes.size());
        for (std::size_t k = 0; k < axes.size(); ++k) {
            p[k] = axes[k][idx % axes[k].size()];
            idx /= axes[k].size();
        }
        return p;
    }

    /// Largest spacing between adjacent nodes across all axes.
    double max_step() const {
        double s = 0.0;
        for (const auto& ax : axes)
            for (std::size_t i = 1; i < ax.size(); ++i) s = std::max(s, ax[i] - ax[i - 1]);
        return s;
    }

    double axis_step(std::size_t k) const {
        double s = 0.0;
        for (std::size_t i = 1; i < axes[k].size(); ++i) s = std::max(s, axes[k][i] - axes[k][i - 1]);
        return s;
    }
};

struct RiskValue {
    double value = 0.0;
    std::vector<double> theta_star;
};

/// min over theta of E[f_theta(X)]: grid scan followed by per-axis
/// golden-section refinement (the objective is convex in theta).
inline RiskValue risk_of_distribution(const RiskFamily& family, const DiscreteDist& dist,
                                      const ThetaGrid& grid, bool refine = true) {
    dist.validate();
    if (grid.axes.empty() || grid.size() == 0) throw config_error("risk_of_distribution: empty theta grid");
    if (static_cast<int>(grid.axes.size()) != family.theta_dim())
        throw config_error("risk_of_distribution: grid dimension mismatch");
    for (std::size_t k = 0; k < grid.axes.size(); ++k)
        for (double v : grid.axes[k])
            if (v < family.theta_box[k][0] - 1e-9 || v > family.theta_box[k][1] + 1e-9)
                throw config_error("risk_of_distribution: grid leaves the theta box");

    auto objective = [&](const std::vector<double>& th) {
        double acc = 0.0;
        for (const auto& [v, p] : dist.atoms) acc += p * detail::eval_f_raw(family, th, v);
        return acc;
    };

    RiskValue best;
    best.value = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < grid.size(); ++i) {
        auto th = grid.point(i);
        const double val = objective(th);
        if (val < best.value) {
            best.value = val;
            best.theta_star = th;
        }
    }

    if (refine) {
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t k = 0; k < grid.axes.size(); ++k) {
                const double step = grid.axis_step(k);
                if (step <= 0.0) continue;
                const double lo = std::max(family.theta_box[k][0], best.theta_star[k] - step);
                const double hi = std::min(family.theta_box[k][1], best.theta_star[k] + step);
                auto th = best.theta_star;
                auto axis_obj = [&](double t) {
                    th[k] = t;
                    return objective(th);
                };
                auto [t_star, v] = golden_min(axis_obj, lo, hi, 1e-10);
                if (v < best.value) {
                    best.value = v;
                    best.theta_star[k] = t_star;
                }
            }
        }
    }
    return best;
}

}  // namespace riskdp

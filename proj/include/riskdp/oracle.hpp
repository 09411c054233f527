#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <tuple>
#include <utility>
#include <vector>

#include "riskdp/errors.hpp"
#include "riskdp/mdp.hpp"
#include "riskdp/rational.hpp"
#include "riskdp/risk.hpp"
#include "riskdp/rng.hpp"

namespace riskdp {

inline constexpr std::size_t kOracleMaxAtoms = 100000;
inline constexpr std::size_t kOracleMaxPolicies = 1000000;

// Brute-force ground truth on tiny instances. The accumulated cost is carried
// as an exact rational so atoms merge by true equality, never by float
// comparison.

using AtomFront = std::map<std::pair<int, Rational>, double>;  // (state, x) -> prob

// ---------------------------------------------------------------------------
// Exact law of the total cost under a fixed policy.
// ---------------------------------------------------------------------------

inline DiscreteDist exact_total_cost_distribution(const FiniteHorizonMdp& mdp, const AugPolicy& policy,
                                                  int s0) {
    mdp.validate();
    if (s0 < 0 || s0 >= mdp.num_states[0])
        throw config_error("exact_total_cost_distribution: bad initial state");
    const int T = mdp.horizon;

    AtomFront front;
    front[{s0, Rational(0)}] = 1.0;
    std::map<Rational, double> totals;

    for (int t = 0; t <= T; ++t) {
        AtomFront next;
        for (const auto& [key, p] : front) {
            const auto& [s, x] = key;
            const int xi = policy.node_index(t, to_double(x));
            auto push = [&](int a, double weight) {
                if (weight == 0.0) return;
                const Rational xn = x + exact_rational(mdp.costs[t][s][a]);
                if (t == T) {
                    totals[xn] += weight;
                    return;
                }
                const auto& row = mdp.kernels[t][s][a];
                for (std::size_t sn = 0; sn < row.size(); ++sn)
                    if (row[sn] != 0.0) next[{static_cast<int>(sn), xn}] += weight * row[sn];
            };
            if (policy.deterministic) {
                push(policy.action[t][s][xi], p);
            } else {
                const auto& dist = policy.probs[t][s][xi];
                for (std::size_t a = 0; a < dist.size(); ++a) push(static_cast<int>(a), p * dist[a]);
            }
        }
        if (next.size() > kOracleMaxAtoms)
            throw instance_too_large_error("exact_total_cost_distribution: atom front exceeds cap");
        front = std::move(next);
    }

    DiscreteDist dist;
    dist.atoms.reserve(totals.size());
    for (const auto& [x, p] : totals) dist.atoms.emplace_back(to_double(x), p);
    return dist;
}

// ---------------------------------------------------------------------------
// Exhaustive minimization over deterministic (s, x)-measurable policies.
// ---------------------------------------------------------------------------

struct OracleSolution {
    double risk = std::numeric_limits<double>::infinity();
    std::vector<double> theta_star;
    // chosen action per (stage, state, exact accumulated cost)
    std::map<std::tuple<int, int, Rational>, int> policy;
};

namespace detail {

/// log2 of an upper bound on the number of enumerable policies, computed from
/// the all-action forward closure of reachable (s, x) pairs.
inline double oracle_log2_policy_bound(const FiniteHorizonMdp& mdp, int s0) {
    std::map<std::pair<int, Rational>, char> closure;
    closure[{s0, Rational(0)}] = 1;
    double log2_count = 0.0;
    for (int t = 0; t <= mdp.horizon; ++t) {
        log2_count += std::log2(static_cast<double>(mdp.num_actions[t])) * closure.size();
        std::map<std::pair<int, Rational>, char> next;
        for (const auto& [key, unused] : closure) {
            (void)unused;
            const auto& [s, x] = key;
            for (int a = 0; a < mdp.num_actions[t] && t < mdp.horizon; ++a) {
                const Rational xn = x + exact_rational(mdp.costs[t][s][a]);
                const auto& row = mdp.kernels[t][s][a];
                for (std::size_t sn = 0; sn < row.size(); ++sn)
                    if (row[sn] != 0.0) next[{static_cast<int>(sn), xn}] = 1;
            }
        }
        if (next.size() > 4000)
            throw instance_too_large_error("oracle: reachable (s,x) closure exceeds cap");
        closure = std::move(next);
    }
    return log2_count;
}

struct OracleEnumerator {
    const FiniteHorizonMdp& mdp;
    const RiskFamily& family;
    const ThetaGrid& theta_grid;
    std::size_t leaves = 0;
    OracleSolution best;
    std::map<std::tuple<int, int, Rational>, int> current;

    void leaf(const std::map<Rational, double>& totals) {
        if (++leaves > kOracleMaxPolicies)
            throw instance_too_large_error("oracle: enumerable policy count exceeds cap");
        DiscreteDist dist;
        dist.atoms.reserve(totals.size());
        for (const auto& [x, p] : totals) dist.atoms.emplace_back(to_double(x), p);
        const auto rv = risk_of_distribution(family, dist, theta_grid);
        if (rv.value < best.risk) {
            best.risk = rv.value;
            best.theta_star = rv.theta_star;
            best.policy = current;
        }
    }

    void descend(int t, const AtomFront& front, const std::map<Rational, double>& totals) {
        if (t > mdp.horizon) {
            leaf(totals);
            return;
        }
        std::vector<std::pair<int, Rational>> pairs;
        pairs.reserve(front.size());
        for (const auto& [key, p] : front) {
            (void)p;
            pairs.push_back(key);
        }
        const int na = mdp.num_actions[t];
        std::vector<int> choice(pairs.size(), 0);
        while (true) {
            // propagate this stage under the current assignment
            AtomFront next;
            std::map<Rational, double> next_totals = totals;
            for (std::size_t i = 0; i < pairs.size(); ++i) {
                const auto& [s, x] = pairs[i];
                const int a = choice[i];
                const double p = front.at(pairs[i]);
                const Rational xn = x + exact_rational(mdp.costs[t][s][a]);
                current[{t, s, x}] = a;
                if (t == mdp.horizon) {
                    next_totals[xn] += p;
                } else {
                    const auto& row = mdp.kernels[t][s][a];
                    for (std::size_t sn = 0; sn < row.size(); ++sn)
                        if (row[sn] != 0.0) next[{static_cast<int>(sn), xn}] += p * row[sn];
                }
            }
            if (next.size() > kOracleMaxAtoms)
                throw instance_too_large_error("oracle: atom front exceeds cap");
            descend(t + 1, next, next_totals);

            // odometer over the per-pair action assignment
            std::size_t k = 0;
            while (k < choice.size() && ++choice[k] == na) {
                choice[k] = 0;
                ++k;
            }
            if (k == choice.size()) break;
        }
        for (const auto& pr : pairs) current.erase({t, pr.first, pr.second});
    }
};

}  // namespace detail

/// log2 of a cheap upper bound on the number of enumerable deterministic
/// (s, x)-measurable policies; the enumerator refuses instances whose bound
/// exceeds the policy cap.
inline double oracle_enumeration_log2_bound(const FiniteHorizonMdp& mdp, int s0) {
    return detail::oracle_log2_policy_bound(mdp, s0);
}

/// Exact minimum of the risk over deterministic (s, x)-measurable policies
/// and the theta grid, by exhaustive enumeration with exact atom propagation.
inline OracleSolution oracle_optimal_risk(const FiniteHorizonMdp& mdp, const RiskFamily& family,
                                          const ThetaGrid& theta_grid, int s0) {
    mdp.validate();
    if (s0 < 0 || s0 >= mdp.num_states[0]) throw config_error("oracle_optimal_risk: bad initial state");
    if (oracle_enumeration_log2_bound(mdp, s0) > std::log2(static_cast<double>(kOracleMaxPolicies)))
        throw instance_too_large_error("oracle_optimal_risk: enumerable policy count exceeds cap");

    detail::OracleEnumerator en{mdp, family, theta_grid};
    AtomFront front;
    front[{s0, Rational(0)}] = 1.0;
    en.descend(0, front, {});
    return en.best;
}

// ---------------------------------------------------------------------------
// Closed-form CVaR: average of the worst alpha-fraction of outcomes, with the
// straddling atom fractionally weighted.
// ---------------------------------------------------------------------------

inline double cvar_closed_form(const DiscreteDist& dist, double alpha) {
    dist.validate();
    if (!(alpha > 0.0 && alpha <= 1.0)) throw std::domain_error("cvar_closed_form: alpha must be in (0,1]");
    auto atoms = dist.atoms;
    std::sort(atoms.begin(), atoms.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });
    double remaining = alpha;
    double acc = 0.0;
    for (const auto& [v, p] : atoms) {
        const double take = std::min(remaining, p);
        acc += take * v;
        remaining -= take;
        if (remaining <= 0.0) break;
    }
    return acc / alpha;
}

// ---------------------------------------------------------------------------
// Primal phi-divergence solver: a certified feasible density, hence a lower
// bound that sandwiches the dual-grid value from below.
// ---------------------------------------------------------------------------

struct PrimalPhiResult {
    double value = 0.0;
    std::vector<double> density;  // one entry per atom of the input distribution
};

namespace detail {

struct PrimalProblem {
    std::vector<double> v, p;  // filtered atoms (positive probability)
    const PhiSpec& phi;
    double tau, L;

    // reconstruct zeta_0 from the free coordinates and check feasibility
    bool assemble(const std::vector<double>& free, std::vector<double>& zeta, double slack) const {
        const std::size_t n = p.size();
        zeta.resize(n);
        double used = 0.0;
        for (std::size_t i = 1; i < n; ++i) {
            zeta[i] = free[i - 1];
            used += p[i] * zeta[i];
        }
        zeta[0] = (1.0 - used) / p[0];
        double budget = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (zeta[i] < -slack || zeta[i] > L + slack) return false;
            zeta[i] = std::clamp(zeta[i], 0.0, L);
            budget += p[i] * phi(zeta[i]);
        }
        return budget <= tau + slack;
    }

    double objective(const std::vector<double>& zeta) const {
        double acc = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) acc += p[i] * v[i] * zeta[i];
        return acc;
    }
};

}  // namespace detail

inline PrimalPhiResult primal_phi_risk(const DiscreteDist& dist, const PhiSpec& phi, double tau,
                                       double L) {
    dist.validate();
    if (tau < 0.0) throw config_error("primal_phi_risk: negative divergence budget is infeasible");
    if (!(L >= 1.0)) throw config_error("primal_phi_risk: density cap below 1 is infeasible");
    if (dist.atoms.size() > 6) throw instance_too_large_error("primal_phi_risk: more than 6 atoms");
    if (phi(1.0) > tau + 1e-12)
        throw config_error("primal_phi_risk: reference density violates the budget");

    // drop zero-probability atoms; their density entries are immaterial
    std::vector<std::size_t> index;
    detail::PrimalProblem prob{{}, {}, phi, tau, L};
    for (std::size_t i = 0; i < dist.atoms.size(); ++i) {
        if (dist.atoms[i].second > 0.0) {
            index.push_back(i);
            prob.v.push_back(dist.atoms[i].first);
            prob.p.push_back(dist.atoms[i].second);
        }
    }
    const std::size_t n = prob.p.size();
    const std::size_t nfree = n - 1;

    std::vector<double> best_free(nfree, 1.0);  // reference density
    std::vector<double> zeta;
    double best_val = -std::numeric_limits<double>::infinity();
    auto consider = [&](const std::vector<double>& free) {
        if (!prob.assemble(free, zeta, 1e-12)) return;
        const double val = prob.objective(zeta);
        if (val > best_val) {
            best_val = val;
            best_free = free;
        }
    };
    consider(best_free);

    // coarse phase: dense grid for up to 3 atoms, seeded multi-starts beyond
    std::vector<double> hi(nfree);
    for (std::size_t i = 0; i < nfree; ++i) hi[i] = std::min(L, 1.0 / prob.p[i + 1]);
    if (n == 2) {
        const int m = 4096;
        std::vector<double> free(1);
        for (int i = 0; i <= m; ++i) {
            free[0] = hi[0] * i / m;
            consider(free);
        }
    } else if (n == 3) {
        const int m = 320;
        std::vector<double> free(2);
        for (int i = 0; i <= m; ++i) {
            free[0] = hi[0] * i / m;
            for (int j = 0; j <= m; ++j) {
                free[1] = hi[1] * j / m;
                consider(free);
            }
        }
    } else if (n >= 4) {
        const CounterRng rng = CounterRng::derive(0x9d15ee5ULL, n);
        std::vector<double> free(nfree);
        for (int start = 0; start < 16; ++start) {
            for (std::size_t i = 0; i < nfree; ++i)
                free[i] = hi[i] * rng.uniform(static_cast<std::uint64_t>(start) * 16 + i);
            consider(free);
        }
    }

    // polish: pattern search. Directions must be dense enough in angle to
    // crawl along the curved budget boundary without stalling.
    if (nfree > 0) {
        std::vector<std::vector<double>> dirs;
        if (nfree == 1) {
            dirs = {{1.0}, {-1.0}};
        } else if (nfree == 2) {
            for (int k = 0; k < 32; ++k) {
                const double ang = 2.0 * M_PI * k / 32;
                dirs.push_back({std::cos(ang), std::sin(ang)});
            }
        } else {
            for (std::size_t i = 0; i < nfree; ++i) {
                std::vector<double> d(nfree, 0.0);
                d[i] = 1.0;
                dirs.push_back(d);
                d[i] = -1.0;
                dirs.push_back(d);
            }
            const CounterRng rng = CounterRng::derive(0xd12ULL, nfree);
            for (int k = 0; k < 64; ++k) {
                std::vector<double> d(nfree);
                double norm = 0.0;
                for (std::size_t i = 0; i < nfree; ++i) {
                    d[i] = 2.0 * rng.uniform(k * nfree + i) - 1.0;
                    norm += d[i] * d[i];
                }
                norm = std::sqrt(norm);
                if (norm < 1e-9) continue;
                for (auto& x : d) x /= norm;
                dirs.push_back(d);
            }
        }
        double step = L / 16.0;
        std::vector<double> cand(nfree);
        while (step > 1e-11) {
            bool improved = false;
            for (const auto& d : dirs) {
                for (std::size_t i = 0; i < nfree; ++i) cand[i] = best_free[i] + step * d[i];
                if (!prob.assemble(cand, zeta, 1e-12)) continue;
                const double val = prob.objective(zeta);
                if (val > best_val + 1e-15) {
                    best_val = val;
                    best_free = cand;
                    improved = true;
                }
            }
            if (!improved) step *= 0.5;
        }
    }

    // certify feasibility by shrinking toward the reference density if needed
    std::vector<double> final_zeta;
    prob.assemble(best_free, final_zeta, 1e-12);
    for (double t : {0.0, 1e-14, 1e-12, 1e-10, 1e-8, 1e-6}) {
        std::vector<double> shrunk(n);
        double budget = 0.0;
        bool in_box = true;
        for (std::size_t i = 0; i < n; ++i) {
            shrunk[i] = (1.0 - t) * final_zeta[i] + t;
            if (shrunk[i] < 0.0 || shrunk[i] > L) in_box = false;
            budget += prob.p[i] * phi(shrunk[i]);
        }
        if (in_box && budget <= tau) {
            final_zeta = shrunk;
            break;
        }
    }

    PrimalPhiResult out;
    out.value = prob.objective(final_zeta);
    out.density.assign(dist.atoms.size(), 1.0);
    for (std::size_t i = 0; i < n; ++i) out.density[index[i]] = final_zeta[i];
    return out;
}

}  // namespace riskdp

#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "riskdp/errors.hpp"
#include "riskdp/mdp.hpp"
#include "riskdp/rng.hpp"
#include "riskdp/soc.hpp"

namespace riskdp {

// ---------------------------------------------------------------------------
// Generative-model access: i.i.d. next-state draws for any (t, s, a), from
// counter-based streams keyed by (seed, replicate, t, s, a, draw index).
// Identical seeds give bit-identical samples in any evaluation order.
// ---------------------------------------------------------------------------

struct GenerativeMdp {
    FiniteHorizonMdp truth;
    std::uint64_t seed = 0;
};

namespace detail {

inline int inverse_cdf(const std::vector<double>& row, double u) {
    double acc = 0.0;
    for (std::size_t i = 0; i < row.size(); ++i) {
        acc += row[i];
        if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(row.size()) - 1;
}

}  // namespace detail

/// Empirical kernel from exactly n i.i.d. draws per (t, s, a); rows are
/// frequency vectors (counts / n) and costs are copied unchanged.
inline FiniteHorizonMdp build_empirical_mdp(const GenerativeMdp& model, long long n,
                                            std::uint64_t replicate = 0) {
    if (n < 1) throw config_error("build_empirical_mdp: need n >= 1");
    model.truth.validate();
    FiniteHorizonMdp out = model.truth;
    for (int t = 0; t < out.horizon; ++t) {
        for (int s = 0; s < out.num_states[t]; ++s) {
            for (int a = 0; a < out.num_actions[t]; ++a) {
                const CounterRng rng = CounterRng::derive(model.seed, 0x6d9eULL, replicate,
                                                          static_cast<std::uint64_t>(t),
                                                          static_cast<std::uint64_t>(s),
                                                          static_cast<std::uint64_t>(a));
                std::vector<long long> counts(out.num_states[t + 1], 0);
                for (long long i = 0; i < n; ++i)
                    ++counts[detail::inverse_cdf(model.truth.kernels[t][s][a],
                                                 rng.uniform(static_cast<std::uint64_t>(i)))];
                auto& row = out.kernels[t][s][a];
                for (std::size_t sn = 0; sn < row.size(); ++sn)
                    row[sn] = static_cast<double>(counts[sn]) / static_cast<double>(n);
            }
        }
    }
    return out;
}

struct GenerativeSoc {
    SocProblem truth;
    std::uint64_t seed = 0;
};

/// Empirical scenario sets: n i.i.d. draws per stage with weights 1/n.
inline SocProblem build_empirical_soc(const GenerativeSoc& model, long long n,
                                      std::uint64_t replicate = 0) {
    if (n < 1) throw config_error("build_empirical_soc: need n >= 1");
    model.truth.validate();
    SocProblem out = model.truth;
    out.noise_stages.assign(std::max(out.horizon, 1), {});
    for (int t = 0; t < std::max(out.horizon, 1); ++t) {
        const auto& truth_set = model.truth.scenarios(std::min(t, out.horizon - 1 >= 0 ? t : 0));
        std::vector<double> weights;
        weights.reserve(truth_set.size());
        for (const auto& sc : truth_set) weights.push_back(sc.prob);
        const CounterRng rng = CounterRng::derive(model.seed, 0x50cULL, replicate,
                                                  static_cast<std::uint64_t>(t));
        auto& dest = out.noise_stages[t];
        dest.reserve(n);
        for (long long i = 0; i < n; ++i) {
            const int k = detail::inverse_cdf(weights, rng.uniform(static_cast<std::uint64_t>(i)));
            dest.push_back({truth_set[k].xi, 1.0 / static_cast<double>(n)});
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sample-complexity sweeps: solve under empirical kernels for a ladder of
// sample sizes and fit the log-log decay of the median error.
// ---------------------------------------------------------------------------

struct SweepRow {
    long long n = 0;
    int rep = 0;
    double error = 0.0;
    double seconds = 0.0;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    std::vector<std::pair<long long, double>> medians;  // per n
    std::optional<double> slope;                        // of log(median) vs log(n)
    std::optional<double> intercept;
    std::optional<double> slope_stderr;
    double exact_value = 0.0;  // ground-truth risk the errors are measured against
    bool aborted = false;
    std::string abort_reason;
};

namespace detail {

template <typename SolveFn>
SweepResult run_sweep(const std::vector<long long>& n_list, int reps, SolveFn&& solve,
                      double exact_value, int jobs) {
    if (n_list.empty()) throw config_error("sweep: empty sample-size list");
    for (std::size_t i = 1; i < n_list.size(); ++i)
        if (n_list[i] <= n_list[i - 1]) throw config_error("sweep: n-list must be strictly increasing");
    if (reps < 1) throw config_error("sweep: need at least one replicate");

    SweepResult result;
    result.exact_value = exact_value;
    const std::size_t total = n_list.size() * static_cast<std::size_t>(reps);
    result.rows.resize(total);

    std::atomic<std::size_t> cursor{0};
    std::atomic<bool> failed{false};
    std::string first_error;
    std::mutex error_mutex;

    auto worker = [&]() {
        while (true) {
            const std::size_t i = cursor.fetch_add(1);
            if (i >= total || failed.load()) break;
            const long long n = n_list[i / reps];
            const int rep = static_cast<int>(i % reps);
            const auto start = std::chrono::steady_clock::now();
            try {
                const double value = solve(n, rep);
                result.rows[i].error = std::abs(value - exact_value);
            } catch (const std::exception& e) {
                bool expected = false;
                if (failed.compare_exchange_strong(expected, true)) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    first_error = e.what();
                }
                break;
            }
            result.rows[i].n = n;
            result.rows[i].rep = rep;
            result.rows[i].seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        }
    };

    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const std::size_t nthreads =
        std::min<std::size_t>(total, jobs > 0 ? static_cast<std::size_t>(jobs) : hw);
    if (nthreads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(nthreads);
        for (std::size_t k = 0; k < nthreads; ++k) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    if (failed.load()) {
        result.aborted = true;
        result.abort_reason = first_error;
        return result;  // partial rows, flagged
    }
    // n/rep fields for rows computed above; fill medians
    for (std::size_t ni = 0; ni < n_list.size(); ++ni) {
        std::vector<double> errs;
        errs.reserve(reps);
        for (int r = 0; r < reps; ++r) errs.push_back(result.rows[ni * reps + r].error);
        std::sort(errs.begin(), errs.end());
        const double med = (reps % 2 == 1)
                               ? errs[reps / 2]
                               : 0.5 * (errs[reps / 2 - 1] + errs[reps / 2]);
        result.medians.emplace_back(n_list[ni], med);
    }
    // least-squares fit of log(median) on log(n), over strictly positive medians
    std::vector<std::pair<double, double>> pts;
    for (const auto& [n, med] : result.medians)
        if (med > 0.0) pts.emplace_back(std::log(static_cast<double>(n)), std::log(med));
    if (pts.size() >= 2) {
        double sx = 0, sy = 0;
        for (const auto& [x, y] : pts) {
            sx += x;
            sy += y;
        }
        const double mx = sx / pts.size(), my = sy / pts.size();
        double sxx = 0, sxy = 0;
        for (const auto& [x, y] : pts) {
            sxx += (x - mx) * (x - mx);
            sxy += (x - mx) * (y - my);
        }
        if (sxx > 0) {
            const double slope = sxy / sxx;
            result.slope = slope;
            result.intercept = my - slope * mx;
            if (pts.size() >= 3) {
                double rss = 0;
                for (const auto& [x, y] : pts) {
                    const double r = y - (*result.intercept + slope * x);
                    rss += r * r;
                }
                result.slope_stderr = std::sqrt(rss / (pts.size() - 2) / sxx);
            }
        }
    }
    return result;
}

inline void require_exact_ground_truth(const XGrid& grid) {
    if (grid.mode != XGrid::Mode::Lattice)
        throw config_error("sweep: ground truth must be exactly solvable (lattice x-grid)");
}

}  // namespace detail

/// Estimation error of the optimal risk under empirical kernels, swept over n.
inline SweepResult sweep_opt(const GenerativeMdp& model, const RiskFamily& family,
                             const ThetaGrid& theta_grid, const std::vector<long long>& n_list,
                             int reps, int s0, const XGrid& grid, int jobs = 0) {
    detail::require_exact_ground_truth(grid);
    const double exact = optimal_risk(model.truth, family, theta_grid, s0, grid).risk;
    return detail::run_sweep(
        n_list, reps,
        [&](long long n, int rep) {
            const auto empirical = build_empirical_mdp(model, n, static_cast<std::uint64_t>(rep));
            return optimal_risk(empirical, family, theta_grid, s0, grid).risk;
        },
        exact, jobs);
}

/// Estimation error of a fixed policy's risk under empirical kernels.
inline SweepResult sweep_eval(const GenerativeMdp& model, const AugPolicy& policy,
                              const RiskFamily& family, const ThetaGrid& theta_grid,
                              const std::vector<long long>& n_list, int reps, int s0,
                              const XGrid& grid, int jobs = 0) {
    detail::require_exact_ground_truth(grid);
    const double exact = policy_risk(model.truth, policy, family, theta_grid, s0, grid).risk;
    return detail::run_sweep(
        n_list, reps,
        [&](long long n, int rep) {
            const auto empirical = build_empirical_mdp(model, n, static_cast<std::uint64_t>(rep));
            return policy_risk(empirical, policy, family, theta_grid, s0, grid).risk;
        },
        exact, jobs);
}

// ---------------------------------------------------------------------------
// Explicit sample-size formulas, instantiated with the constants appearing in
// the concentration arguments (Hoeffding denominator 8 T^4 L_C^2, net radius
// factor 3 R_Theta). These are proof-calibrated, not statement-level big-O.
// ---------------------------------------------------------------------------

inline long long sample_size_eval(int T, double L_C, double L_Theta, double L_pi, int d, int S,
                                  int A, double R_Theta, double eps, double delta) {
    if (!(eps > 0.0)) throw config_error("sample_size_eval: eps must be positive");
    if (!(delta > 0.0 && delta < 1.0)) throw config_error("sample_size_eval: delta must be in (0,1)");
    if (T < 1 || d < 1 || S < 1 || A < 1 || !(L_C > 0.0) || !(L_Theta > 0.0) || L_pi < 0.0 ||
        !(R_Theta > 0.0))
        throw config_error("sample_size_eval: parameters must be positive");
    const double mod0 = eval_modulus(T, 0, L_C, L_pi);
    const double eps_x = eps / (8.0 * T * mod0);
    const double eps_theta = eps / (8.0 * T * L_Theta);
    const double log_arg = std::log(2.0 * T * S * A / delta) + std::log(T / eps_x) +
                           d * std::log(3.0 * R_Theta / eps_theta);
    const double t4 = static_cast<double>(T) * T * T * T;
    const double factor = 8.0 * t4 * (L_C * L_C) / (eps * eps);
    const double raw = factor * std::max(log_arg, 1.0);
    return std::max(1LL, static_cast<long long>(std::ceil(raw)));
}

inline long long sample_size_soc(int T, double L_C, double L_Theta, double L, double L_pi, int d_S,
                                 int d_A, int d, double R, double R_Theta, double eps,
                                 double delta) {
    if (!(eps > 0.0)) throw config_error("sample_size_soc: eps must be positive");
    if (!(delta > 0.0 && delta < 1.0)) throw config_error("sample_size_soc: delta must be in (0,1)");
    if (T < 1 || d_S < 1 || d_A < 1 || d < 1 || !(L_C > 0.0) || !(L_Theta > 0.0) || !(L > 0.0) ||
        L_pi < 0.0 || !(R > 0.0) || !(R_Theta > 0.0))
        throw config_error("sample_size_soc: parameters must be positive");
    const auto mod = soc_moduli(T, 0, L_C, L, L_pi);
    const double eps_s = eps / (16.0 * T * mod.in_state);
    const double eps_a = eps / (16.0 * T * mod.in_state);
    const double eps_x = eps / (16.0 * T * mod.in_x);
    const double eps_theta = eps / (16.0 * T * L_Theta);
    const double log_arg = std::log(2.0 * T / delta) + d_S * std::log(3.0 * R / eps_s) +
                           d_A * std::log(3.0 * R / eps_a) + std::log(T / eps_x) +
                           d * std::log(3.0 * R_Theta / eps_theta);
    const double t4 = static_cast<double>(T) * T * T * T;
    const double factor = 8.0 * t4 * (L_C * L_C) / (eps * eps);
    const double raw = factor * std::max(log_arg, 1.0);
    return std::max(1LL, static_cast<long long>(std::ceil(raw)));
}

/// Truncation horizon plus finite-horizon sample size: half the budget goes
/// to the geometric tail, half to estimation in the T-stage approximation.
inline std::pair<int, long long> sample_size_infinite(double gamma, double L_C, double L_Theta,
                                                      double L_pi, int d, int S, int A,
                                                      double R_Theta, double eps, double delta) {
    if (!(gamma >= 0.0 && gamma < 1.0))
        throw config_error("sample_size_infinite: gamma must be in [0,1)");
    if (!(eps > 0.0)) throw config_error("sample_size_infinite: eps must be positive");
    int T = 1;
    while (L_C * std::pow(gamma, T) / (1.0 - gamma) > eps / 2.0) {
        ++T;
        if (T > 1000000) throw config_error("sample_size_infinite: horizon exceeds 1e6");
    }
    return {T, sample_size_eval(T, L_C, L_Theta, L_pi, d, S, A, R_Theta, eps / 2.0, delta)};
}

}  // namespace riskdp

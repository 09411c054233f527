#pragma once

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "riskdp/io.hpp"
#include "riskdp/oracle.hpp"
#include "riskdp/sampling.hpp"

namespace riskdp::cli {

// ---------------------------------------------------------------------------
// Logging (RISKDP_LOG = none | error | warn | info | debug)
// ---------------------------------------------------------------------------

inline int log_threshold() {
    static const int level = [] {
        const char* env = std::getenv("RISKDP_LOG");
        if (!env) return 1;
        const std::string v(env);
        if (v == "none") return 0;
        if (v == "error") return 1;
        if (v == "warn") return 2;
        if (v == "info") return 3;
        if (v == "debug") return 4;
        return 1;
    }();
    return level;
}

inline void logmsg(int level, const std::string& msg) {
    if (level <= log_threshold()) std::cerr << "[riskdp] " << msg << "\n";
}

// ---------------------------------------------------------------------------
// Shared option plumbing
// ---------------------------------------------------------------------------

namespace detail {

struct CommonOpts {
    std::string problem_path;
    std::string out_path;
    std::string risk_override;
    double alpha_override = -1.0;
    std::string xgrid_override;
    int theta_points = 0;  // 0 = auto (129 for 1-D, 33 per axis for 2-D)
    int s0 = 0;
};

inline XGrid parse_xgrid_flag(const std::string& text) {
    const auto colon = text.find(':');
    if (colon == std::string::npos) throw config_error("--xgrid expects mode:value");
    const std::string mode = text.substr(0, colon);
    const std::string value = text.substr(colon + 1);
    if (mode == "lattice") return XGrid::lattice(std::stoi(value));
    if (mode == "uniform") return XGrid::uniform(std::stod(value));
    throw config_error("--xgrid mode must be lattice or uniform");
}

inline void apply_overrides(MdpProblem& prob, const CommonOpts& opts) {
    if (!opts.risk_override.empty()) {
        json j;
        try {
            j = json::parse(opts.risk_override);
        } catch (const std::exception& e) {
            throw config_error(std::string("--risk is not valid JSON: ") + e.what());
        }
        prob.risk = parse_risk(j, prob.mdp.max_total_cost());
    }
    if (opts.alpha_override > 0.0) {
        if (prob.risk.kind != RiskKind::CVaR) throw config_error("--alpha applies to cvar risk only");
        prob.risk = RiskFamily::cvar(opts.alpha_override, prob.risk.theta_box[0][1]);
    }
    if (!opts.xgrid_override.empty()) {
        prob.xgrid = parse_xgrid_flag(opts.xgrid_override);
        prob.xgrid.validate_for(prob.mdp);
    }
}

inline ThetaGrid make_theta_grid(const RiskFamily& fam, int points) {
    if (points <= 0) points = (fam.theta_dim() == 1) ? 129 : 33;
    return ThetaGrid::uniform(fam.theta_box, points);
}

inline void emit(const std::string& out_path, const std::string& contents) {
    if (out_path.empty()) {
        std::cout << contents;
    } else {
        write_atomic(out_path, contents);
    }
}

inline ojson output_header(const char* kind) {
    ojson j;
    j["schema"] = kOutputSchema;
    j["kind"] = kind;
    return j;
}

/// Accepts either a standalone policy file or a solve output.
inline AugPolicy parse_policy_any(const json& j) {
    if (j.contains("deterministic")) return parse_policy(j);
    if (j.contains("policy") && j.contains("policy_xnodes")) {
        AugPolicy pol;
        pol.deterministic = true;
        pol.action = j.at("policy").get<std::vector<std::vector<std::vector<int>>>>();
        pol.xnodes = j.at("policy_xnodes").get<std::vector<std::vector<double>>>();
        return pol;
    }
    throw config_error("policy file: expected a policy object or a solve output");
}

inline std::vector<long long> parse_n_list(const std::string& text) {
    std::vector<long long> out;
    std::string token;
    std::stringstream ss(text);
    while (std::getline(ss, token, ',')) {
        if (token.empty()) continue;
        out.push_back(std::stoll(token));
    }
    if (out.empty()) throw config_error("--n-list is empty");
    return out;
}

inline std::string format_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// --- subcommand bodies -------------------------------------------------------

inline int run_solve(const CommonOpts& opts) {
    auto prob = parse_mdp_problem(load_json_file(opts.problem_path));
    apply_overrides(prob, opts);
    const auto tg = make_theta_grid(prob.risk, opts.theta_points);
    logmsg(3, "solve: theta grid size " + std::to_string(tg.size()));
    const auto res = optimal_risk(prob.mdp, prob.risk, tg, opts.s0, prob.xgrid);

    ojson j = output_header("solve");
    j["risk"] = res.risk;
    j["theta_star"] = res.theta_star;
    j["policy"] = res.policy.action;
    j["policy_xnodes"] = res.policy.xnodes;
    j["xgrid"] = xgrid_to_json(prob.xgrid);
    j["s0"] = opts.s0;
    emit(opts.out_path, dump_output(j));
    return 0;
}

inline int run_evaluate(const CommonOpts& opts, const std::string& policy_path) {
    auto prob = parse_mdp_problem(load_json_file(opts.problem_path));
    apply_overrides(prob, opts);
    const auto pol = parse_policy_any(load_json_file(policy_path));
    const auto tg = make_theta_grid(prob.risk, opts.theta_points);
    const auto res = policy_risk(prob.mdp, pol, prob.risk, tg, opts.s0, prob.xgrid);

    ojson j = output_header("evaluate");
    j["risk"] = res.risk;
    j["theta_star"] = res.theta_star;
    j["s0"] = opts.s0;
    emit(opts.out_path, dump_output(j));
    return 0;
}

inline int run_sweep(const CommonOpts& opts, const std::string& mode, const std::string& n_list_text,
                     int reps, std::uint64_t seed, int jobs, const std::string& policy_path,
                     bool timings) {
    auto prob = parse_mdp_problem(load_json_file(opts.problem_path));
    apply_overrides(prob, opts);
    const auto tg = make_theta_grid(prob.risk, opts.theta_points);
    const auto n_list = parse_n_list(n_list_text);

    GenerativeMdp model{prob.mdp, seed};
    SweepResult result;
    if (mode == "opt") {
        result = sweep_opt(model, prob.risk, tg, n_list, reps, opts.s0, prob.xgrid, jobs);
    } else if (mode == "eval") {
        AugPolicy pol;
        if (policy_path.empty()) {
            pol = uniform_aug_policy(prob.mdp, prob.xgrid);  // L_pi = 0 randomized policy
        } else {
            pol = parse_policy_any(load_json_file(policy_path));
        }
        result = sweep_eval(model, pol, prob.risk, tg, n_list, reps, opts.s0, prob.xgrid, jobs);
    } else {
        throw config_error("--mode must be opt or eval");
    }

    // CSV rows; timings are opt-in so identical seeds give identical bytes
    std::string csv = "n,rep,error,seconds\n";
    for (const auto& row : result.rows) {
        csv += std::to_string(row.n) + "," + std::to_string(row.rep) + "," +
               format_g17(row.error) + "," + format_g17(timings ? row.seconds : 0.0) + "\n";
    }
    emit(opts.out_path, csv);

    ojson j = output_header("sweep");
    j["mode"] = mode;
    j["seed"] = seed;
    j["reps"] = reps;
    j["exact"] = result.exact_value;
    j["aborted"] = result.aborted;
    if (result.aborted) j["abort_reason"] = result.abort_reason;
    {
        ojson med = ojson::array();
        for (const auto& [n, m] : result.medians) med.push_back({n, m});
        j["medians"] = med;
    }
    if (result.slope) {
        j["slope"] = *result.slope;
        j["intercept"] = *result.intercept;
        if (result.slope_stderr) {
            j["slope_ci"] = {*result.slope - 1.96 * *result.slope_stderr,
                             *result.slope + 1.96 * *result.slope_stderr};
        }
    } else {
        j["slope"] = nullptr;
    }
    const std::string summary = dump_output(j);
    if (opts.out_path.empty()) {
        std::cout << summary;
    } else {
        write_atomic(opts.out_path + ".summary.json", summary);
    }
    return result.aborted ? 3 : 0;
}

inline int run_oracle_check(const CommonOpts& opts, std::uint64_t seed) {
    auto prob = parse_mdp_problem(load_json_file(opts.problem_path));
    apply_overrides(prob, opts);
    if (prob.xgrid.mode != XGrid::Mode::Lattice)
        throw config_error("oracle-check: requires a lattice x-grid problem");
    const auto tg = make_theta_grid(prob.risk, opts.theta_points);
    const auto& fam = prob.risk;
    const auto& m = prob.mdp;

    ojson checks = ojson::array();
    int violations = 0;
    auto record = [&](const std::string& name, bool pass, const std::string& detail) {
        checks.push_back(ojson{{"name", name}, {"pass", pass}, {"detail", detail}});
        if (!pass) ++violations;
        logmsg(pass ? 3 : 1, "oracle-check " + name + ": " + (pass ? "ok" : "VIOLATION " + detail));
    };

    // 1. telescoping identity on random node policies
    {
        double worst = 0.0;
        const CounterRng rng = CounterRng::derive(seed, 0x7e1eULL);
        for (int k = 0; k < 20; ++k) {
            const auto pol = random_aug_policy(m, prob.xgrid, seed * 131 + k);
            std::vector<double> theta(fam.theta_dim());
            for (int i = 0; i < fam.theta_dim(); ++i) {
                const auto& ax = fam.theta_box[i];
                theta[i] = ax[0] + (ax[1] - ax[0]) * rng.uniform(k * 4 + i);
            }
            const auto table = dp_evaluate(m, pol, fam, theta, prob.xgrid);
            const auto dist = exact_total_cost_distribution(m, pol, opts.s0);
            double expect = 0.0;
            for (const auto& [v, p] : dist.atoms) expect += p * eval_f(fam, theta, v);
            worst = std::max(worst, std::abs(table.values[0][opts.s0][0] +
                                             riskdp::detail::eval_f_raw(fam, theta, 0.0) - expect));
        }
        record("telescoping", worst <= 1e-12, "max |dp - exact| = " + format_g17(worst));
    }

    // 2. greedy policy re-evaluates to the optimal tables
    {
        double worst = 0.0;
        std::vector<double> theta(fam.theta_dim());
        for (int i = 0; i < fam.theta_dim(); ++i)
            theta[i] = 0.5 * (fam.theta_box[i][0] + fam.theta_box[i][1]);
        const auto optres = dp_optimize(m, fam, theta, prob.xgrid);
        const auto ev = dp_evaluate(m, optres.greedy, fam, theta, prob.xgrid);
        for (std::size_t t = 0; t < ev.values.size(); ++t)
            for (std::size_t s = 0; s < ev.values[t].size(); ++s)
                for (std::size_t xi = 0; xi < ev.values[t][s].size(); ++xi)
                    worst = std::max(worst, std::abs(ev.values[t][s][xi] -
                                                     optres.table.values[t][s][xi]));
        record("greedy-consistency", worst <= 1e-12, "max gap = " + format_g17(worst));
    }

    // 3. optimality against random policies
    {
        double worst = 0.0;
        std::vector<double> theta(fam.theta_dim());
        for (int i = 0; i < fam.theta_dim(); ++i)
            theta[i] = 0.5 * (fam.theta_box[i][0] + fam.theta_box[i][1]);
        const auto optres = dp_optimize(m, fam, theta, prob.xgrid);
        for (int k = 0; k < 100; ++k) {
            const auto pol = random_aug_policy(m, prob.xgrid, seed * 977 + k);
            const auto ev = dp_evaluate(m, pol, fam, theta, prob.xgrid);
            for (std::size_t t = 0; t < ev.values.size(); ++t)
                for (std::size_t s = 0; s < ev.values[t].size(); ++s)
                    for (std::size_t xi = 0; xi < ev.values[t][s].size(); ++xi)
                        worst = std::max(worst, optres.table.values[t][s][xi] -
                                                    ev.values[t][s][xi]);
        }
        record("optimality", worst <= 1e-12, "max (opt - eval) = " + format_g17(worst));
    }

    // 4. exhaustive-enumeration equivalence (skipped above the cap)
    try {
        const auto oracle = oracle_optimal_risk(m, fam, tg, opts.s0);
        const auto dp = optimal_risk(m, fam, tg, opts.s0, prob.xgrid);
        const double tol = tg.max_step() * fam.lipschitz_theta + 1e-9;
        const double gap = std::abs(oracle.risk - dp.risk);
        record("oracle-equivalence", gap <= tol,
               "|oracle - dp| = " + format_g17(gap) + ", tol = " + format_g17(tol));
    } catch (const instance_too_large_error& e) {
        record("oracle-equivalence", true, std::string("skipped: ") + e.what());
    }

    // 5. CVaR sorted-tail closed form against the dual grid
    if (fam.kind == RiskKind::CVaR) {
        double worst = 0.0;
        for (int k = 0; k < 10; ++k) {
            const auto pol = random_aug_policy(m, prob.xgrid, seed * 7919 + k);
            const auto dist = exact_total_cost_distribution(m, pol, opts.s0);
            const double closed = cvar_closed_form(dist, fam.alpha);
            const double dual = policy_risk(m, pol, fam, tg, opts.s0, prob.xgrid).risk;
            worst = std::max(worst, std::abs(closed - dual));
        }
        const double tol = 2.0 * tg.max_step() * fam.lipschitz_cost;
        record("cvar-closed-form", worst <= tol,
               "max gap = " + format_g17(worst) + ", tol = " + format_g17(tol));
    }

    ojson j = output_header("oracle-check");
    j["checks"] = checks;
    j["violations"] = violations;
    emit(opts.out_path, dump_output(j));
    return violations == 0 ? 0 : 4;
}

inline int run_horizon_solve(const CommonOpts& opts, double eps_trunc, double gamma_override,
                             double xh, bool residuals) {
    auto file = parse_infinite_problem(load_json_file(opts.problem_path));
    if (gamma_override >= 0.0) {
        file.mdp.gamma = gamma_override;
        file.mdp.validate();
        file.risk = parse_risk(json::parse(risk_to_json(file.risk).dump()),
                               1.0 / (1.0 - file.mdp.gamma));
    }
    if (!opts.risk_override.empty())
        file.risk = parse_risk(json::parse(opts.risk_override), 1.0 / (1.0 - file.mdp.gamma));
    if (opts.alpha_override > 0.0)
        file.risk = RiskFamily::cvar(opts.alpha_override, 1.0 / (1.0 - file.mdp.gamma));

    const double L_C = file.risk.lipschitz_cost;
    const auto [approx, plan] = truncate(file.mdp, eps_trunc, L_C);
    const auto tg = make_theta_grid(file.risk, opts.theta_points);
    const auto grid = truncation_xgrid(file.mdp, plan.horizon, xh);
    logmsg(3, "horizon-solve: T = " + std::to_string(plan.horizon));
    const auto res = optimal_risk(approx, file.risk, tg, opts.s0, grid);

    ojson j = output_header("horizon-solve");
    j["gamma"] = file.mdp.gamma;
    j["T"] = plan.horizon;
    j["epsilon_trunc"] = plan.epsilon_trunc;
    j["risk"] = res.risk;
    j["theta_star"] = res.theta_star;

    if (residuals) {
        ojson rj;
        if (file.risk.global_lipschitz()) {
            const double L_f = *file.risk.global_lipschitz();
            const double span = std::min(4.0, 1.0 / (1.0 - file.mdp.gamma));
            const int T_res = std::min(plan.horizon, 16);
            const auto xw = window_nodes(0.0, 2.0 * span, 257);
            std::vector<std::vector<double>> theta_axes;
            for (const auto& ax : file.risk.theta_box)
                theta_axes.push_back(window_nodes(ax[0], ax[1], 17));
            const auto table = truncated_opt_table(file.mdp, file.risk, T_res, xw, theta_axes);
            const auto rep = bellman_residual_opt(file.mdp, file.risk, table);
            rj["opt_operator"] = rep.max_residual;
            rj["opt_extrapolated_fraction"] = rep.extrapolated_fraction();
            rj["opt_bound"] =
                2.0 * L_f * std::pow(file.mdp.gamma, T_res) / (1.0 - file.mdp.gamma);
            rj["truncation_horizon"] = T_res;
            if (file.risk.kind == RiskKind::CVaR && !res.theta_star.empty()) {
                const auto pol = StationaryPolicy::uniform(file.mdp);
                const double theta = res.theta_star[0];
                const auto ctab = truncated_cvar_table(file.mdp, pol, file.risk.alpha, theta,
                                                       T_res, window_nodes(-span, 2.0 * span, 257));
                const auto crep = cvar_operator_residual(file.mdp, pol, file.risk.alpha, theta, ctab);
                rj["cvar_operator"] = crep.max_residual;
                rj["cvar_extrapolated_fraction"] = crep.extrapolated_fraction();
            }
        } else {
            rj["skipped"] = "family lacks the scaling structure";
        }
        j["residuals"] = rj;
    }
    emit(opts.out_path, dump_output(j));
    return 0;
}

inline int run_soc_solve(const CommonOpts& opts, int s0_node) {
    auto file = parse_soc_problem(load_json_file(opts.problem_path));
    if (!opts.risk_override.empty())
        file.risk = parse_risk(json::parse(opts.risk_override), file.problem.horizon + 1.0);
    if (opts.alpha_override > 0.0)
        file.risk = RiskFamily::cvar(opts.alpha_override, file.problem.horizon + 1.0);
    const auto tg = make_theta_grid(file.risk, opts.theta_points);
    const auto res = soc_optimal_risk(file.problem, file.risk, tg,
                                      static_cast<std::size_t>(s0_node), file.grid);

    ojson j = output_header("soc-solve");
    j["risk"] = res.risk;
    j["theta_star"] = res.theta_star;
    j["s0_node"] = s0_node;
    emit(opts.out_path, dump_output(j));
    return 0;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Entry point. Returns the process exit code: 0 success, 2 configuration
// error, 3 numeric/solver error, 4 oracle-check violation.
// ---------------------------------------------------------------------------

inline int run(const std::vector<std::string>& args) {
    CLI::App app{"risk-averse dynamic programming toolkit"};
    app.require_subcommand(1);

    detail::CommonOpts opts;
    std::string policy_path, mode = "opt", n_list_text = "64,256,1024";
    int reps = 32, jobs = 0, s0_node = 0;
    std::uint64_t seed = 0;
    double eps_trunc = 1e-3, gamma_override = -1.0, xh = 1.0 / 128.0;
    bool timings = false, residuals = true;

    auto add_common = [&](CLI::App* cmd, bool with_xgrid = true) {
        cmd->add_option("problem", opts.problem_path, "problem JSON file")->required();
        cmd->add_option("--out", opts.out_path, "output path (stdout if omitted)");
        cmd->add_option("--risk", opts.risk_override, "inline risk JSON override");
        cmd->add_option("--alpha", opts.alpha_override, "CVaR level override");
        cmd->add_option("--theta-grid", opts.theta_points, "theta grid points per axis");
        cmd->add_option("--s0", opts.s0, "initial state index");
        if (with_xgrid) cmd->add_option("--xgrid", opts.xgrid_override, "x-grid override (mode:value)");
        return cmd;
    };

    auto* solve = add_common(app.add_subcommand("solve", "optimal risk and greedy policy"));
    auto* evaluate = add_common(app.add_subcommand("evaluate", "risk of a stored policy"));
    evaluate->add_option("--policy", policy_path, "policy JSON file")->required();
    auto* sweep = add_common(app.add_subcommand("sweep", "sample-complexity sweep"));
    sweep->add_option("--mode", mode, "opt or eval");
    sweep->add_option("--n-list", n_list_text, "comma-separated sample sizes");
    sweep->add_option("--reps", reps, "replicates per sample size");
    sweep->add_option("--seed", seed, "generative-model seed");
    sweep->add_option("--jobs", jobs, "worker threads (default: logical cores)");
    sweep->add_option("--policy", policy_path, "policy for eval mode");
    sweep->add_flag("--timings", timings, "record wall times in the CSV");
    auto* oracle_check =
        add_common(app.add_subcommand("oracle-check", "exact equivalence suite"));
    oracle_check->add_option("--seed", seed, "seed for the random-policy checks");
    auto* horizon_solve = add_common(
        app.add_subcommand("horizon-solve", "discounted problem via truncation"), false);
    horizon_solve->add_option("--eps-trunc", eps_trunc, "truncation error budget");
    horizon_solve->add_option("--gamma", gamma_override, "discount override");
    horizon_solve->add_option("--xh", xh, "x-grid spacing");
    horizon_solve->add_flag("--residuals,!--no-residuals", residuals,
                            "report fixed-point residuals");
    auto* soc_solve = add_common(app.add_subcommand("soc-solve", "stochastic control problem"), false);
    soc_solve->add_option("--s0-node", s0_node, "initial state grid node");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (solve->parsed()) return detail::run_solve(opts);
        if (evaluate->parsed()) return detail::run_evaluate(opts, policy_path);
        if (sweep->parsed())
            return detail::run_sweep(opts, mode, n_list_text, reps, seed, jobs, policy_path,
                                     timings);
        if (oracle_check->parsed()) return detail::run_oracle_check(opts, seed);
        if (horizon_solve->parsed())
            return detail::run_horizon_solve(opts, eps_trunc, gamma_override, xh, residuals);
        if (soc_solve->parsed()) return detail::run_soc_solve(opts, s0_node);
        return 2;
    } catch (const config_error& e) {
        logmsg(1, std::string("config error: ") + e.what());
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}

}  // namespace riskdp::cli

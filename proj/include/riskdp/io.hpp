#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "riskdp/errors.hpp"
#include "riskdp/horizon.hpp"
#include "riskdp/mdp.hpp"
#include "riskdp/risk.hpp"
#include "riskdp/soc.hpp"

namespace riskdp {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

inline constexpr const char* kOutputSchema = "riskdp-output/1";

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

inline json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open file: " + path);
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw config_error("bad JSON in " + path + ": " + e.what());
    }
    return j;
}

namespace detail {

inline int set_size(const json& spec, int t) {
    if (spec.is_number_integer()) return spec.get<int>();
    if (spec.is_array()) {
        if (spec.empty()) throw config_error("problem: empty state/action list");
        if (spec[0].is_string() || spec[0].is_number()) {
            if (spec[0].is_string()) return static_cast<int>(spec.size());
            // array of per-stage counts
            return spec.at(t).get<int>();
        }
        return static_cast<int>(spec.at(t).size());  // per-stage name lists
    }
    throw config_error("problem: states/actions must be a count or a list");
}

inline bool per_stage(const json& spec) {
    return spec.is_array() && !spec.empty() && (spec[0].is_array() || spec[0].is_number_integer());
}

}  // namespace detail

/// Risk block: {"kind":"cvar","alpha":0.5} or
/// {"kind":"phi","phi":"kl","tau":0.1,"L":10.0,"theta_box":[[1e-4,10],[-2,2]]}.
/// `total_cost_bound` sizes the default parameter boxes.
inline RiskFamily parse_risk(const json& j, double total_cost_bound) {
    if (!j.contains("kind")) throw config_error("risk: missing kind");
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "cvar") {
        const double alpha = j.at("alpha").get<double>();
        const double hi = j.value("theta_hi", total_cost_bound);
        return RiskFamily::cvar(alpha, hi);
    }
    if (kind == "phi") {
        const std::string phi_name = j.at("phi").get<std::string>();
        PhiSpec phi;
        if (phi_name == "kl") {
            phi = PhiSpec::kl();
        } else if (phi_name == "chi2") {
            phi = PhiSpec::chi_squared();
        } else if (phi_name == "tv") {
            phi = PhiSpec::total_variation();
        } else {
            throw config_error("risk: unknown divergence '" + phi_name + "'");
        }
        const double tau = j.at("tau").get<double>();
        const double L = j.at("L").get<double>();
        auto fam = RiskFamily::phi_dual(phi, tau, L, total_cost_bound);
        if (j.contains("theta_box")) {
            const auto& box = j.at("theta_box");
            if (box.size() != 2) throw config_error("risk: phi theta_box needs two axes");
            fam.theta_box = {{box[0][0].get<double>(), box[0][1].get<double>()},
                             {box[1][0].get<double>(), box[1][1].get<double>()}};
            fam.validate();
        }
        return fam;
    }
    throw config_error("risk: unknown kind '" + kind + "'");
}

inline ojson risk_to_json(const RiskFamily& fam) {
    ojson j;
    if (fam.kind == RiskKind::CVaR) {
        j["kind"] = "cvar";
        j["alpha"] = fam.alpha;
        j["theta_hi"] = fam.theta_box[0][1];
    } else {
        j["kind"] = "phi";
        j["phi"] = fam.phi.name();
        j["tau"] = fam.tau;
        j["L"] = fam.trunc_L;
        j["theta_box"] = {{fam.theta_box[0][0], fam.theta_box[0][1]},
                          {fam.theta_box[1][0], fam.theta_box[1][1]}};
    }
    return j;
}

inline XGrid parse_xgrid(const json& j) {
    const std::string mode = j.at("mode").get<std::string>();
    if (mode == "lattice") return XGrid::lattice(j.at("K").get<int>());
    if (mode == "uniform") return XGrid::uniform(j.at("h").get<double>());
    throw config_error("xgrid: unknown mode '" + mode + "'");
}

inline ojson xgrid_to_json(const XGrid& g) {
    ojson j;
    if (g.mode == XGrid::Mode::Lattice) {
        j["mode"] = "lattice";
        j["K"] = g.lattice_k;
    } else {
        j["mode"] = "uniform";
        j["h"] = g.uniform_h;
    }
    return j;
}

struct MdpProblem {
    FiniteHorizonMdp mdp;
    RiskFamily risk;
    XGrid xgrid = XGrid::lattice(4);
};

/// Problem file: {"T":2,"states":...,"actions":...,"kernels":[[[...]]],
/// "costs":[[[...]]],"risk":{...},"xgrid":{...}}. States/actions may be a
/// shared count, a shared name list, or per-stage lists.
inline MdpProblem parse_mdp_problem(const json& j) {
    MdpProblem out;
    auto& m = out.mdp;
    m.horizon = j.at("T").get<int>();
    const auto& st = j.at("states");
    const auto& ac = j.at("actions");
    m.num_states.resize(m.horizon + 1);
    m.num_actions.resize(m.horizon + 1);
    for (int t = 0; t <= m.horizon; ++t) {
        m.num_states[t] = detail::set_size(st, t);
        m.num_actions[t] = detail::set_size(ac, t);
    }
    try {
        m.kernels =
            j.at("kernels").get<std::vector<std::vector<std::vector<std::vector<double>>>>>();
        m.costs = j.at("costs").get<std::vector<std::vector<std::vector<double>>>>();
    } catch (const std::exception& e) {
        throw config_error(std::string("problem: bad kernels/costs shape: ") + e.what());
    }
    m.validate();
    out.risk = parse_risk(j.at("risk"), m.max_total_cost());
    if (j.contains("xgrid")) out.xgrid = parse_xgrid(j.at("xgrid"));
    out.xgrid.validate_for(m);
    return out;
}

struct InfiniteProblem {
    InfiniteMdp mdp;
    RiskFamily risk;
};

/// Infinite-horizon file: {"states":N,"actions":N,"kernel":[[[...]]],
/// "cost":[[...]],"gamma":0.9,"risk":{...}}.
inline InfiniteProblem parse_infinite_problem(const json& j) {
    InfiniteProblem out;
    auto& m = out.mdp;
    m.n_states = detail::set_size(j.at("states"), 0);
    m.n_actions = detail::set_size(j.at("actions"), 0);
    try {
        m.kernel = j.at("kernel").get<std::vector<std::vector<std::vector<double>>>>();
        m.cost = j.at("cost").get<std::vector<std::vector<double>>>();
    } catch (const std::exception& e) {
        throw config_error(std::string("problem: bad kernel/cost shape: ") + e.what());
    }
    m.gamma = j.at("gamma").get<double>();
    m.validate();
    // total discounted cost is bounded by 1/(1-gamma)
    out.risk = parse_risk(j.at("risk"), 1.0 / (1.0 - m.gamma));
    return out;
}

struct SocProblemFile {
    SocProblem problem;
    RiskFamily risk;
    SocGrid grid;
};

/// SOC file per the documented layout: boxes, dynamics, cost, noise, L, grids.
inline SocProblemFile parse_soc_problem(const json& j) {
    SocProblemFile out;
    auto& p = out.problem;
    p.horizon = j.at("T").get<int>();
    for (const auto& ax : j.at("state_box"))
        p.state_box.push_back({ax[0].get<double>(), ax[1].get<double>()});
    for (const auto& ax : j.at("action_box"))
        p.action_box.push_back({ax[0].get<double>(), ax[1].get<double>()});

    const auto& dyn = j.at("dynamics");
    const std::string dkind = dyn.at("kind").get<std::string>();
    if (dkind == "linear") {
        LinearDynamics lin;
        lin.A = dyn.at("A").get<std::vector<std::vector<double>>>();
        lin.B = dyn.at("B").get<std::vector<std::vector<double>>>();
        lin.clamp = dyn.value("clamp", true);
        p.dynamics = std::move(lin);
    } else if (dkind == "tabulated") {
        TabulatedDynamics tab;
        tab.next = dyn.at("next")
                       .get<std::vector<
                           std::vector<std::vector<std::vector<std::vector<double>>>>>>();
        p.dynamics = std::move(tab);
    } else {
        throw config_error("soc: unknown dynamics kind '" + dkind + "'");
    }

    const auto& cj = j.at("cost");
    const std::string ckind = cj.at("kind").get<std::string>();
    if (ckind == "constant") {
        p.cost.kind = SocCost::Kind::Constant;
        p.cost.value = cj.at("value").get<double>();
    } else if (ckind == "affine_abs") {
        p.cost.kind = SocCost::Kind::AffineAbs;
        p.cost.w_state = cj.at("ws").get<std::vector<double>>();
        p.cost.w_action = cj.at("wa").get<std::vector<double>>();
        p.cost.s_ref = cj.at("sref").get<std::vector<double>>();
        p.cost.a_ref = cj.at("aref").get<std::vector<double>>();
        p.cost.bias = cj.value("bias", 0.0);
    } else if (ckind == "tabulated") {
        p.cost.kind = SocCost::Kind::Tabulated;
        p.cost.table = cj.at("values").get<std::vector<std::vector<std::vector<double>>>>();
    } else {
        throw config_error("soc: unknown cost kind '" + ckind + "'");
    }

    for (const auto& sc : j.at("noise")) {
        Scenario s;
        if (sc.at(0).is_array()) {
            s.xi = sc.at(0).get<std::vector<double>>();
        } else {
            s.xi = {sc.at(0).get<double>()};
        }
        s.prob = sc.at(1).get<double>();
        p.noise.push_back(std::move(s));
    }
    p.lipschitz_joint = j.at("L").get<double>();
    p.validate();

    const auto& grids = j.at("grids");
    out.grid.h_state = grids.at("hS").get<double>();
    out.grid.h_action = grids.at("hA").get<double>();
    out.grid.xgrid = parse_xgrid(grids.at("xgrid"));
    out.risk = parse_risk(j.at("risk"), p.horizon + 1.0);
    return out;
}

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

inline ojson policy_to_json(const AugPolicy& pol) {
    ojson j;
    j["deterministic"] = pol.deterministic;
    if (pol.deterministic) {
        j["action"] = pol.action;
    } else {
        j["probs"] = pol.probs;
    }
    j["xnodes"] = pol.xnodes;
    return j;
}

inline AugPolicy parse_policy(const json& j) {
    AugPolicy pol;
    pol.deterministic = j.at("deterministic").get<bool>();
    try {
        if (pol.deterministic) {
            pol.action = j.at("action").get<std::vector<std::vector<std::vector<int>>>>();
        } else {
            pol.probs =
                j.at("probs").get<std::vector<std::vector<std::vector<std::vector<double>>>>>();
        }
        pol.xnodes = j.at("xnodes").get<std::vector<std::vector<double>>>();
    } catch (const std::exception& e) {
        throw config_error(std::string("policy: bad shape: ") + e.what());
    }
    return pol;
}

// ---------------------------------------------------------------------------
// Atomic output
// ---------------------------------------------------------------------------

/// Write-then-rename so partially written outputs are never observed.
inline void write_atomic(const std::string& path, const std::string& contents) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw config_error("cannot write: " + tmp.string());
        out << contents;
        if (!out) throw config_error("short write: " + tmp.string());
    }
    fs::rename(tmp, target);
}

inline std::string dump_output(const ojson& j) { return j.dump(2) + "\n"; }

}  // namespace riskdp

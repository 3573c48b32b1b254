#pragma once

// Optimization-based bound tightening for the voltage magnitudes and
// angle differences that drive the QC envelope quality. Each target is
// minimized and maximized over the relaxation with the uncertain
// injections as box-bounded decision variables, so the tightened bounds
// remain valid for every realization. Updates are applied between rounds
// (Jacobi) so results do not depend on solve order.

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ropf/conic_solver.hpp"
#include "ropf/qc_model.hpp"

namespace ropf {

struct TightenOptions {
    double tol = 1e-3;   // per-unit and radians
    int max_rounds = 5;
    bool lifted_cuts = true;
    SolveOptions solve;
};

struct TightenResult {
    Bounds bounds;
    int rounds = 0;
    double last_change = 0.0;
    std::vector<std::string> warnings;  // solver failures leave bounds unchanged
};

namespace detail {

struct TightenModel {
    ConicProgram prog;
    SharedVars shared;
    ScenarioVars block;
};

inline TightenModel build_tighten_model(const Network& net, const Bounds& bounds,
                                        const UncertaintyModel& um, bool lifted_cuts) {
    TightenModel m;
    m.shared = add_injection_vars(m.prog, net);
    QcBlockOptions opts;
    opts.recourse = true;
    opts.u_variables = true;
    opts.lifted_cuts = lifted_cuts;
    m.block = build_qc_block(m.prog, net, bounds, um, &m.shared, "bt", opts);
    return m;
}

}  // namespace detail

inline TightenResult tighten_bounds(const Network& net, const UncertaintyModel& um,
                                    const Bounds& start, const TightenOptions& opts = {}) {
    TightenResult res;
    res.bounds = start;
    const int n = static_cast<int>(net.buses.size());
    const int nbr = static_cast<int>(net.branches.size());

    for (int round = 0; round < opts.max_rounds; ++round) {
        detail::TightenModel m =
            detail::build_tighten_model(net, res.bounds, um, opts.lifted_cuts);
        Bounds next = res.bounds;
        double change = 0.0;
        KktCache cache;

        // Targets differ only in the objective, so the KKT symbolic
        // analysis is shared across every solve in the round.
        auto extremize = [&](int col, bool maximize) -> std::optional<double> {
            m.prog.set_obj(col, maximize ? -1.0 : 1.0);
            Solution sol = ropf::solve_with_fallback(m.prog, opts.solve, &cache);
            m.prog.set_obj(col, 0.0);
            if (sol.status == SolveStatus::PrimalInfeasible)
                throw std::runtime_error(
                    "bound tightening subproblem infeasible; case data inconsistent");
            if (sol.status != SolveStatus::Optimal) return std::nullopt;
            return maximize ? -sol.obj : sol.obj;
        };

        for (int i = 0; i < n; ++i) {
            auto lo = extremize(m.block.v[i], false);
            auto hi = extremize(m.block.v[i], true);
            if (!lo || !hi) {
                res.warnings.push_back("v bound solve failed at bus index " +
                                       std::to_string(i));
                continue;
            }
            // Never widen; round outward by the solve tolerance.
            double new_lo = std::max(res.bounds.v_lo[i], *lo - 1e-6);
            double new_hi = std::min(res.bounds.v_hi[i], *hi + 1e-6);
            if (new_lo > new_hi) new_lo = new_hi = 0.5 * (new_lo + new_hi);
            change = std::max({change, new_lo - res.bounds.v_lo[i],
                               res.bounds.v_hi[i] - new_hi});
            next.v_lo[i] = new_lo;
            next.v_hi[i] = new_hi;
        }
        for (int k = 0; k < nbr; ++k) {
            if (net.branches[k].reverse < k) continue;  // mirror handles the reverse
            auto lo = extremize(m.block.thd[k], false);
            auto hi = extremize(m.block.thd[k], true);
            if (!lo || !hi) {
                res.warnings.push_back("angle bound solve failed on branch index " +
                                       std::to_string(k));
                continue;
            }
            // thd = theta_i - theta_j; the window stores dmin/dmax of the
            // sigma-shifted difference.
            const double sigma = net.branches[k].sigma;
            double new_lo = std::max(res.bounds.d_lo[k], *lo - sigma - 1e-6);
            double new_hi = std::min(res.bounds.d_hi[k], *hi - sigma + 1e-6);
            if (new_lo > new_hi) new_lo = new_hi = 0.5 * (new_lo + new_hi);
            change = std::max({change, new_lo - res.bounds.d_lo[k],
                               res.bounds.d_hi[k] - new_hi});
            next.d_lo[k] = new_lo;
            next.d_hi[k] = new_hi;
            const int rk = net.branches[k].reverse;
            next.d_lo[rk] = -new_hi;
            next.d_hi[rk] = -new_lo;
        }
        res.bounds = next;
        res.rounds = round + 1;
        res.last_change = change;
        if (change < opts.tol) break;
    }
    return res;
}

inline nlohmann::json to_json(const Bounds& b, const TightenResult* provenance = nullptr) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["v_lo"] = b.v_lo;
    j["v_hi"] = b.v_hi;
    j["d_lo"] = b.d_lo;
    j["d_hi"] = b.d_hi;
    if (provenance) {
        j["tightened"] = true;
        j["rounds"] = provenance->rounds;
        j["last_change"] = provenance->last_change;
        j["warnings"] = provenance->warnings;
    } else {
        j["tightened"] = false;
    }
    return j;
}

inline Bounds bounds_from_json(const nlohmann::json& j) {
    Bounds b;
    b.v_lo = j.at("v_lo").get<std::vector<double>>();
    b.v_hi = j.at("v_hi").get<std::vector<double>>();
    b.d_lo = j.at("d_lo").get<std::vector<double>>();
    b.d_hi = j.at("d_hi").get<std::vector<double>>();
    return b;
}

}  // namespace ropf

#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "ropf/bound_tighten.hpp"
#include "ropf/conic_solver.hpp"
#include "ropf/qc_model.hpp"

using namespace ropf;

namespace {

UncertaintyModel case_uncertainty(const Network& net, int gamma, double ad_minus) {
    UncertaintyParams p;
    p.n_clusters = std::min<int>(5, net.buses.size());
    p.alpha_h_plus = p.alpha_h_minus = 1.0;
    p.alpha_d_minus = ad_minus;
    p.alpha_d_plus = ad_minus / 5.0;
    p.beta = 0.05;
    p.gamma_budget = gamma;
    Clustering c = cluster_buses(net, p);
    auto ng = select_renewable_buses(net, c);
    return build_uncertainty(net, ng, p, c);
}

}  // namespace

TEST_CASE("max_rounds = 0 is a no-op") {
    Network net = testutil::load_case("nesta_case5_pjm");
    Bounds start = Bounds::of(net);
    UncertaintyModel um = deterministic_uncertainty(net);
    TightenOptions opts;
    opts.max_rounds = 0;
    TightenResult res = tighten_bounds(net, um, start, opts);
    CHECK(res.rounds == 0);
    for (size_t i = 0; i < start.v_lo.size(); ++i) {
        CHECK(res.bounds.v_lo[i] == start.v_lo[i]);
        CHECK(res.bounds.v_hi[i] == start.v_hi[i]);
    }
}

TEST_CASE("tightening is monotone and feasibility-preserving") {
    Network net = testutil::load_case("nesta_case5_pjm");
    Bounds start = Bounds::of(net);
    UncertaintyModel um = case_uncertainty(net, 1, 0.05);
    TightenOptions opts;
    opts.max_rounds = 2;
    TightenResult res = tighten_bounds(net, um, start, opts);
    CHECK(res.rounds >= 1);
    for (size_t i = 0; i < start.v_lo.size(); ++i) {
        CHECK(res.bounds.v_lo[i] >= start.v_lo[i] - 1e-12);
        CHECK(res.bounds.v_hi[i] <= start.v_hi[i] + 1e-12);
        CHECK(res.bounds.v_lo[i] <= res.bounds.v_hi[i]);
    }
    for (size_t k = 0; k < start.d_lo.size(); ++k) {
        CHECK(res.bounds.d_lo[k] >= start.d_lo[k] - 1e-12);
        CHECK(res.bounds.d_hi[k] <= start.d_hi[k] + 1e-12);
        CHECK(res.bounds.d_lo[k] <= res.bounds.d_hi[k]);
        // Mirrored windows stay consistent.
        int rk = net.branches[k].reverse;
        CHECK(res.bounds.d_lo[k] == doctest::Approx(-res.bounds.d_hi[rk]));
    }
    // A second pass from the tightened bounds changes little (fixed point).
    TightenOptions again;
    again.max_rounds = 1;
    TightenResult res2 = tighten_bounds(net, um, res.bounds, again);
    for (size_t i = 0; i < start.v_lo.size(); ++i)
        CHECK(std::abs(res2.bounds.v_lo[i] - res.bounds.v_lo[i]) < 0.02);
}

TEST_CASE("deterministic objective does not drop after tightening") {
    Network net = testutil::load_case("nesta_case5_pjm");
    Bounds start = Bounds::of(net);
    UncertaintyModel um = deterministic_uncertainty(net);
    Solution before = solve(build_nominal(net, start, true).prog);
    REQUIRE(before.status == SolveStatus::Optimal);
    TightenOptions opts;
    opts.max_rounds = 3;
    TightenResult res = tighten_bounds(net, um, start, opts);
    Solution after = solve(build_nominal(net, res.bounds, true).prog);
    REQUIRE(after.status == SolveStatus::Optimal);
    MESSAGE("case5 objective before ", before.obj, " after ", after.obj);
    CHECK(after.obj >= before.obj - 1e-6 * std::abs(before.obj));
    // The analytic point check: tightening must keep the AC-feasible
    // region inside, so the known AC optimum stays above the bound.
    CHECK(after.obj <= 17551.89 * (1.0 + 1e-6));
}

TEST_CASE("bounds JSON round-trip with provenance") {
    Network net = testutil::load_case("nesta_case9_wscc");
    Bounds b = Bounds::of(net);
    TightenResult res;
    res.bounds = b;
    res.rounds = 2;
    auto j = to_json(b, &res);
    CHECK(j["tightened"] == true);
    Bounds back = bounds_from_json(j);
    CHECK(back.v_lo == b.v_lo);
    CHECK(back.d_hi == b.d_hi);
}

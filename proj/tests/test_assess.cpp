#include <doctest.h>

#include <cmath>
#include <sstream>

#include "helpers.hpp"
#include "ropf/assess.hpp"

using namespace ropf;

namespace {

UncertaintyModel protocol_uncertainty(const Network& net, int gamma, double ad_minus,
                                      double beta = 0.05) {
    UncertaintyParams p;
    p.n_clusters = std::min<int>(5, net.buses.size());
    p.alpha_h_plus = p.alpha_h_minus = 1.0;
    p.alpha_d_minus = ad_minus;
    p.alpha_d_plus = ad_minus / 5.0;
    p.beta = beta;
    p.gamma_budget = gamma;
    Clustering c = cluster_buses(net, p);
    auto ng = select_renewable_buses(net, c);
    return build_uncertainty(net, ng, p, c);
}

Vertex nominal_of(const UncertaintyModel& um) {
    return deviation_of(um, um.u0p, um.u0q);
}

}  // namespace

TEST_CASE("nominal infeasibility of the nominal optimum is zero") {
    Network net = testutil::load_case("nesta_case5_pjm");
    Bounds bounds = Bounds::of(net);
    UncertaintyParams p;
    p.n_clusters = 5;
    p.alpha_h_plus = p.alpha_h_minus = p.alpha_d_plus = p.alpha_d_minus = 0.0;
    p.beta = 0.05;
    p.gamma_budget = 0;
    Clustering c = cluster_buses(net, p);
    auto ng = select_renewable_buses(net, c);
    UncertaintyModel um = build_uncertainty(net, ng, p, c);
    RobustResult res = solve_robust(net, bounds, um);
    REQUIRE(res.status == RobustStatus::EpsFeasible);
    double v = infeasibility_lb(net, bounds, um, res.sp_star, res.sq_star, nominal_of(um));
    CHECK(v == 0.0);
}

TEST_CASE("zero set point on a one-bus toy has unit normalized imbalance") {
    Network net = parse_case(testutil::single_bus_case());
    Bounds bounds = Bounds::of(net);
    UncertaintyModel um = deterministic_uncertainty(net);
    std::vector<double> sp{0.0}, sq{0.0};
    double v = infeasibility_lb(net, bounds, um, sp, sq, nominal_of(um));
    CHECK(v == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("worst case over a singleton set equals the nominal measure") {
    Network net = testutil::load_case("nesta_case9_wscc");
    Bounds bounds = Bounds::of(net);
    UncertaintyModel um = protocol_uncertainty(net, 0, 0.0, 0.05);
    std::vector<double> sp(net.generators.size(), 0.2), sq(net.generators.size(), 0.0);
    WorstCase wc = worst_case_infeasibility(net, bounds, um, sp, sq);
    double nominal = infeasibility_lb(net, bounds, um, sp, sq, nominal_of(um));
    CHECK(wc.value == doctest::Approx(nominal).epsilon(1e-7));
}

TEST_CASE("eps-feasible solutions pass the normalized worst-case gate") {
    Network net = testutil::load_case("nesta_case5_pjm");
    Bounds bounds = Bounds::of(net);
    UncertaintyModel um = protocol_uncertainty(net, 1, 0.05);
    RobustResult res = solve_robust(net, bounds, um);
    REQUIRE(res.status == RobustStatus::EpsFeasible);
    WorstCase wc = worst_case_infeasibility(net, bounds, um, res.sp_star, res.sq_star);
    CHECK(wc.value <= res.epsilon / net.total_abs_demand() * (1.0 + 1e-6));
    // Nominal dispatch is strictly worse under the worst case.
    UncertaintyModel um0 = protocol_uncertainty(net, 0, 0.0);
    RobustResult nom = solve_robust(net, bounds, um0);
    REQUIRE(nom.status == RobustStatus::EpsFeasible);
    WorstCase wc0 = worst_case_infeasibility(net, bounds, um, nom.sp_star, nom.sq_star);
    MESSAGE("robust worst ", wc.value, " nominal worst ", wc0.value);
    CHECK(wc0.value > wc.value);
}

TEST_CASE("monte carlo: deterministic given the seed, zero-width box degenerates") {
    Network net = testutil::load_case("nesta_case9_wscc");
    Bounds bounds = Bounds::of(net);
    UncertaintyModel um = protocol_uncertainty(net, 1, 0.05);
    RobustResult res = solve_robust(net, bounds, um);
    REQUIRE(res.status == RobustStatus::EpsFeasible);
    AssessStats a = monte_carlo_assess(net, bounds, um, res.sp_star, res.sq_star, 20, 3, 42);
    AssessStats b = monte_carlo_assess(net, bounds, um, res.sp_star, res.sq_star, 20, 3, 42);
    CHECK(a.i_max_mean == b.i_max_mean);
    CHECK(a.mu_mean == b.mu_mean);
    CHECK(a.i_max_ci == b.i_max_ci);

    // All-zero alphas: every sample is the nominal point, variance zero.
    UncertaintyModel um0 = protocol_uncertainty(net, 0, 0.0);
    AssessStats z = monte_carlo_assess(net, bounds, um0, res.sp_star, res.sq_star, 10, 4, 7);
    CHECK(z.i_max_ci == 0.0);
    CHECK(z.mu_ci == 0.0);
}

TEST_CASE("full-budget robust solution is clean over the box on case5") {
    Network net = testutil::load_case("nesta_case5_pjm");
    Bounds bounds = Bounds::of(net);
    UncertaintyModel um = protocol_uncertainty(net, 5, 0.05);
    RobustResult res = solve_robust(net, bounds, um);
    REQUIRE(res.status == RobustStatus::EpsFeasible);
    AssessStats st = monte_carlo_assess(net, bounds, um, res.sp_star, res.sq_star, 50, 5, 11);
    CHECK(st.i_max_mean == 0.0);
    CHECK(st.i_max_ci == 0.0);
    CHECK(st.mu_mean == 0.0);
    CHECK(st.mu_ci == 0.0);
}

TEST_CASE("normalized measure is invariant to a common per-unit rescaling") {
    // The same physical two-bus system expressed on two MVA bases.
    auto case_text = [&](double base) {
        double scale = 100.0 / base;  // per-unit quantities scale by this
        std::ostringstream os;
        os << "function mpc = twobus\nmpc.baseMVA = " << base << ";\nmpc.bus = [\n"
           << "  1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;\n"
           << "  2 1 50 10 0 0 1 1 0 230 1 1.1 0.9;\n];\n"
           << "mpc.gen = [\n  1 0 0 150 -150 1 100 1 300 0;\n];\n"
           << "mpc.gencost = [\n  2 0 0 3 0 20 0;\n];\n"
           << "mpc.branch = [\n  1 2 " << 0.01 / scale << " " << 0.05 / scale << " "
           << 0.02 * scale << " 100 100 100 0 0 1 -30 30;\n];\n";
        return os.str();
    };
    double values[2];
    int idx = 0;
    for (double base : {100.0, 50.0}) {
        Network net = parse_case(case_text(base));
        Bounds bounds = Bounds::of(net);
        UncertaintyModel um = deterministic_uncertainty(net);
        double s_scale = 100.0 / base;
        std::vector<double> sp{0.3 * s_scale}, sq{0.05 * s_scale};
        values[idx++] = infeasibility_lb(net, bounds, um, sp, sq, nominal_of(um));
    }
    CHECK(values[0] == doctest::Approx(values[1]).epsilon(1e-7));
    CHECK(values[0] > 0.0);  // the probe point is genuinely short of demand
}

TEST_CASE("alpha_max saturates at one with ample recourse") {
    Network net = parse_case(testutil::two_bus_case(20.0, 4.0, 200.0));
    Bounds bounds = Bounds::of(net);
    UncertaintyParams p;
    p.n_clusters = 1;
    p.alpha_h_plus = p.alpha_h_minus = 1.0;
    p.gamma_budget = 1;
    Clustering c = cluster_buses(net, p);
    auto ng = select_renewable_buses(net, c);
    double amax = alpha_max_search(net, bounds, p, c, ng, 1.0, 1e-2);
    CHECK(amax == 1.0);
}

TEST_CASE("alpha_max collapses without recourse headroom") {
    // Generation capacity barely covers nominal demand; beta = 0.
    std::string text = testutil::two_bus_case(50.0, 10.0, 100.0);
    auto from = text.find("1 0.0 0.0 150.0 -150.0 1.0 100.0 1 300.0 0.0;");
    REQUIRE(from != std::string::npos);
    text.replace(from, std::string("1 0.0 0.0 150.0 -150.0 1.0 100.0 1 300.0 0.0;").size(),
                 "1 0.0 0.0 150.0 -150.0 1.0 100.0 1 51.5 0.0;");
    Network net = parse_case(text);
    Bounds bounds = Bounds::of(net);
    UncertaintyParams p;
    p.n_clusters = 1;
    p.alpha_h_plus = p.alpha_h_minus = 0.0;  // demand uncertainty only
    p.gamma_budget = 1;
    Clustering c = cluster_buses(net, p);
    double amax = alpha_max_search(net, bounds, p, c, {}, 0.0, 1e-2);
    CHECK(amax >= 0.0);
    CHECK(amax < 0.06);
}

TEST_CASE("alpha_max errors when even the nominal model is infeasible") {
    std::string text = testutil::two_bus_case(50.0, 10.0, 100.0);
    auto from = text.find("1 0.0 0.0 150.0 -150.0 1.0 100.0 1 300.0 0.0;");
    text.replace(from, std::string("1 0.0 0.0 150.0 -150.0 1.0 100.0 1 300.0 0.0;").size(),
                 "1 0.0 0.0 150.0 -150.0 1.0 100.0 1 20.0 0.0;");
    Network net = parse_case(text);
    Bounds bounds = Bounds::of(net);
    UncertaintyParams p;
    p.n_clusters = 1;
    p.alpha_h_plus = p.alpha_h_minus = 0.0;
    p.gamma_budget = 1;
    Clustering c = cluster_buses(net, p);
    CHECK_THROWS(alpha_max_search(net, bounds, p, c, {}, 0.0, 1e-2));
}

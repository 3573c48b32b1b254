#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "ropf/conic_program.hpp"
#include "ropf/conic_solver.hpp"

using namespace ropf;

namespace {

// Small deterministic generator for fixture construction.
struct Lcg {
    uint64_t state;
    explicit Lcg(uint64_t seed) : state(seed) {}
    double uniform() {
        state = state * 6364136223846793005ULL + 1442695040888963407ULL;
        return static_cast<double>((state >> 11) & ((1ULL << 53) - 1)) / (1ULL << 53);
    }
    double range(double lo, double hi) { return lo + (hi - lo) * uniform(); }
};

// Builds a feasible SOCP with a known optimal point by constructing a
// strictly complementary primal-dual pair and deriving (b, c) from it.
struct KnownInstance {
    ConicProgram prog;
    std::vector<double> x_star;
    double obj_star = 0.0;
};

KnownInstance make_known_socp(uint64_t seed, int n, int n_eq, int n_ineq,
                              const std::vector<int>& soc_dims) {
    Lcg rng(seed);
    KnownInstance inst;
    ConicProgram& p = inst.prog;
    std::vector<double> x(n), c(n, 0.0);
    for (int j = 0; j < n; ++j) {
        x[j] = rng.range(-2.0, 2.0);
        p.add_col("x" + std::to_string(j));
    }
    auto rand_row = [&](int nnz) {
        std::vector<Coef> row;
        for (int t = 0; t < nnz; ++t) {
            int col = static_cast<int>(rng.range(0, n));
            col = std::min(col, n - 1);
            row.push_back({col, rng.range(-1.5, 1.5)});
        }
        return row;
    };
    auto activity = [&](const std::vector<Coef>& row) {
        double v = 0.0;
        for (const Coef& cf : row) v += cf.value * x[cf.col];
        return v;
    };
    // Dual contributions accumulate into c = -(Aeq'y + G'z).
    auto accumulate = [&](const std::vector<Coef>& row, double mult) {
        for (const Coef& cf : row) c[cf.col] -= cf.value * mult;
    };

    for (int i = 0; i < n_eq; ++i) {
        auto row = rand_row(3);
        double y = rng.range(-1.0, 1.0);
        // Stored row is b - Ax = 0; multiplier y corresponds to row as stored.
        p.add_eq("eq:" + std::to_string(i), row, activity(row));
        accumulate(row, y);
    }
    for (int i = 0; i < n_ineq; ++i) {
        auto row = rand_row(3);
        bool active = rng.uniform() < 0.5;
        double slack = active ? 0.0 : rng.range(0.1, 1.0);
        double z = active ? rng.range(0.1, 1.0) : 0.0;
        p.add_le("ineq:" + std::to_string(i), row, activity(row) + slack);
        accumulate(row, z);
    }
    int soc_id = 0;
    for (int dim : soc_dims) {
        // Rows are (e,f) then (B,a); slack s = (e'x+f, Bx+a).
        std::vector<std::pair<std::vector<Coef>, double>> rows;
        std::vector<std::vector<Coef>> raw;
        std::vector<double> sval(dim);
        bool active = rng.uniform() < 0.5;
        // Tail entries.
        std::vector<double> tail(dim - 1);
        double tail_norm2 = 0.0;
        for (int t = 0; t < dim - 1; ++t) {
            tail[t] = rng.range(-1.0, 1.0);
            tail_norm2 += tail[t] * tail[t];
        }
        double head = std::sqrt(tail_norm2) + (active ? 0.0 : rng.range(0.2, 1.0));
        sval[0] = head;
        for (int t = 0; t < dim - 1; ++t) sval[t + 1] = tail[t];
        for (int r = 0; r < dim; ++r) {
            auto row = rand_row(3);
            raw.push_back(row);
            rows.push_back({row, sval[r] - activity(row)});
        }
        p.add_soc("soc:" + std::to_string(soc_id++), rows);
        // Complementary dual: z = gamma * (s0, -s_tail) when s is on the
        // boundary, zero when interior. The stored SOC rows are -(e;B), so
        // c = -(G_stored' z) accumulates as +row' z.
        if (active && head > 1e-9) {
            double gamma = rng.range(0.1, 1.0);
            std::vector<double> zval(dim);
            zval[0] = gamma * sval[0];
            for (int t = 1; t < dim; ++t) zval[t] = -gamma * sval[t];
            for (int r = 0; r < dim; ++r)
                for (const Coef& cf : raw[r]) c[cf.col] += cf.value * zval[r];
        }
    }
    for (int j = 0; j < n; ++j) p.set_obj(j, c[j]);
    inst.x_star = x;
    inst.obj_star = p.eval_obj(x);
    return inst;
}

}  // namespace

TEST_CASE("min x subject to x >= 1") {
    ConicProgram p;
    int x = p.add_col("x", 1.0);
    p.add_le("lb:0", {{x, -1.0}}, -1.0);  // -x <= -1
    Solution sol = solve(p);
    REQUIRE(sol.status == SolveStatus::Optimal);
    CHECK(sol.x[0] == doctest::Approx(1.0).epsilon(1e-7));
    CHECK(sol.obj == doctest::Approx(1.0).epsilon(1e-7));
    CHECK(sol.y[0] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("min t subject to ||(3,4)|| <= t") {
    ConicProgram p;
    int t = p.add_col("t", 1.0);
    p.add_soc("cone:0", {{{{t, 1.0}}, 0.0}, {{}, 3.0}, {{}, 4.0}});
    Solution sol = solve(p);
    REQUIRE(sol.status == SolveStatus::Optimal);
    CHECK(sol.obj == doctest::Approx(5.0).epsilon(1e-7));
    CHECK(sol.x[0] == doctest::Approx(5.0).epsilon(1e-7));
}

TEST_CASE("equality and box: min x+y s.t. x+y=2, x>=0.5") {
    ConicProgram p;
    int x = p.add_col("x", 1.0);
    int y = p.add_col("y", 1.0);
    p.add_eq("sum:0", {{x, 1.0}, {y, 1.0}}, 2.0);
    p.add_le("xlb:0", {{x, -1.0}}, -0.5);
    Solution sol = solve(p);
    REQUIRE(sol.status == SolveStatus::Optimal);
    CHECK(sol.obj == doctest::Approx(2.0).epsilon(1e-7));
}

TEST_CASE("quadratic epigraph: min t s.t. x = 3, ||(x, t-1/4)|| <= t+1/4") {
    // t >= x^2 with x pinned at 3 gives t = 9.
    ConicProgram p;
    int x = p.add_col("x");
    int t = p.add_col("t", 1.0);
    p.add_eq("fix:0", {{x, 1.0}}, 3.0);
    p.add_soc("epi:0", {{{{t, 1.0}}, 0.25}, {{{x, 1.0}}, 0.0}, {{{t, 1.0}}, -0.25}});
    Solution sol = solve(p);
    REQUIRE(sol.status == SolveStatus::Optimal);
    CHECK(sol.obj == doctest::Approx(9.0).epsilon(1e-6));
}

TEST_CASE("known-optimum random SOCP fixtures solve to 1e-6") {
    for (uint64_t seed : {7ULL, 21ULL, 99ULL}) {
        auto inst = make_known_socp(seed, 8, 2, 5, {3, 4});
        Solution sol = solve(inst.prog);
        REQUIRE(sol.status == SolveStatus::Optimal);
        CHECK(std::abs(sol.obj - inst.obj_star) <=
              1e-6 * (1.0 + std::abs(inst.obj_star)));
    }
}

TEST_CASE("strong duality at optimum") {
    auto inst = make_known_socp(123, 10, 3, 6, {3});
    Solution sol = solve(inst.prog);
    REQUIRE(sol.status == SolveStatus::Optimal);
    // Dual objective = -b'y; primal = c'x. Both without offset here.
    double dual_obj = 0.0;
    for (int r = 0; r < inst.prog.num_rows(); ++r) dual_obj -= inst.prog.rhs()[r] * sol.y[r];
    CHECK(std::abs(sol.obj - dual_obj) <= 1e-8 * (1.0 + std::abs(sol.obj)));
}

TEST_CASE("primal infeasibility certificate on x >= 1, x <= 0") {
    ConicProgram p;
    int x = p.add_col("x", 1.0);
    p.add_le("lb:0", {{x, -1.0}}, -1.0);
    p.add_le("ub:0", {{x, 1.0}}, 0.0);
    Solution sol = solve(p);
    REQUIRE(sol.status == SolveStatus::PrimalInfeasible);
    // Farkas: y >= 0, A'y ~ 0, b'y < 0.
    CHECK(sol.y[0] >= -1e-9);
    CHECK(sol.y[1] >= -1e-9);
    CHECK(std::abs(-sol.y[0] + sol.y[1]) <= 1e-6 * (sol.y[0] + sol.y[1]));
    CHECK(-1.0 * sol.y[0] + 0.0 * sol.y[1] < 0.0);
}

TEST_CASE("dual infeasibility detected on unbounded problem") {
    ConicProgram p;
    int x = p.add_col("x", -1.0);
    p.add_le("lb:0", {{x, -1.0}}, 0.0);  // x >= 0, min -x unbounded
    Solution sol = solve(p);
    CHECK(sol.status == SolveStatus::DualInfeasible);
}

TEST_CASE("determinism: identical bytes in, identical results out") {
    auto inst = make_known_socp(55, 9, 2, 4, {3, 3});
    Solution a = solve(inst.prog);
    Solution b = solve(inst.prog);
    REQUIRE(a.status == b.status);
    CHECK(a.obj == b.obj);
    CHECK(a.iterations == b.iterations);
    for (size_t i = 0; i < a.x.size(); ++i) CHECK(a.x[i] == b.x[i]);
}

TEST_CASE("text format round-trip preserves solve results") {
    auto inst = make_known_socp(31, 6, 1, 3, {3});
    std::string text = inst.prog.to_text();
    ConicProgram back = ConicProgram::from_text(text);
    Solution s1 = solve(inst.prog);
    Solution s2 = solve(back);
    REQUIRE(s1.status == SolveStatus::Optimal);
    REQUIRE(s2.status == SolveStatus::Optimal);
    CHECK(s1.obj == doctest::Approx(s2.obj).epsilon(1e-12));
}

TEST_CASE("duals requested from non-optimal solution throw") {
    ConicProgram p;
    int x = p.add_col("x", 1.0);
    p.add_le("lb:0", {{x, -1.0}}, -1.0);
    p.add_le("ub:0", {{x, 1.0}}, 0.0);
    Solution sol = solve(p);
    REQUIRE(sol.status == SolveStatus::PrimalInfeasible);
    CHECK_THROWS(extract_row_duals(p, sol, "lb", 1));
}

TEST_CASE("structurally inconsistent program rejected before iteration") {
    ConicProgram p;
    p.add_col("x", 1.0);
    p.add_le("r:0", {{3, 1.0}}, 0.0);  // column 3 does not exist
    CHECK_THROWS(solve(p));
}

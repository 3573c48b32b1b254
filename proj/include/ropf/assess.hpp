#pragma once

// Robustness diagnostics for a fixed set point: the convex infeasibility
// measure (normalized minimum l1 balance adjustment), its worst case over
// the extreme points, Monte Carlo assessment over the uncertainty box,
// and the feasibility frontier in the demand-deviation fraction.

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ropf/robust_engine.hpp"

namespace ropf {

struct AssessOptions {
    double zero_clamp = 1e-7;  // subproblem values below this count as zero
    int parallel_width = 0;
    SolveOptions solve;
};

// Realized deviations of an arbitrary box point (not necessarily an
// extreme point); the cluster indicators stay empty.
inline Vertex deviation_of(const UncertaintyModel& um, const std::vector<double>& up,
                           const std::vector<double>& uq) {
    Vertex v;
    const int n = um.n_buses();
    v.y_plus.assign(um.clustering.n_clusters(), 0);
    v.y_minus.assign(um.clustering.n_clusters(), 0);
    v.up_plus.assign(n, 0.0);
    v.up_minus.assign(n, 0.0);
    v.uq_plus.assign(n, 0.0);
    v.uq_minus.assign(n, 0.0);
    for (int i = 0; i < n; ++i) {
        v.up_plus[i] = std::max(0.0, up[i] - um.u0p[i]);
        v.up_minus[i] = std::max(0.0, um.u0p[i] - up[i]);
        v.uq_plus[i] = std::max(0.0, uq[i] - um.u0q[i]);
        v.uq_minus[i] = std::max(0.0, um.u0q[i] - uq[i]);
    }
    return v;
}

// Convex lower bound on the infeasibility of (s_hat, u): the optimal value
// of the slack subproblem normalized by total absolute demand.
inline double infeasibility_lb(const Network& net, const Bounds& bounds,
                               const UncertaintyModel& um, const std::vector<double>& sp,
                               const std::vector<double>& sq, const Vertex& realization,
                               const AssessOptions& opts = {}, KktCachePool* pool = nullptr) {
    ConicProgram sub = build_subproblem(net, bounds, um, realization, sp, sq);
    KktCache* cache = pool ? pool->get(sub) : nullptr;
    Solution sol = ropf::solve_with_fallback(sub, opts.solve, cache);
    if (sol.status != SolveStatus::Optimal)
        throw std::runtime_error("infeasibility subproblem failed: " +
                                 std::string(to_string(sol.status)));
    double value = std::max(0.0, sol.obj);
    if (value < opts.zero_clamp) value = 0.0;
    return value / net.total_abs_demand();
}

struct WorstCase {
    double value = 0.0;
    int vertex = -1;
};

inline WorstCase worst_case_infeasibility(const Network& net, const Bounds& bounds,
                                          const UncertaintyModel& um,
                                          const std::vector<double>& sp,
                                          const std::vector<double>& sq,
                                          VertexMode mode = VertexMode::ExactBudget,
                                          const AssessOptions& opts = {}) {
    auto vertices = enumerate_vertices(um, mode);
    WorstCase out;
    KktCachePool pool;
    for (size_t i = 0; i < vertices.size(); ++i) {
        double v = infeasibility_lb(net, bounds, um, sp, sq, vertices[i], opts, &pool);
        if (v > out.value) {
            out.value = v;
            out.vertex = static_cast<int>(i);
        }
    }
    if (out.vertex < 0 && !vertices.empty()) out.vertex = 0;
    return out;
}

struct AssessStats {
    double i_max_mean = 0.0, i_max_ci = 0.0;  // per-batch max violation
    double mu_mean = 0.0, mu_ci = 0.0;        // per-batch mean violation
    int n_samples = 0, n_replications = 0;
    uint64_t seed = 0;

    nlohmann::json to_json() const {
        return {{"schema_version", 1}, {"i_max_mean", i_max_mean}, {"i_max_ci", i_max_ci},
                {"mu_mean", mu_mean},  {"mu_ci", mu_ci},           {"n_samples", n_samples},
                {"n_replications", n_replications}, {"seed", seed}};
    }
};

namespace detail {

// 97.5% Student-t quantiles for small degrees of freedom.
inline double student_t_975(int df) {
    static const double table[] = {12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306,
                                   2.262,  2.228, 2.201, 2.179, 2.160, 2.145, 2.131, 2.120,
                                   2.110,  2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064,
                                   2.060,  2.056, 2.052, 2.048, 2.045, 2.042};
    if (df < 1) return 0.0;
    if (df <= 30) return table[df - 1];
    if (df <= 40) return 2.021;
    if (df <= 60) return 2.000;
    return 1.96;
}

// Counter-based stream: the value depends only on (seed, replication,
// sample, component), so worker scheduling cannot change results.
inline double uniform01(uint64_t seed, uint64_t rep, uint64_t sample, uint64_t comp) {
    uint64_t x = seed ^ (rep * 0x9E3779B97F4A7C15ULL) ^ (sample * 0xBF58476D1CE4E5B9ULL) ^
                 (comp * 0x94D049BB133111EBULL);
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ULL;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBULL;
    x ^= x >> 31;
    return static_cast<double>(x >> 11) / static_cast<double>(1ULL << 53);
}

}  // namespace detail

// Uniform sampling over the box of the deviation parametrization (the
// full hyper-rectangle, deliberately including points outside the budget
// polytope), replicated batches, Student-t confidence halfwidths.
inline AssessStats monte_carlo_assess(const Network& net, const Bounds& bounds,
                                      const UncertaintyModel& um,
                                      const std::vector<double>& sp,
                                      const std::vector<double>& sq, int n_samples = 1000,
                                      int n_replications = 20, uint64_t seed = 0,
                                      const AssessOptions& opts = {}) {
    const int n = um.n_buses();
    std::vector<double> batch_max(n_replications, 0.0), batch_mu(n_replications, 0.0);

    int width = opts.parallel_width > 0
                    ? opts.parallel_width
                    : static_cast<int>(std::thread::hardware_concurrency());
    width = std::max(1, width);

    auto run_batch = [&](int rep, KktCachePool& pool) {
        double vmax = 0.0, vsum = 0.0;
        std::vector<double> up(n), uq(n);
        for (int s = 0; s < n_samples; ++s) {
            for (int i = 0; i < n; ++i) {
                double a = detail::uniform01(seed, rep, s, 2 * i);
                double b = detail::uniform01(seed, rep, s, 2 * i + 1);
                up[i] = um.up_lo[i] + a * (um.up_hi[i] - um.up_lo[i]);
                uq[i] = um.uq_lo[i] + b * (um.uq_hi[i] - um.uq_lo[i]);
            }
            double v = infeasibility_lb(net, bounds, um, sp, sq, deviation_of(um, up, uq),
                                        opts, &pool);
            vmax = std::max(vmax, v);
            vsum += v;
        }
        batch_max[rep] = vmax;
        batch_mu[rep] = vsum / n_samples;
    };

    if (width == 1 || n_replications == 1) {
        KktCachePool pool;
        for (int rep = 0; rep < n_replications; ++rep) run_batch(rep, pool);
    } else {
        std::vector<std::thread> workers;
        for (int w = 0; w < width; ++w)
            workers.emplace_back([&, w] {
                KktCachePool pool;  // caches are not shared across threads
                for (int rep = w; rep < n_replications; rep += width) run_batch(rep, pool);
            });
        for (auto& t : workers) t.join();
    }

    AssessStats st;
    st.n_samples = n_samples;
    st.n_replications = n_replications;
    st.seed = seed;
    auto mean_ci = [&](const std::vector<double>& v, double* mean, double* ci) {
        double m = 0.0;
        for (double x : v) m += x;
        m /= v.size();
        double var = 0.0;
        for (double x : v) var += (x - m) * (x - m);
        var = v.size() > 1 ? var / (v.size() - 1) : 0.0;
        *mean = m;
        *ci = detail::student_t_975(static_cast<int>(v.size()) - 1) *
              std::sqrt(var / v.size());
    };
    mean_ci(batch_max, &st.i_max_mean, &st.i_max_ci);
    mean_ci(batch_mu, &st.mu_mean, &st.mu_ci);
    return st;
}

struct FrontierPoint {
    double beta = 0.0;
    double alpha_max = 0.0;
};

// Largest demand-deviation fraction alpha_d_minus (with alpha_d_plus tied
// at a fifth of it) for which the robust model stays eps-feasible, by
// bisection. A run that exhausts its iteration budget counts as
// infeasible, keeping the reported frontier inside the true one.
inline double alpha_max_search(const Network& net, const Bounds& bounds,
                               const UncertaintyParams& params_template,
                               const Clustering& clustering, const std::vector<int>& ng,
                               double beta, double tol = 1e-3,
                               const RobustOptions& robust_opts_template = {}) {
    auto feasible = [&](double alpha) {
        UncertaintyParams p = params_template;
        p.beta = beta;
        p.alpha_d_minus = alpha;
        p.alpha_d_plus = alpha / 5.0;
        UncertaintyModel um = build_uncertainty(net, ng, p, clustering);
        RobustOptions opts = robust_opts_template;
        opts.feasibility_only = true;
        opts.max_iter = opts.max_iter > 0 ? std::min(opts.max_iter, 50) : 50;
        try {
            RobustResult res = solve_robust(net, bounds, um, opts);
            return res.status == RobustStatus::EpsFeasible;
        } catch (const std::exception&) {
            // Numerical trouble at the feasibility boundary counts as
            // infeasible, like an exhausted iteration budget.
            return false;
        }
    };
    if (!feasible(0.0))
        throw std::runtime_error("model infeasible even without demand deviation");
    if (feasible(1.0)) return 1.0;
    double lo = 0.0, hi = 1.0;
    while (hi - lo > tol) {
        double mid = 0.5 * (lo + hi);
        (feasible(mid) ? lo : hi) = mid;
    }
    return lo;
}

inline std::string frontier_csv(const std::vector<FrontierPoint>& pts) {
    std::ostringstream os;
    os << "beta,alpha_d_minus_max\n";
    for (const auto& p : pts) os << p.beta << "," << p.alpha_max << "\n";
    return os.str();
}

}  // namespace ropf

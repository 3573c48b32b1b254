#pragma once

// Cutting-plane solver for the robust QC-relaxed dispatch problem: master
// over the first-stage injections, vertex-enumeration separation over the
// budget set's extreme points, feasibility cuts from subproblem duals,
// scenario appending for recurring worst cases, and the regularized
// (proximal) variant with its lower-bound closure test.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ropf/conic_solver.hpp"
#include "ropf/qc_model.hpp"

namespace ropf {

struct Cut {
    std::vector<double> lambda_p, lambda_q;  // per bus
    double z = 0.0;                          // intercept
    int source_vertex = -1;
    int iteration = 0;

    // Cut value at a set point; positive means violated.
    double violation(const Network& net, const std::vector<double>& sp,
                     const std::vector<double>& sq) const {
        double v = z;
        for (size_t g = 0; g < net.generators.size(); ++g) {
            int i = net.bus_index(net.generators[g].bus);
            v -= lambda_p[i] * sp[g] + lambda_q[i] * sq[g];
        }
        return v;
    }
};

struct RobustOptions {
    double epsilon = -1.0;  // absolute; <0 means 1e-4 * sum(|dp|+|dq|)
    int n_c = 1;            // recurrences before a scenario is appended
    int max_iter = 100;
    double rho = 0.0;       // proximal weight; 0 disables the regularized variant
    double eta = 1e-4;      // lower-bound closure tolerance
    int parallel_width = 0; // 0 = hardware concurrency
    int top_k_cuts = 1;
    bool scenario_appending = true;
    VertexMode vertex_mode = VertexMode::ExactBudget;
    bool lifted_cuts = true;
    bool feasibility_only = false;  // zero objective; used by the frontier search
    SolveOptions solve;
};

enum class RobustStatus { EpsFeasible, Infeasible, IterLimit };

inline const char* to_string(RobustStatus s) {
    switch (s) {
        case RobustStatus::EpsFeasible: return "EpsFeasible";
        case RobustStatus::Infeasible: return "Infeasible";
        default: return "IterLimit";
    }
}

struct IterationRecord {
    int k = 0;
    double z_feas = 0.0;
    double v_star = std::numeric_limits<double>::quiet_NaN();
    double wall_seconds = 0.0;
    int cuts_added = 0;
    int scenarios_appended = 0;
    int worst_vertex = -1;
    std::string note;
};

struct RobustResult {
    std::vector<double> sp_star, sq_star;
    double lower_bound = std::numeric_limits<double>::quiet_NaN();
    RobustStatus status = RobustStatus::IterLimit;
    std::vector<Cut> cuts;
    std::vector<int> appended;  // vertex indices in enumeration order
    std::vector<IterationRecord> trace;
    double epsilon = 0.0;
    int iterations = 0;
    std::string certificate;  // Farkas log on infeasibility

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["schema_version"] = 1;
        j["status"] = ropf::to_string(status);
        j["lower_bound"] = lower_bound;
        j["epsilon"] = epsilon;
        j["iterations"] = iterations;
        j["sp"] = sp_star;
        j["sq"] = sq_star;
        j["appended"] = appended;
        for (const Cut& c : cuts)
            j["cuts"].push_back({{"lambda_p", c.lambda_p},
                                 {"lambda_q", c.lambda_q},
                                 {"z", c.z},
                                 {"source_vertex", c.source_vertex},
                                 {"iteration", c.iteration}});
        for (const IterationRecord& r : trace)
            j["trace"].push_back({{"k", r.k},
                                  {"z_feas", r.z_feas},
                                  {"v_star", r.v_star},
                                  {"wall_seconds", r.wall_seconds},
                                  {"cuts_added", r.cuts_added},
                                  {"scenarios_appended", r.scenarios_appended},
                                  {"worst_vertex", r.worst_vertex}});
        if (!certificate.empty()) j["certificate"] = certificate;
        return j;
    }

    std::string trace_csv() const {
        std::ostringstream os;
        os << "k,z_feas,v_star,wall_seconds,cuts_added,scenarios_appended,worst_vertex\n";
        for (const IterationRecord& r : trace)
            os << r.k << "," << r.z_feas << "," << r.v_star << "," << r.wall_seconds << ","
               << r.cuts_added << "," << r.scenarios_appended << "," << r.worst_vertex << "\n";
        return os.str();
    }
};

struct MasterModel {
    ConicProgram prog;
    SharedVars shared;
};

// Master program: first-stage box and cost, feasibility cuts, appended
// scenario blocks, optional proximal term rho/2 ||s - s_hat||^2.
inline MasterModel build_master(const Network& net, const Bounds& bounds,
                                const UncertaintyModel& um, const std::vector<Cut>& cuts,
                                const std::vector<std::pair<int, const Vertex*>>& appended,
                                double rho = 0.0, const std::vector<double>* sp_hat = nullptr,
                                const std::vector<double>* sq_hat = nullptr,
                                bool lifted_cuts = true, bool with_cost = true) {
    MasterModel m;
    m.shared = add_injection_vars(m.prog, net);
    if (with_cost) add_dispatch_cost(m.prog, net, m.shared);
    for (size_t c = 0; c < cuts.size(); ++c) {
        std::vector<Coef> row;
        for (size_t g = 0; g < net.generators.size(); ++g) {
            int i = net.bus_index(net.generators[g].bus);
            if (cuts[c].lambda_p[i] != 0.0) row.push_back({m.shared.sp[g], -cuts[c].lambda_p[i]});
            if (cuts[c].lambda_q[i] != 0.0) row.push_back({m.shared.sq[g], -cuts[c].lambda_q[i]});
        }
        m.prog.add_le("cut:" + std::to_string(c), row, -cuts[c].z);
    }
    for (const auto& [vid, vertex] : appended) {
        QcBlockOptions opts;
        opts.recourse = true;
        opts.lifted_cuts = lifted_cuts;
        opts.vertex = vertex;
        build_qc_block(m.prog, net, bounds, um, &m.shared, "a" + std::to_string(vid), opts);
    }
    if (rho > 0.0) {
        if (!sp_hat || !sq_hat)
            throw std::invalid_argument("regularized master needs a proximal center");
        int r = m.prog.add_col("prox_r", 0.5 * rho);
        // ||(s - s_hat, r - 1/4)|| <= r + 1/4  <=>  ||s - s_hat||^2 <= r
        std::vector<std::pair<std::vector<Coef>, double>> rows;
        rows.push_back({{{r, 1.0}}, 0.25});
        for (size_t g = 0; g < net.generators.size(); ++g) {
            rows.push_back({{{m.shared.sp[g], 1.0}}, -(*sp_hat)[g]});
            rows.push_back({{{m.shared.sq[g], 1.0}}, -(*sq_hat)[g]});
        }
        rows.push_back({{{r, 1.0}}, -0.25});
        m.prog.add_soc("prox", rows);
    }
    return m;
}

// Feasibility subproblem for one extreme point: minimize the l1 balance
// violation of the fixed set point under that realization.
inline ConicProgram build_subproblem(const Network& net, const Bounds& bounds,
                                     const UncertaintyModel& um, const Vertex& vertex,
                                     const std::vector<double>& sp_hat,
                                     const std::vector<double>& sq_hat,
                                     bool lifted_cuts = true) {
    ConicProgram prog;
    QcBlockOptions opts;
    opts.recourse = true;
    opts.balance_slacks = true;
    opts.lifted_cuts = lifted_cuts;
    opts.vertex = &vertex;
    opts.sp_fixed = &sp_hat;
    opts.sq_fixed = &sq_hat;
    build_qc_block(prog, net, bounds, um, nullptr, "sub", opts);
    return prog;
}

struct SeparationOutcome {
    double z_feas = 0.0;
    int worst = -1;
    std::vector<double> lambda_p, lambda_q;
    std::vector<double> values;                    // per vertex, -inf if excluded
    std::vector<std::pair<double, int>> ranking;   // by value desc, index asc
    bool solver_failure = false;
    std::string failure_note;
};

class Separator {
  public:
    Separator(const Network& net, const Bounds& bounds, const UncertaintyModel& um,
              const std::vector<Vertex>& vertices, bool lifted_cuts, SolveOptions solve_opts)
        : net_(net), bounds_(bounds), um_(um), vertices_(vertices),
          lifted_cuts_(lifted_cuts), solve_opts_(solve_opts),
          caches_(vertices.size()) {}

    const std::vector<Vertex>& vertices() const { return vertices_; }

    // Solves every non-excluded subproblem and returns the most violated
    // realization; ties break toward the lowest vertex index.
    SeparationOutcome separate(const std::vector<double>& sp_hat,
                               const std::vector<double>& sq_hat,
                               const std::vector<bool>& excluded, int width) {
        SeparationOutcome out;
        const int n_v = static_cast<int>(vertices_.size());
        out.values.assign(n_v, -std::numeric_limits<double>::infinity());
        std::vector<Solution> sols(n_v);
        if (width <= 0) width = static_cast<int>(std::thread::hardware_concurrency());
        width = std::max(1, std::min(width, n_v));

        std::vector<std::string> failures(width);
        auto worker = [&](int w) {
            for (int i = w; i < n_v; i += width) {
                if (excluded[i]) continue;
                ConicProgram prog = build_subproblem(net_, bounds_, um_, vertices_[i],
                                                     sp_hat, sq_hat, lifted_cuts_);
                sols[i] = ropf::solve_with_fallback(prog, solve_opts_, &caches_[i]);
                if (sols[i].status != SolveStatus::Optimal) {
                    failures[w] = "separation subproblem failed at vertex " +
                                  std::to_string(i) + " (" + vertices_[i].key() +
                                  "): " + to_string(sols[i].status);
                    return;
                }
                out.values[i] = std::max(0.0, sols[i].obj);
            }
        };
        if (width == 1) {
            worker(0);
        } else {
            std::vector<std::thread> pool;
            for (int w = 0; w < width; ++w) pool.emplace_back(worker, w);
            for (auto& t : pool) t.join();
        }
        for (const auto& fmsg : failures)
            if (!fmsg.empty()) {
                out.solver_failure = true;
                out.failure_note = fmsg;
                return out;
            }

        for (int i = 0; i < n_v; ++i)
            if (!excluded[i]) out.ranking.push_back({out.values[i], i});
        std::sort(out.ranking.begin(), out.ranking.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        if (out.ranking.empty()) {
            out.z_feas = 0.0;
            return out;
        }
        out.worst = out.ranking.front().second;
        out.z_feas = out.ranking.front().first;
        out.lambda_p = duals_of(sols[out.worst], out.worst, "balance_p");
        out.lambda_q = duals_of(sols[out.worst], out.worst, "balance_q");
        last_solutions_ = std::move(sols);
        return out;
    }

    // Balance-row duals of a ranked vertex from the latest separation.
    std::pair<std::vector<double>, std::vector<double>> duals_for(int vertex) const {
        return {duals_of(last_solutions_[vertex], vertex, "balance_p"),
                duals_of(last_solutions_[vertex], vertex, "balance_q")};
    }

  private:
    std::vector<double> duals_of(const Solution& sol, int vertex, const std::string& fam) const {
        (void)vertex;
        const int n = static_cast<int>(net_.buses.size());
        std::vector<double> lam(n, 0.0);
        // Label layout fixed by build_subproblem: fam:sub:i at the same row
        // positions for every vertex; rebuild indices once.
        if (label_rows_.empty()) {
            ConicProgram probe = build_subproblem(net_, bounds_, um_, vertices_[0],
                                                  std::vector<double>(net_.generators.size(), 0.0),
                                                  std::vector<double>(net_.generators.size(), 0.0),
                                                  lifted_cuts_);
            for (int i = 0; i < n; ++i) {
                label_rows_["balance_p:" + std::to_string(i)] =
                    probe.row_by_label("balance_p:sub:" + std::to_string(i));
                label_rows_["balance_q:" + std::to_string(i)] =
                    probe.row_by_label("balance_q:sub:" + std::to_string(i));
            }
        }
        for (int i = 0; i < n; ++i)
            lam[i] = sol.y[label_rows_.at(fam + ":" + std::to_string(i))];
        return lam;
    }

    const Network& net_;
    const Bounds& bounds_;
    const UncertaintyModel& um_;
    std::vector<Vertex> vertices_;
    bool lifted_cuts_;
    SolveOptions solve_opts_;
    std::vector<KktCache> caches_;
    std::vector<Solution> last_solutions_;
    mutable std::map<std::string, int> label_rows_;
};

// Most violated cut at the probing point, from the subproblem duals.
inline Cut make_cut(const Network& net, double z_feas, const std::vector<double>& lambda_p,
                    const std::vector<double>& lambda_q, const std::vector<double>& sp_hat,
                    const std::vector<double>& sq_hat, int source_vertex, int iteration) {
    if (!(z_feas > 0.0))
        throw std::invalid_argument("no cut is warranted at a feasible probing point");
    Cut cut;
    cut.lambda_p = lambda_p;
    cut.lambda_q = lambda_q;
    cut.source_vertex = source_vertex;
    cut.iteration = iteration;
    double shift = 0.0;
    for (size_t g = 0; g < net.generators.size(); ++g) {
        int i = net.bus_index(net.generators[g].bus);
        shift += lambda_p[i] * sp_hat[g] + lambda_q[i] * sq_hat[g];
    }
    cut.z = z_feas + shift;
    double linf = 0.0;
    for (size_t i = 0; i < lambda_p.size(); ++i)
        linf = std::max({linf, std::abs(lambda_p[i]), std::abs(lambda_q[i])});
    if (linf > 1.0 + 1e-6)
        throw std::runtime_error("balance duals exceed the unit box; check solve quality");
    return cut;
}

inline double default_epsilon(const Network& net) { return 1e-4 * net.total_abs_demand(); }

// Algorithm of the cutting-plane engine. rho = 0 follows the plain loop;
// rho > 0 adds the proximal term and the eta closure test on the
// unregularized lower bound.
inline RobustResult solve_robust(const Network& net, const Bounds& bounds,
                                 const UncertaintyModel& um, const RobustOptions& opts = {}) {
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    auto elapsed = [&] {
        return std::chrono::duration<double>(clock::now() - t0).count();
    };

    RobustResult res;
    res.epsilon = opts.epsilon > 0 ? opts.epsilon : default_epsilon(net);
    std::vector<Vertex> vertices = enumerate_vertices(um, opts.vertex_mode);
    Separator sep(net, bounds, um, vertices, opts.lifted_cuts, opts.solve);

    std::vector<bool> excluded(vertices.size(), false);
    std::vector<int> counters(vertices.size(), 0);
    std::vector<std::pair<int, const Vertex*>> appended;
    // A singleton set IS the deterministic model; write it out directly so
    // the loop terminates at the first probe.
    if (um.singleton() && !vertices.empty()) {
        appended.push_back({0, &sep.vertices()[0]});
        excluded[0] = true;
        res.appended.push_back(0);
    }

    const size_t n_g = net.generators.size();
    std::vector<double> sp_hat(n_g, 0.0), sq_hat(n_g, 0.0);
    std::vector<double> center_p, center_q;  // proximal center

    auto solve_master = [&](double rho, const std::vector<double>* cp,
                            const std::vector<double>* cq)
        -> std::pair<Solution, MasterModel> {
        MasterModel m = build_master(net, bounds, um, res.cuts, appended, rho, cp, cq,
                                     opts.lifted_cuts, !opts.feasibility_only);
        Solution sol = ropf::solve_with_fallback(m.prog, opts.solve);
        return {std::move(sol), std::move(m)};
    };
    auto read_setpoint = [&](const Solution& sol, const MasterModel& m,
                             std::vector<double>& sp, std::vector<double>& sq) {
        for (size_t g = 0; g < n_g; ++g) {
            sp[g] = sol.x[m.shared.sp[g]];
            sq[g] = sol.x[m.shared.sq[g]];
        }
    };
    auto master_cost = [&](const std::vector<double>& sp, const std::vector<double>& sq) {
        return dispatch_cost(net, sp, sq);
    };

    // Iteration 1 master: no incumbent yet, so no proximal term.
    double v_star;
    {
        auto [sol, m] = solve_master(0.0, nullptr, nullptr);
        if (sol.status == SolveStatus::PrimalInfeasible) {
            res.status = RobustStatus::Infeasible;
            res.certificate = "initial master infeasible";
            return res;
        }
        if (sol.status != SolveStatus::Optimal)
            throw std::runtime_error("master solve failed: " +
                                     std::string(to_string(sol.status)));
        read_setpoint(sol, m, sp_hat, sq_hat);
        v_star = sol.obj;
    }
    center_p = sp_hat;
    center_q = sq_hat;

    for (int k = 1; k <= opts.max_iter; ++k) {
        SeparationOutcome out =
            sep.separate(sp_hat, sq_hat, excluded, opts.parallel_width);
        if (out.solver_failure) throw std::runtime_error(out.failure_note);

        IterationRecord rec;
        rec.k = k;
        rec.z_feas = out.z_feas;
        rec.v_star = v_star;
        rec.worst_vertex = out.worst;

        if (out.z_feas <= res.epsilon) {
            if (opts.rho > 0.0) {
                // Closure test: the regularized incumbent cost must sit
                // within eta of the unregularized master bound.
                double ub = master_cost(sp_hat, sq_hat);
                auto [msol, mm] = solve_master(0.0, nullptr, nullptr);
                if (msol.status == SolveStatus::PrimalInfeasible) {
                    res.status = RobustStatus::Infeasible;
                    res.certificate = "lower-bound master infeasible";
                    rec.wall_seconds = elapsed();
                    res.trace.push_back(rec);
                    break;
                }
                double vstar_lb = msol.obj;
                rec.note = "closure";
                if ((ub - vstar_lb) / std::max(1e-12, std::abs(vstar_lb)) <= opts.eta) {
                    res.status = RobustStatus::EpsFeasible;
                    res.lower_bound = vstar_lb;
                    res.sp_star = sp_hat;
                    res.sq_star = sq_hat;
                    res.iterations = k;
                    rec.v_star = vstar_lb;
                    rec.wall_seconds = elapsed();
                    res.trace.push_back(rec);
                    break;
                }
                // Move to the unregularized incumbent and keep cutting.
                read_setpoint(msol, mm, sp_hat, sq_hat);
                center_p = sp_hat;
                center_q = sq_hat;
                v_star = vstar_lb;
                rec.wall_seconds = elapsed();
                res.trace.push_back(rec);
                continue;
            }
            res.status = RobustStatus::EpsFeasible;
            res.lower_bound = v_star;
            res.sp_star = sp_hat;
            res.sq_star = sq_hat;
            res.iterations = k;
            rec.wall_seconds = elapsed();
            res.trace.push_back(rec);
            break;
        }

        // Degenerate cut: a violated subproblem whose duals vanish proves
        // the master region empty.
        double linf = 0.0;
        for (size_t i = 0; i < out.lambda_p.size(); ++i)
            linf = std::max({linf, std::abs(out.lambda_p[i]), std::abs(out.lambda_q[i])});
        if (linf <= 1e-10) {
            res.status = RobustStatus::Infeasible;
            res.certificate = "degenerate cut: zero duals with positive violation";
            rec.note = "degenerate-cut";
            rec.wall_seconds = elapsed();
            res.trace.push_back(rec);
            break;
        }

        ++counters[out.worst];
        bool append_now = opts.scenario_appending && counters[out.worst] >= opts.n_c;
        if (append_now) {
            appended.push_back({out.worst, &sep.vertices()[out.worst]});
            excluded[out.worst] = true;
            res.appended.push_back(out.worst);
            rec.scenarios_appended = 1;
        } else {
            int added = 0;
            for (const auto& [value, idx] : out.ranking) {
                if (added >= opts.top_k_cuts) break;
                if (value <= res.epsilon) break;
                auto [lp, lq] = sep.duals_for(idx);
                Cut cut = make_cut(net, value, lp, lq, sp_hat, sq_hat, idx, k);
                bool dup = false;
                for (const Cut& old : res.cuts) {
                    double diff = std::abs(old.z - cut.z);
                    for (size_t i = 0; i < lp.size(); ++i)
                        diff = std::max({diff, std::abs(old.lambda_p[i] - cut.lambda_p[i]),
                                         std::abs(old.lambda_q[i] - cut.lambda_q[i])});
                    if (diff <= 1e-10) {
                        dup = true;
                        break;
                    }
                }
                if (!dup) {
                    res.cuts.push_back(cut);
                    ++added;
                }
            }
            rec.cuts_added = added;
        }

        auto [sol, m] = solve_master(opts.rho, opts.rho > 0 ? &center_p : nullptr,
                                     opts.rho > 0 ? &center_q : nullptr);
        if (sol.status == SolveStatus::PrimalInfeasible) {
            res.status = RobustStatus::Infeasible;
            res.certificate = "master infeasible; Farkas certificate available";
            res.iterations = k;
            rec.wall_seconds = elapsed();
            res.trace.push_back(rec);
            return res;
        }
        if (sol.status != SolveStatus::Optimal)
            throw std::runtime_error("master solve failed: " +
                                     std::string(to_string(sol.status)));
        read_setpoint(sol, m, sp_hat, sq_hat);
        if (opts.rho > 0.0) {
            center_p = sp_hat;
            center_q = sq_hat;
            // The regularized objective is not the lower bound; keep the
            // last certified bound until the next closure solve.
        } else {
            v_star = sol.obj;
        }
        rec.wall_seconds = elapsed();
        res.trace.push_back(rec);

        if (k == opts.max_iter) {
            res.status = RobustStatus::IterLimit;
            res.lower_bound = v_star;
            res.sp_star = sp_hat;
            res.sq_star = sq_hat;
            res.iterations = k;
        }
    }
    if (res.trace.empty()) {
        res.status = RobustStatus::IterLimit;
        res.lower_bound = v_star;
        res.sp_star = sp_hat;
        res.sq_star = sq_hat;
    }
    return res;
}

// Independent post-hoc check: the exact worst violation over every
// extreme point (no exclusions), used to confirm eps-feasibility.
inline double max_violation_over_vertices(const Network& net, const Bounds& bounds,
                                          const UncertaintyModel& um,
                                          const std::vector<double>& sp,
                                          const std::vector<double>& sq,
                                          VertexMode mode = VertexMode::ExactBudget,
                                          bool lifted_cuts = true,
                                          SolveOptions solve_opts = {}) {
    std::vector<Vertex> vertices = enumerate_vertices(um, mode);
    double worst = 0.0;
    KktCachePool pool;
    for (size_t i = 0; i < vertices.size(); ++i) {
        ConicProgram prog = build_subproblem(net, bounds, um, vertices[i], sp, sq, lifted_cuts);
        Solution sol = ropf::solve_with_fallback(prog, solve_opts, pool.get(prog));
        if (sol.status != SolveStatus::Optimal)
            throw std::runtime_error("post-hoc subproblem failed at vertex " +
                                     std::to_string(i));
        worst = std::max(worst, sol.obj);
    }
    return worst;
}

}  // namespace ropf

#pragma once

// Uncertainty-set construction: hop-distance clustering of buses via a
// facility location problem, renewable-bus selection, box/budget bounds on
// net-load injections, and enumeration of the extreme points used by the
// separation step.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <queue>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ropf/case_io.hpp"

namespace ropf {

struct UncertaintyParams {
    int n_clusters = 5;
    int radius = -1;  // hop threshold for assignment eligibility; -1 = auto
    double alpha_h_plus = 1.0, alpha_h_minus = 1.0;
    double alpha_d_plus = 0.0, alpha_d_minus = 0.0;
    double beta = 0.05;
    double power_factor = 0.98;
    int gamma_budget = 1;
    double renewable_share = 0.05;

    void check() const {
        for (double a : {alpha_h_plus, alpha_h_minus, alpha_d_plus, alpha_d_minus})
            if (!(a >= 0.0 && a <= 1.0))
                throw std::invalid_argument("alpha fractions must lie in [0,1]");
        if (!(beta >= 0.0 && beta <= 1.0))
            throw std::invalid_argument("beta must lie in [0,1]");
        if (!(power_factor > 0.0 && power_factor <= 1.0))
            throw std::invalid_argument("power factor must lie in (0,1]");
        if (gamma_budget < 0) throw std::invalid_argument("budget must be nonnegative");
        if (n_clusters < 1) throw std::invalid_argument("need at least one cluster");
    }
};

struct Clustering {
    std::vector<int> facilities;          // bus indices, sorted ascending
    std::vector<int> assignment;          // bus index -> cluster index
    std::vector<std::vector<int>> distances;  // hop counts
    double objective = 0.0;
    bool heuristic = false;

    int n_clusters() const { return static_cast<int>(facilities.size()); }
    std::vector<std::vector<int>> members() const {
        std::vector<std::vector<int>> m(facilities.size());
        for (size_t i = 0; i < assignment.size(); ++i) m[assignment[i]].push_back(static_cast<int>(i));
        return m;
    }
};

struct UncertaintyModel {
    std::vector<double> u0p, u0q;          // nominal injections
    std::vector<double> up_hi, up_lo;      // bounds on u^p
    std::vector<double> uq_hi, uq_lo;      // bounds on u^q
    std::vector<double> hp, hq;            // renewable nominals
    std::vector<double> zeta_plus, zeta_minus;
    std::vector<double> obar_p, obar_q;    // recourse caps
    Clustering clustering;
    int gamma_budget = 0;
    double alpha_h_plus = 0.0;             // retained for the tightening caps

    int n_buses() const { return static_cast<int>(u0p.size()); }
    bool singleton() const {
        for (int i = 0; i < n_buses(); ++i)
            if (up_hi[i] - up_lo[i] > 1e-15 || uq_hi[i] - uq_lo[i] > 1e-15) return false;
        return true;
    }
};

struct Vertex {
    std::vector<uint8_t> y_plus, y_minus;  // per cluster
    std::vector<double> up_plus, up_minus, uq_plus, uq_minus;  // per bus

    int active_count() const {
        int n = 0;
        for (size_t m = 0; m < y_plus.size(); ++m) n += y_plus[m] + y_minus[m];
        return n;
    }
    std::string key() const {
        std::string s;
        for (size_t m = 0; m < y_plus.size(); ++m)
            s += y_plus[m] ? '+' : (y_minus[m] ? '-' : '.');
        return s;
    }
};

// BFS hop distances over the undirected graph of in-service lines.
inline std::vector<std::vector<int>> hop_distances(const Network& net) {
    const int n = static_cast<int>(net.buses.size());
    std::vector<std::vector<int>> adj(n);
    for (const Branch& br : net.branches)
        adj[net.bus_index(br.from)].push_back(net.bus_index(br.to));
    std::vector<std::vector<int>> dist(n, std::vector<int>(n, -1));
    for (int s = 0; s < n; ++s) {
        std::queue<int> q;
        dist[s][s] = 0;
        q.push(s);
        while (!q.empty()) {
            int u = q.front();
            q.pop();
            for (int v : adj[u])
                if (dist[s][v] < 0) {
                    dist[s][v] = dist[s][u] + 1;
                    q.push(v);
                }
        }
    }
    for (int s = 0; s < n; ++s)
        for (int t = 0; t < n; ++t)
            if (dist[s][t] < 0) {
                std::ostringstream os;
                os << "network is disconnected: no path between bus "
                   << net.buses[s].id << " and bus " << net.buses[t].id;
                throw std::runtime_error(os.str());
            }
    return dist;
}

namespace detail {

// Objective of a facility set: each bus goes to its nearest open facility
// within the eligibility radius. Returns +inf if some bus is stranded.
inline double assignment_cost(const std::vector<std::vector<int>>& dist,
                              const std::vector<int>& facilities, int radius) {
    const int n = static_cast<int>(dist.size());
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        int best = std::numeric_limits<int>::max();
        for (int f : facilities) best = std::min(best, dist[i][f]);
        if (best > radius) return std::numeric_limits<double>::infinity();
        total += best;
    }
    return total;
}

inline void assign_to_nearest(const std::vector<std::vector<int>>& dist,
                              const std::vector<int>& facilities, Clustering& out) {
    const int n = static_cast<int>(dist.size());
    out.assignment.assign(n, -1);
    out.objective = 0.0;
    for (int i = 0; i < n; ++i) {
        int best = std::numeric_limits<int>::max(), arg = -1;
        for (size_t m = 0; m < facilities.size(); ++m) {
            if (dist[i][facilities[m]] < best) {
                best = dist[i][facilities[m]];
                arg = static_cast<int>(m);
            }
        }
        out.assignment[i] = arg;
        out.objective += best;
    }
}

struct PMedianSearch {
    const std::vector<std::vector<int>>& dist;
    int n, k, radius;
    std::vector<int> best_set;
    double best_cost = std::numeric_limits<double>::infinity();
    std::vector<double> dmin_all;  // per-bus lower bound on final distance

    PMedianSearch(const std::vector<std::vector<int>>& d, int k_, int radius_)
        : dist(d), n(static_cast<int>(d.size())), k(k_), radius(radius_) {
        dmin_all.assign(n, std::numeric_limits<double>::infinity());
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if (dist[i][j] <= radius)
                    dmin_all[i] = std::min(dmin_all[i], static_cast<double>(dist[i][j]));
    }

    void run() {
        std::vector<int> chosen;
        std::vector<double> cur(n, std::numeric_limits<double>::infinity());
        dfs(0, chosen, cur);
    }

    void dfs(int next, std::vector<int>& chosen, std::vector<double>& cur) {
        if (static_cast<int>(chosen.size()) == k) {
            double total = 0.0;
            for (int i = 0; i < n; ++i) {
                if (cur[i] > radius) return;
                total += cur[i];
            }
            if (total < best_cost) {
                best_cost = total;
                best_set = chosen;
            }
            return;
        }
        int remaining = k - static_cast<int>(chosen.size());
        if (n - next < remaining) return;
        // Admissible bound: every bus can at best reach its globally nearest
        // eligible facility.
        double bound = 0.0;
        for (int i = 0; i < n; ++i) bound += std::min(cur[i], dmin_all[i]);
        if (bound >= best_cost) return;
        for (int f = next; f <= n - remaining; ++f) {
            std::vector<double> save = cur;
            for (int i = 0; i < n; ++i)
                if (dist[i][f] <= radius)
                    cur[i] = std::min(cur[i], static_cast<double>(dist[i][f]));
            chosen.push_back(f);
            dfs(f + 1, chosen, cur);
            chosen.pop_back();
            cur = save;
        }
    }
};

}  // namespace detail

// Facility-location clustering. Exact (lexicographically smallest optimum)
// up to 30 buses; greedy plus pairwise-swap local search beyond, flagged
// as heuristic in the result.
inline Clustering cluster_buses(const Network& net, const UncertaintyParams& params,
                                uint64_t seed = 0) {
    params.check();
    const int n = static_cast<int>(net.buses.size());
    const int k = std::min(params.n_clusters, n);
    Clustering out;
    out.distances = hop_distances(net);
    int radius = params.radius;
    if (radius < 0) {
        if (n <= 300) {
            int diam = 0;
            for (const auto& row : out.distances)
                diam = std::max(diam, *std::max_element(row.begin(), row.end()));
            radius = diam;
        } else {
            radius = 5;
        }
    }
    // Stranded buses have an empty eligibility set regardless of the
    // facility choice.
    std::vector<int> stranded;
    for (int i = 0; i < n; ++i) {
        bool any = false;
        for (int j = 0; j < n && !any; ++j) any = out.distances[i][j] <= radius;
        if (!any) stranded.push_back(net.buses[i].id);
    }
    if (!stranded.empty()) {
        std::string msg = "radius leaves buses without any eligible facility:";
        for (int b : stranded) msg += " " + std::to_string(b);
        throw std::runtime_error(msg);
    }

    if (n <= 30) {
        detail::PMedianSearch search(out.distances, k, radius);
        search.run();
        if (!std::isfinite(search.best_cost))
            throw std::runtime_error("facility location infeasible at this radius");
        out.facilities = search.best_set;
        out.heuristic = false;
    } else {
        // Greedy seeding with a few deterministic restarts, then swaps.
        auto cost_of = [&](const std::vector<int>& f) {
            return detail::assignment_cost(out.distances, f, radius);
        };
        std::vector<int> best;
        double best_cost = std::numeric_limits<double>::infinity();
        uint64_t state = seed * 6364136223846793005ULL + 1442695040888963407ULL;
        for (int restart = 0; restart < 3; ++restart) {
            std::vector<int> fac;
            if (restart > 0) {
                std::set<int> pick;
                while (static_cast<int>(pick.size()) < 1) {
                    state = state * 6364136223846793005ULL + 1442695040888963407ULL;
                    pick.insert(static_cast<int>((state >> 33) % n));
                }
                fac.assign(pick.begin(), pick.end());
            }
            while (static_cast<int>(fac.size()) < k) {
                int best_add = -1;
                double best_add_cost = std::numeric_limits<double>::infinity();
                for (int cand = 0; cand < n; ++cand) {
                    if (std::find(fac.begin(), fac.end(), cand) != fac.end()) continue;
                    fac.push_back(cand);
                    double c = cost_of(fac);
                    fac.pop_back();
                    if (c < best_add_cost) {
                        best_add_cost = c;
                        best_add = cand;
                    }
                }
                fac.push_back(best_add);
                std::sort(fac.begin(), fac.end());
            }
            bool improved = true;
            int guard = 0;
            while (improved && guard++ < 200) {
                improved = false;
                double cur = cost_of(fac);
                for (size_t m = 0; m < fac.size() && !improved; ++m) {
                    for (int cand = 0; cand < n && !improved; ++cand) {
                        if (std::find(fac.begin(), fac.end(), cand) != fac.end()) continue;
                        std::vector<int> trial = fac;
                        trial[m] = cand;
                        std::sort(trial.begin(), trial.end());
                        if (cost_of(trial) < cur) {
                            fac = trial;
                            improved = true;
                        }
                    }
                }
            }
            double c = cost_of(fac);
            if (c < best_cost || (c == best_cost && fac < best)) {
                best_cost = c;
                best = fac;
            }
        }
        out.facilities = best;
        out.heuristic = true;
    }
    std::sort(out.facilities.begin(), out.facilities.end());
    detail::assign_to_nearest(out.distances, out.facilities, out);
    return out;
}

// Per cluster, the two buses with the largest summed incident line rating
// (one if the cluster is a singleton). Ties break toward the lower bus id.
inline std::vector<int> select_renewable_buses(const Network& net, const Clustering& clustering) {
    const int n = static_cast<int>(net.buses.size());
    std::vector<double> capacity(n, 0.0);
    for (const Branch& br : net.branches) capacity[net.bus_index(br.from)] += br.rate;
    std::vector<int> selected;
    for (const auto& cluster : clustering.members()) {
        std::vector<int> sorted = cluster;
        std::sort(sorted.begin(), sorted.end(), [&](int a, int b) {
            if (capacity[a] != capacity[b]) return capacity[a] > capacity[b];
            return net.buses[a].id < net.buses[b].id;
        });
        selected.push_back(sorted[0]);
        if (sorted.size() > 1) selected.push_back(sorted[1]);
    }
    std::sort(selected.begin(), selected.end());
    return selected;
}

// Assembles the uncertainty model from the percentage parametrization.
// Demand magnitudes enter the deviation widths so that the nominal point
// stays inside the box even on data with negative reactive demand.
inline UncertaintyModel build_uncertainty(const Network& net, const std::vector<int>& ng,
                                          const UncertaintyParams& params,
                                          const Clustering& clustering) {
    params.check();
    const int n = static_cast<int>(net.buses.size());
    for (int i : ng)
        if (i < 0 || i >= n) throw std::invalid_argument("renewable bus index out of range");
    UncertaintyModel um;
    um.clustering = clustering;
    um.gamma_budget = std::min(params.gamma_budget, clustering.n_clusters());
    um.alpha_h_plus = params.alpha_h_plus;
    um.u0p.resize(n);
    um.u0q.resize(n);
    um.up_hi.resize(n);
    um.up_lo.resize(n);
    um.uq_hi.resize(n);
    um.uq_lo.resize(n);
    um.hp.assign(n, 0.0);
    um.hq.assign(n, 0.0);
    um.zeta_plus.assign(n, 0.0);
    um.zeta_minus.assign(n, 0.0);
    um.obar_p.assign(n, 0.0);
    um.obar_q.assign(n, 0.0);

    double total_pd = 0.0;
    for (const Bus& b : net.buses) total_pd += b.pd;
    const double gamma_pf = params.power_factor;
    const double q_factor = std::sqrt(1.0 / (gamma_pf * gamma_pf) - 1.0);
    if (!ng.empty()) {
        const double hp_each = params.renewable_share * total_pd / static_cast<double>(ng.size());
        for (int i : ng) {
            um.hp[i] = hp_each;
            um.hq[i] = q_factor * hp_each;
        }
    }

    for (int i = 0; i < n; ++i) {
        const double dp = net.buses[i].pd, dq = net.buses[i].qd;
        const double adp = std::abs(dp), adq = std::abs(dq);
        um.u0p[i] = um.hp[i] - dp;
        um.u0q[i] = um.hq[i] - dq;
        um.up_hi[i] = um.u0p[i] + params.alpha_h_plus * um.hp[i] + params.alpha_d_plus * adp;
        um.up_lo[i] = um.u0p[i] - params.alpha_h_minus * um.hp[i] - params.alpha_d_minus * adp;
        um.uq_hi[i] = um.u0q[i] + params.alpha_h_plus * um.hq[i] + params.alpha_d_plus * adq;
        um.uq_lo[i] = um.u0q[i] - params.alpha_h_minus * um.hq[i] - params.alpha_d_minus * adq;

        const double num_p = params.alpha_h_plus * um.hp[i];
        const double den_p = num_p + params.alpha_d_plus * adp;
        um.zeta_plus[i] = den_p > 0.0 ? num_p / den_p : 0.0;
        const double num_m = params.alpha_h_minus * um.hp[i];
        const double den_m = num_m + params.alpha_d_minus * adp;
        um.zeta_minus[i] = den_m > 0.0 ? num_m / den_m : 0.0;

        double cap_p = 0.0, cap_q = 0.0;
        for (int g : net.gen_map[i]) {
            cap_p += net.generators[g].pmax;
            cap_q += net.generators[g].qmax;
        }
        um.obar_p[i] = std::max(0.0, params.beta * cap_p);
        um.obar_q[i] = std::max(0.0, params.beta * cap_q);

        if (um.up_lo[i] > um.u0p[i] + 1e-12 || um.u0p[i] > um.up_hi[i] + 1e-12 ||
            um.uq_lo[i] > um.u0q[i] + 1e-12 || um.u0q[i] > um.uq_hi[i] + 1e-12)
            throw std::runtime_error("nominal injection left the uncertainty box at bus " +
                                     std::to_string(net.buses[i].id));
    }
    return um;
}

namespace detail {

inline Vertex realize_vertex(const UncertaintyModel& um, const std::vector<uint8_t>& yp,
                             const std::vector<uint8_t>& ym) {
    Vertex v;
    v.y_plus = yp;
    v.y_minus = ym;
    const int n = um.n_buses();
    v.up_plus.assign(n, 0.0);
    v.up_minus.assign(n, 0.0);
    v.uq_plus.assign(n, 0.0);
    v.uq_minus.assign(n, 0.0);
    for (int i = 0; i < n; ++i) {
        const int m = um.clustering.assignment[i];
        if (yp[m]) {
            v.up_plus[i] = um.up_hi[i] - um.u0p[i];
            v.uq_plus[i] = um.uq_hi[i] - um.u0q[i];
        }
        if (ym[m]) {
            v.up_minus[i] = um.u0p[i] - um.up_lo[i];
            v.uq_minus[i] = um.u0q[i] - um.uq_lo[i];
        }
    }
    return v;
}

}  // namespace detail

enum class VertexMode { ExactBudget, UpToBudget };

// Extreme points of the budget set. The default emits every sign pattern
// with exactly min(Gamma, |M|) active clusters, matching the separation
// counts C(|M|, Gamma) * 2^Gamma; the exhaustive mode adds all patterns
// with fewer active clusters. Ordering is lexicographic by (active set,
// sign pattern) and deterministic.
inline std::vector<Vertex> enumerate_vertices(const UncertaintyModel& um,
                                              VertexMode mode = VertexMode::ExactBudget) {
    const int M = um.clustering.n_clusters();
    const int gamma = std::min(um.gamma_budget, M);
    std::vector<Vertex> out;
    std::vector<int> levels;
    if (mode == VertexMode::ExactBudget) levels = {gamma};
    else {
        for (int g = 0; g <= gamma; ++g) levels.push_back(g);
    }
    for (int g : levels) {
        if (g == 0) {
            out.push_back(detail::realize_vertex(um, std::vector<uint8_t>(M, 0),
                                                 std::vector<uint8_t>(M, 0)));
            continue;
        }
        std::vector<int> subset(g);
        std::iota(subset.begin(), subset.end(), 0);
        while (true) {
            for (int signs = 0; signs < (1 << g); ++signs) {
                std::vector<uint8_t> yp(M, 0), ym(M, 0);
                for (int t = 0; t < g; ++t) {
                    const bool minus = (signs >> (g - 1 - t)) & 1;
                    if (minus) ym[subset[t]] = 1;
                    else yp[subset[t]] = 1;
                }
                out.push_back(detail::realize_vertex(um, yp, ym));
            }
            int pos = g - 1;
            while (pos >= 0 && subset[pos] == M - g + pos) --pos;
            if (pos < 0) break;
            ++subset[pos];
            for (int t = pos + 1; t < g; ++t) subset[t] = subset[t - 1] + 1;
        }
    }
    return out;
}

inline nlohmann::json to_json(const Clustering& c) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["facilities"] = c.facilities;
    j["assignment"] = c.assignment;
    j["objective"] = c.objective;
    j["heuristic"] = c.heuristic;
    return j;
}

inline nlohmann::json to_json(const UncertaintyModel& um) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["u0p"] = um.u0p;
    j["u0q"] = um.u0q;
    j["up_hi"] = um.up_hi;
    j["up_lo"] = um.up_lo;
    j["uq_hi"] = um.uq_hi;
    j["uq_lo"] = um.uq_lo;
    j["hp"] = um.hp;
    j["hq"] = um.hq;
    j["zeta_plus"] = um.zeta_plus;
    j["zeta_minus"] = um.zeta_minus;
    j["obar_p"] = um.obar_p;
    j["obar_q"] = um.obar_q;
    j["gamma_budget"] = um.gamma_budget;
    j["clustering"] = to_json(um.clustering);
    return j;
}

inline std::string vertices_csv(const std::vector<Vertex>& vs) {
    std::ostringstream os;
    os << "index,pattern,active\n";
    for (size_t i = 0; i < vs.size(); ++i)
        os << i << "," << vs[i].key() << "," << vs[i].active_count() << "\n";
    return os.str();
}

}  // namespace ropf

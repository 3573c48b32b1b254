#pragma once

// Command-line pipeline: one JSON config with full defaulting drives the
// subcommands; every run writes machine-readable artifacts (JSON + CSV)
// plus a short human summary on standard output. Numbers in the summary
// are printed from the same JSON document that lands on disk.
//
// Exit codes: 0 success; 1 model infeasible (a valid, reported outcome);
// 2 input or configuration error; 3 solver failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ropf/assess.hpp"
#include "ropf/bound_tighten.hpp"
#include "ropf/case_io.hpp"
#include "ropf/robust_engine.hpp"

namespace ropf {

struct RunConfig {
    std::string case_path;
    std::string out_dir = "out";
    int workers = 0;
    bool no_tighten = false;
    uint64_t seed = 0;

    UncertaintyParams uncertainty;
    RobustOptions robust;
    TightenOptions tighten;
    int mc_samples = 1000;
    int mc_replications = 20;
    double zero_clamp = 1e-7;
    std::vector<double> alphamax_betas = {0.01, 0.02, 0.03, 0.04, 0.05,
                                          0.06, 0.07, 0.08, 0.09, 0.10};
    double alphamax_tol = 1e-3;

    // Everything, defaults included, echoed into artifacts.
    nlohmann::json echo() const {
        nlohmann::json j;
        j["schema_version"] = 1;
        j["case_path"] = case_path;
        j["out_dir"] = out_dir;
        j["workers"] = workers;
        j["no_tighten"] = no_tighten;
        j["seed"] = seed;
        j["uncertainty"] = {{"n_clusters", uncertainty.n_clusters},
                            {"radius", uncertainty.radius},
                            {"alpha_h_plus", uncertainty.alpha_h_plus},
                            {"alpha_h_minus", uncertainty.alpha_h_minus},
                            {"alpha_d_plus", uncertainty.alpha_d_plus},
                            {"alpha_d_minus", uncertainty.alpha_d_minus},
                            {"beta", uncertainty.beta},
                            {"power_factor", uncertainty.power_factor},
                            {"gamma_budget", uncertainty.gamma_budget},
                            {"renewable_share", uncertainty.renewable_share}};
        j["robust"] = {{"epsilon", robust.epsilon},
                       {"n_c", robust.n_c},
                       {"max_iter", robust.max_iter},
                       {"rho", robust.rho},
                       {"eta", robust.eta},
                       {"top_k_cuts", robust.top_k_cuts},
                       {"scenario_appending", robust.scenario_appending},
                       {"exhaustive_vertices", robust.vertex_mode == VertexMode::UpToBudget},
                       {"lifted_cuts", robust.lifted_cuts}};
        j["tighten"] = {{"tol", tighten.tol}, {"max_rounds", tighten.max_rounds}};
        j["assess"] = {{"n_samples", mc_samples},
                       {"n_replications", mc_replications},
                       {"zero_clamp", zero_clamp}};
        j["alphamax"] = {{"betas", alphamax_betas}, {"tol", alphamax_tol}};
        return j;
    }

    static RunConfig from_json(const nlohmann::json& j) {
        RunConfig c;
        c.case_path = j.value("case_path", "");
        c.out_dir = j.value("out_dir", "out");
        c.workers = j.value("workers", 0);
        c.no_tighten = j.value("no_tighten", false);
        c.seed = j.value("seed", uint64_t{0});
        if (j.contains("uncertainty")) {
            const auto& u = j["uncertainty"];
            c.uncertainty.n_clusters = u.value("n_clusters", 5);
            c.uncertainty.radius = u.value("radius", -1);
            c.uncertainty.alpha_h_plus = u.value("alpha_h_plus", 1.0);
            c.uncertainty.alpha_h_minus = u.value("alpha_h_minus", 1.0);
            c.uncertainty.alpha_d_plus = u.value("alpha_d_plus", 0.0);
            c.uncertainty.alpha_d_minus = u.value("alpha_d_minus", 0.0);
            c.uncertainty.beta = u.value("beta", 0.05);
            c.uncertainty.power_factor = u.value("power_factor", 0.98);
            c.uncertainty.gamma_budget = u.value("gamma_budget", 1);
            c.uncertainty.renewable_share = u.value("renewable_share", 0.05);
        }
        if (j.contains("robust")) {
            const auto& r = j["robust"];
            c.robust.epsilon = r.value("epsilon", -1.0);
            c.robust.n_c = r.value("n_c", 1);
            c.robust.max_iter = r.value("max_iter", 100);
            c.robust.rho = r.value("rho", 0.0);
            c.robust.eta = r.value("eta", 1e-4);
            c.robust.top_k_cuts = r.value("top_k_cuts", 1);
            c.robust.scenario_appending = r.value("scenario_appending", true);
            c.robust.vertex_mode = r.value("exhaustive_vertices", false)
                                       ? VertexMode::UpToBudget
                                       : VertexMode::ExactBudget;
            c.robust.lifted_cuts = r.value("lifted_cuts", true);
        }
        if (j.contains("tighten")) {
            c.tighten.tol = j["tighten"].value("tol", 1e-3);
            c.tighten.max_rounds = j["tighten"].value("max_rounds", 5);
        }
        if (j.contains("assess")) {
            c.mc_samples = j["assess"].value("n_samples", 1000);
            c.mc_replications = j["assess"].value("n_replications", 20);
            c.zero_clamp = j["assess"].value("zero_clamp", 1e-7);
        }
        if (j.contains("alphamax")) {
            if (j["alphamax"].contains("betas"))
                c.alphamax_betas = j["alphamax"]["betas"].get<std::vector<double>>();
            c.alphamax_tol = j["alphamax"].value("tol", 1e-3);
        }
        return c;
    }
};

namespace cli_detail {

inline uint64_t fnv1a(const std::string& text) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string read_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read file: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write file: " + path);
    f << content;
}

struct Pipeline {
    RunConfig cfg;
    Network net;
    std::string case_text;
    uint64_t case_hash = 0;

    Clustering clustering;
    std::vector<int> renewables;
    std::optional<UncertaintyModel> um;

    void load() {
        if (cfg.case_path.empty()) throw std::runtime_error("config error: case_path missing");
        if (!std::filesystem::exists(cfg.case_path))
            throw std::runtime_error("config error: case file not found: " + cfg.case_path);
        case_text = read_file(cfg.case_path);
        case_hash = fnv1a(case_text);
        net = parse_case(case_text,
                         std::filesystem::path(cfg.case_path).stem().string());
        std::filesystem::create_directories(cfg.out_dir);
    }

    std::string artifact(const std::string& name) const {
        return (std::filesystem::path(cfg.out_dir) / name).string();
    }

    void build_uncertainty_model() {
        cfg.uncertainty.check();
        clustering = cluster_buses(net, cfg.uncertainty, cfg.seed);
        renewables = select_renewable_buses(net, clustering);
        um = ropf::build_uncertainty(net, renewables, cfg.uncertainty, clustering);
    }

    // Tightened bounds, cached by case-content hash and the parameters
    // that shape the tightening model.
    Bounds bounds_for_run(bool allow_tighten, nlohmann::json* provenance) {
        Bounds start = Bounds::of(net);
        if (!allow_tighten || cfg.no_tighten) {
            if (provenance) *provenance = to_json(start, nullptr);
            return start;
        }
        std::ostringstream key;
        key << std::hex << case_hash << "-" << cfg.uncertainty.gamma_budget << "-"
            << cfg.uncertainty.alpha_d_minus << "-" << cfg.uncertainty.alpha_d_plus << "-"
            << cfg.uncertainty.beta << "-" << cfg.tighten.max_rounds << "-" << cfg.tighten.tol;
        std::string cache_path = artifact("bounds-" + key.str() + ".json");
        if (std::filesystem::exists(cache_path)) {
            auto j = nlohmann::json::parse(read_file(cache_path));
            if (provenance) *provenance = j;
            return bounds_from_json(j);
        }
        if (!um) build_uncertainty_model();
        TightenOptions topts = cfg.tighten;
        TightenResult res = tighten_bounds(net, *um, start, topts);
        nlohmann::json j = to_json(res.bounds, &res);
        write_file(cache_path, j.dump(2));
        if (provenance) *provenance = j;
        return res.bounds;
    }
};

}  // namespace cli_detail

// Entry point shared by the binary and the tests. `argv` excludes the
// program name.
inline int run_cli(const std::vector<std::string>& argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
    using nlohmann::json;
    if (argv.empty()) {
        err << "usage: ropf <validate|cluster|tighten|nominal|robust|assess|alphamax>"
            << " [case.m] [--config cfg.json] [--out dir] [--workers n]"
            << " [--no-tighten] [--gamma g] [--seed s]\n";
        return 2;
    }
    std::string command = argv[0];
    std::string config_path, case_path, out_dir;
    std::optional<int> workers, gamma;
    std::optional<uint64_t> seed;
    bool no_tighten = false;
    for (size_t i = 1; i < argv.size(); ++i) {
        const std::string& a = argv[i];
        auto need_value = [&](const char* flag) -> std::string {
            if (i + 1 >= argv.size())
                throw std::runtime_error(std::string("config error: missing value for ") + flag);
            return argv[++i];
        };
        try {
            if (a == "--config") config_path = need_value("--config");
            else if (a == "--out") out_dir = need_value("--out");
            else if (a == "--workers") workers = std::stoi(need_value("--workers"));
            else if (a == "--gamma") gamma = std::stoi(need_value("--gamma"));
            else if (a == "--seed") seed = std::stoull(need_value("--seed"));
            else if (a == "--no-tighten") no_tighten = true;
            else if (!a.empty() && a[0] != '-' && case_path.empty()) case_path = a;
            else {
                err << "config error: unknown argument " << a << "\n";
                return 2;
            }
        } catch (const std::exception& e) {
            err << e.what() << "\n";
            return 2;
        }
    }

    cli_detail::Pipeline pipe;
    try {
        if (!config_path.empty()) {
            if (!std::filesystem::exists(config_path)) {
                err << "config error: config file not found: " << config_path << "\n";
                return 2;
            }
            pipe.cfg = RunConfig::from_json(json::parse(cli_detail::read_file(config_path)));
        }
        if (!case_path.empty()) pipe.cfg.case_path = case_path;
        if (!out_dir.empty()) pipe.cfg.out_dir = out_dir;
        if (workers) pipe.cfg.workers = *workers;
        if (gamma) pipe.cfg.uncertainty.gamma_budget = *gamma;
        if (seed) pipe.cfg.seed = *seed;
        if (no_tighten) pipe.cfg.no_tighten = true;
        pipe.cfg.robust.parallel_width = pipe.cfg.workers;
        pipe.load();
    } catch (const std::exception& e) {
        err << e.what() << "\n";
        return 2;
    }

    try {
        if (command == "validate") {
            ValidationReport rep = validate(pipe.net);
            json j;
            j["config"] = pipe.cfg.echo();
            j["ok"] = rep.ok();
            for (const auto& f : rep.findings)
                j["findings"].push_back({{"code", f.code}, {"message", f.message}});
            cli_detail::write_file(pipe.artifact("network.json"), to_json(pipe.net).dump(2));
            cli_detail::write_file(pipe.artifact("validation.json"), j.dump(2));
            out << "case " << pipe.net.name << ": " << pipe.net.buses.size() << " buses, "
                << pipe.net.branches.size() / 2 << " lines, " << pipe.net.generators.size()
                << " generators\n";
            out << "validation: " << (rep.ok() ? "clean" : "findings") << "\n";
            for (const auto& f : rep.findings) out << "  " << f.code << ": " << f.message << "\n";
            return rep.ok() ? 0 : 1;
        }

        if (command == "cluster") {
            pipe.build_uncertainty_model();
            json j;
            j["config"] = pipe.cfg.echo();
            j["clustering"] = to_json(pipe.clustering);
            j["renewable_buses"] = pipe.renewables;
            j["uncertainty_model"] = to_json(*pipe.um);
            cli_detail::write_file(pipe.artifact("clustering.json"), j.dump(2));
            auto vertices = enumerate_vertices(*pipe.um, pipe.cfg.robust.vertex_mode);
            cli_detail::write_file(pipe.artifact("vertices.csv"), vertices_csv(vertices));
            out << "clusters: " << pipe.clustering.n_clusters() << " objective "
                << json(pipe.clustering.objective).dump() << (pipe.clustering.heuristic ? " (heuristic)" : " (exact)")
                << "\n";
            out << "renewable buses:";
            for (int b : pipe.renewables) out << " " << pipe.net.buses[b].id;
            out << "\nvertices: " << vertices.size() << "\n";
            return 0;
        }

        if (command == "tighten") {
            pipe.build_uncertainty_model();
            Bounds start = Bounds::of(pipe.net);
            TightenResult res = tighten_bounds(pipe.net, *pipe.um, start, pipe.cfg.tighten);
            json j = to_json(res.bounds, &res);
            j["config"] = pipe.cfg.echo();
            cli_detail::write_file(pipe.artifact("bounds.json"), j.dump(2));
            out << "tightened in " << res.rounds << " rounds, last change "
                << json(res.last_change).dump() << "\n";
            return 0;
        }

        if (command == "nominal") {
            json prov;
            // The plain deterministic relaxation of the case itself.
            Bounds bounds = Bounds::of(pipe.net);
            if (!pipe.cfg.no_tighten) {
                UncertaintyModel det = deterministic_uncertainty(pipe.net);
                TightenResult tres = tighten_bounds(pipe.net, det, bounds, pipe.cfg.tighten);
                bounds = tres.bounds;
                prov = to_json(bounds, &tres);
            } else {
                prov = to_json(bounds, nullptr);
            }
            NominalModel m = build_nominal(pipe.net, bounds, pipe.cfg.robust.lifted_cuts);
            Solution sol = solve(m.prog, pipe.cfg.robust.solve);
            if (sol.status == SolveStatus::PrimalInfeasible) {
                json j;
                j["config"] = pipe.cfg.echo();
                j["status"] = "Infeasible";
                cli_detail::write_file(pipe.artifact("nominal.json"), j.dump(2));
                out << "nominal: infeasible\n";
                return 1;
            }
            if (sol.status != SolveStatus::Optimal) {
                err << "solver failure: " << to_string(sol.status) << "\n";
                return 3;
            }
            json j;
            j["config"] = pipe.cfg.echo();
            j["status"] = "Optimal";
            j["objective"] = sol.obj;
            j["bounds"] = prov;
            for (size_t g = 0; g < pipe.net.generators.size(); ++g) {
                j["sp"].push_back(sol.x[m.shared.sp[g]]);
                j["sq"].push_back(sol.x[m.shared.sq[g]]);
            }
            cli_detail::write_file(pipe.artifact("nominal.json"), j.dump(2));
            out << "nominal objective " << j["objective"].dump() << "\n";
            return 0;
        }

        if (command == "robust") {
            pipe.build_uncertainty_model();
            json prov;
            Bounds bounds = pipe.bounds_for_run(true, &prov);
            RobustResult res = solve_robust(pipe.net, bounds, *pipe.um, pipe.cfg.robust);
            json j = res.to_json();
            j["config"] = pipe.cfg.echo();
            j["bounds"] = prov;
            cli_detail::write_file(pipe.artifact("robust.json"), j.dump(2));
            cli_detail::write_file(pipe.artifact("trace.csv"), res.trace_csv());
            out << "status " << to_string(res.status) << "\n";
            if (res.status == RobustStatus::Infeasible) {
                out << "robust model infeasible: " << res.certificate << "\n";
                return 1;
            }
            out << "lower bound " << j["lower_bound"].dump() << " after "
                << res.iterations << " iterations, " << res.cuts.size() << " cuts, "
                << res.appended.size() << " appended scenarios\n";
            return res.status == RobustStatus::EpsFeasible ? 0 : 3;
        }

        if (command == "assess") {
            pipe.build_uncertainty_model();
            json prov;
            Bounds bounds = pipe.bounds_for_run(true, &prov);
            RobustResult res = solve_robust(pipe.net, bounds, *pipe.um, pipe.cfg.robust);
            if (res.status == RobustStatus::Infeasible) {
                out << "robust model infeasible; nothing to assess\n";
                return 1;
            }
            if (res.status != RobustStatus::EpsFeasible) {
                err << "robust solve did not converge\n";
                return 3;
            }
            AssessOptions aopts;
            aopts.zero_clamp = pipe.cfg.zero_clamp;
            aopts.parallel_width = pipe.cfg.workers;
            WorstCase wc = worst_case_infeasibility(pipe.net, bounds, *pipe.um, res.sp_star,
                                                    res.sq_star, pipe.cfg.robust.vertex_mode,
                                                    aopts);
            AssessStats st = monte_carlo_assess(pipe.net, bounds, *pipe.um, res.sp_star,
                                                res.sq_star, pipe.cfg.mc_samples,
                                                pipe.cfg.mc_replications, pipe.cfg.seed, aopts);
            json j;
            j["config"] = pipe.cfg.echo();
            j["lower_bound"] = res.lower_bound;
            j["worst_case"] = {{"value", wc.value}, {"vertex", wc.vertex}};
            j["monte_carlo"] = st.to_json();
            cli_detail::write_file(pipe.artifact("assess.json"), j.dump(2));
            std::ostringstream csv;
            csv << "gamma,i_lb_worst,i_max_mean,i_max_ci,mu_mean,mu_ci\n"
                << pipe.um->gamma_budget << "," << wc.value << "," << st.i_max_mean << ","
                << st.i_max_ci << "," << st.mu_mean << "," << st.mu_ci << "\n";
            cli_detail::write_file(pipe.artifact("assess.csv"), csv.str());
            out << "lower bound " << j["lower_bound"].dump() << "\n";
            out << "worst-case normalized infeasibility " << j["worst_case"]["value"].dump()
                << " at vertex " << wc.vertex << "\n";
            out << "monte carlo: I_max " << j["monte_carlo"]["i_max_mean"].dump() << " +- "
                << j["monte_carlo"]["i_max_ci"].dump() << ", mu "
                << j["monte_carlo"]["mu_mean"].dump() << " +- "
                << j["monte_carlo"]["mu_ci"].dump() << "\n";
            return 0;
        }

        if (command == "alphamax") {
            pipe.build_uncertainty_model();
            Bounds bounds = Bounds::of(pipe.net);
            std::vector<FrontierPoint> pts;
            RobustOptions ro = pipe.cfg.robust;
            for (double beta : pipe.cfg.alphamax_betas) {
                double amax = alpha_max_search(pipe.net, bounds, pipe.cfg.uncertainty,
                                               pipe.clustering, pipe.renewables, beta,
                                               pipe.cfg.alphamax_tol, ro);
                pts.push_back({beta, amax});
            }
            json j;
            j["config"] = pipe.cfg.echo();
            for (const auto& p : pts)
                j["frontier"].push_back({{"beta", p.beta}, {"alpha_d_minus_max", p.alpha_max}});
            cli_detail::write_file(pipe.artifact("frontier.json"), j.dump(2));
            cli_detail::write_file(pipe.artifact("frontier.csv"), frontier_csv(pts));
            for (const auto& p : pts)
                out << "beta " << json(p.beta).dump() << " -> alpha_d_minus_max "
                    << json(p.alpha_max).dump() << "\n";
            return 0;
        }

        err << "config error: unknown command " << command << "\n";
        return 2;
    } catch (const ParseError& e) {
        err << "input error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        err << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "solver failure: " << e.what() << "\n";
        return 3;
    }
}

}  // namespace ropf

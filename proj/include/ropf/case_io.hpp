#pragma once

// MATPOWER-format case parsing into a per-unit network model.
//
// Supported subset: mpc.baseMVA, mpc.bus, mpc.gen, mpc.branch and the
// polynomial form of mpc.gencost. Comments (%) and trailing semicolons
// follow the format. All electrical quantities are converted to per-unit
// on the system MVA base at parse time; angles are stored in radians.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace ropf {

inline constexpr double kPi = 3.14159265358979323846;

// Angle-difference windows wider than +-30 degrees are clamped to +-pi/6;
// the convex trigonometric envelopes are only valid on that range.
inline constexpr double kMaxAngleDiff = kPi / 6.0;

struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

enum class BusType { PQ, PV, REF };

struct Bus {
    int id = 0;
    BusType bus_type = BusType::PQ;
    double pd = 0.0, qd = 0.0;      // nominal demand, per-unit
    double gs = 0.0, bs = 0.0;      // shunt conductance/susceptance, per-unit
    double vmin = 0.0, vmax = 0.0;  // voltage magnitude bounds, per-unit
    double theta_min = -kPi, theta_max = kPi;
    double base_kv = 0.0;
    // Fields we parse but do not consume (area, Vm, Va, zone) kept verbatim
    // so a canonical dump can round-trip the original file.
    double area = 0.0, vm0 = 1.0, va0 = 0.0, zone = 0.0;
};

struct Branch {
    int from = 0, to = 0;
    int circuit = 1;            // distinguishes parallel lines
    double g = 0.0, b = 0.0;    // series admittance from r, x
    double r = 0.0, x = 0.0;    // raw impedance, kept for round-tripping
    double b_charge = 0.0;      // total charging susceptance b^c
    double tau1 = 1.0, tau2 = 1.0;
    double sigma = 0.0;         // phase shift, radians
    double rate = 0.0;          // apparent-power limit, per-unit
    double dmin = -kMaxAngleDiff, dmax = kMaxAngleDiff;
    bool angle_clamped = false; // provenance: default/clamp applied to dmin/dmax
    int reverse = -1;           // index of the paired opposite orientation
};

struct Generator {
    int bus = 0;
    double pmin = 0.0, pmax = 0.0;
    double qmin = 0.0, qmax = 0.0;
    // Cost coefficients rescaled so that cost(s in per-unit) is in the
    // original currency/hour units.
    double cp2 = 0.0, cp1 = 0.0, cp0 = 0.0;
    double cq2 = 0.0, cq1 = 0.0;
};

struct Network {
    double base_mva = 100.0;
    std::vector<Bus> buses;
    std::vector<Branch> branches;     // both orientations of every line
    std::vector<Generator> generators;
    std::vector<std::vector<int>> gen_map;  // bus index -> generator indices
    std::string name;

    int bus_index(int bus_id) const {
        auto it = bus_lookup_.find(bus_id);
        if (it == bus_lookup_.end())
            throw ParseError("unknown bus id " + std::to_string(bus_id));
        return it->second;
    }
    bool has_bus(int bus_id) const { return bus_lookup_.count(bus_id) > 0; }

    void rebuild_indices() {
        bus_lookup_.clear();
        for (size_t i = 0; i < buses.size(); ++i) {
            if (!bus_lookup_.emplace(buses[i].id, static_cast<int>(i)).second)
                throw ParseError("duplicate bus id " + std::to_string(buses[i].id));
        }
        gen_map.assign(buses.size(), {});
        for (size_t g = 0; g < generators.size(); ++g)
            gen_map[bus_index(generators[g].bus)].push_back(static_cast<int>(g));
    }

    // Oriented branches leaving bus index i.
    std::vector<int> branches_from(int bus_idx) const {
        std::vector<int> out;
        for (size_t k = 0; k < branches.size(); ++k)
            if (bus_index(branches[k].from) == bus_idx) out.push_back(static_cast<int>(k));
        return out;
    }

    double total_abs_demand() const {
        double t = 0.0;
        for (const Bus& b : buses) t += std::abs(b.pd) + std::abs(b.qd);
        return t;
    }

  private:
    std::map<int, int> bus_lookup_;
};

namespace detail {

inline std::string strip_comment(const std::string& line) {
    auto pos = line.find('%');
    return pos == std::string::npos ? line : line.substr(0, pos);
}

inline bool parse_row(const std::string& text, std::vector<double>& out) {
    out.clear();
    std::string cleaned;
    cleaned.reserve(text.size());
    for (char c : text) cleaned += (c == ';' || c == ',') ? ' ' : c;
    std::istringstream ss(cleaned);
    double v;
    while (ss >> v) out.push_back(v);
    if (!ss.eof()) return false;
    return !out.empty();
}

struct Matrix {
    std::vector<std::vector<double>> rows;
    std::vector<int> line_numbers;
};

// Extracts every "mpc.<name> = [ ... ];" block. Rows are newline- or
// semicolon-terminated lists of numbers.
inline bool consumed_matrix(const std::string& name) {
    return name == "bus" || name == "gen" || name == "branch" || name == "gencost";
}

inline std::map<std::string, Matrix> extract_matrices(const std::string& text,
                                                      double& base_mva, bool& saw_base) {
    std::map<std::string, Matrix> result;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    std::string active;  // matrix currently being read
    bool active_consumed = true;
    saw_base = false;
    while (std::getline(in, line)) {
        ++lineno;
        std::string body = strip_comment(line);
        auto first = body.find_first_not_of(" \t\r\n");
        if (first == std::string::npos) continue;
        body = body.substr(first);

        if (active.empty()) {
            auto mpc = body.find("mpc.");
            if (mpc == std::string::npos) continue;
            auto eq = body.find('=', mpc);
            if (eq == std::string::npos) continue;
            std::string name = body.substr(mpc + 4, eq - mpc - 4);
            name.erase(std::remove_if(name.begin(), name.end(), ::isspace), name.end());
            std::string rhs = body.substr(eq + 1);
            if (name == "baseMVA") {
                std::vector<double> v;
                if (!parse_row(rhs, v) || v.size() != 1)
                    throw ParseError("malformed baseMVA at line " + std::to_string(lineno));
                base_mva = v[0];
                saw_base = true;
                continue;
            }
            auto bracket = rhs.find('[');
            if (bracket == std::string::npos) {
                // Cell arrays ({...}, e.g. bus names) and scalar options are
                // carried by some archives; only bracketed matrices matter.
                auto brace = rhs.find('{');
                if (brace != std::string::npos && rhs.find('}') == std::string::npos) {
                    active = name;
                    active_consumed = false;
                }
                continue;
            }
            active = name;
            active_consumed = consumed_matrix(name);
            if (active_consumed) result[active];  // matrix may legitimately be empty
            rhs = rhs.substr(bracket + 1);
            auto close = rhs.find(']');
            std::string row_text = close == std::string::npos ? rhs : rhs.substr(0, close);
            std::vector<double> row;
            if (active_consumed && parse_row(row_text, row)) {
                result[active].rows.push_back(row);
                result[active].line_numbers.push_back(lineno);
            } else if (active_consumed && !row_text.empty() &&
                       row_text.find_first_not_of(" \t\r\n") != std::string::npos) {
                throw ParseError("malformed matrix row in mpc." + active + " at line " +
                                 std::to_string(lineno));
            }
            if (close != std::string::npos) active.clear();
            continue;
        }

        auto close = body.find(']');
        if (close == std::string::npos && !active_consumed) close = body.find('}');
        std::string row_text = close == std::string::npos ? body : body.substr(0, close);
        if (active_consumed) {
            std::vector<double> row;
            if (parse_row(row_text, row)) {
                result[active].rows.push_back(row);
                result[active].line_numbers.push_back(lineno);
            } else if (row_text.find_first_not_of(" \t\r\n;") != std::string::npos) {
                throw ParseError("malformed matrix row in mpc." + active + " at line " +
                                 std::to_string(lineno));
            }
        }
        if (close != std::string::npos) active.clear();
    }
    return result;
}

}  // namespace detail

// Parses MATPOWER-format case text. Throws ParseError with the offending
// section or line number on malformed input.
inline Network parse_case(const std::string& text, const std::string& name = "case") {
    Network net;
    net.name = name;
    bool saw_base = false;
    auto matrices = detail::extract_matrices(text, net.base_mva, saw_base);
    if (!saw_base) throw ParseError("missing mpc.baseMVA");
    for (const char* required : {"bus", "gen", "branch"}) {
        if (!matrices.count(required))
            throw ParseError(std::string("missing mpc.") + required + " matrix");
    }
    const double base = net.base_mva;
    if (!(base > 0.0)) throw ParseError("baseMVA must be positive");

    const auto& busm = matrices["bus"];
    for (size_t r = 0; r < busm.rows.size(); ++r) {
        const auto& row = busm.rows[r];
        if (row.size() < 13)
            throw ParseError("bus row too short at line " +
                             std::to_string(busm.line_numbers[r]));
        Bus b;
        b.id = static_cast<int>(row[0]);
        int type = static_cast<int>(row[1]);
        if (type == 3) b.bus_type = BusType::REF;
        else if (type == 2) b.bus_type = BusType::PV;
        else b.bus_type = BusType::PQ;
        b.pd = row[2] / base;
        b.qd = row[3] / base;
        b.gs = row[4] / base;
        b.bs = row[5] / base;
        b.area = row[6];
        b.vm0 = row[7];
        b.va0 = row[8] * kPi / 180.0;
        b.base_kv = row[9];
        b.zone = row[10];
        b.vmax = row[11];
        b.vmin = row[12];
        if (!(b.vmin > 0.0) || b.vmin > b.vmax)
            throw ParseError("invalid voltage bounds on bus " + std::to_string(b.id));
        if (!std::isfinite(b.pd) || !std::isfinite(b.qd))
            throw ParseError("non-finite demand on bus " + std::to_string(b.id));
        // Absolute phase-angle bounds are not in MATPOWER data; [-pi, pi]
        // with the reference bus pinned at zero removes the rotational
        // degeneracy while keeping (3d) finite.
        b.theta_min = -kPi;
        b.theta_max = kPi;
        net.buses.push_back(b);
    }

    const auto& genm = matrices["gen"];
    std::vector<size_t> active_gen_rows;
    for (size_t r = 0; r < genm.rows.size(); ++r) {
        const auto& row = genm.rows[r];
        if (row.size() < 10)
            throw ParseError("gen row too short at line " +
                             std::to_string(genm.line_numbers[r]));
        int status = row.size() > 7 ? static_cast<int>(row[7]) : 1;
        if (status == 0) continue;
        Generator g;
        g.bus = static_cast<int>(row[0]);
        g.qmax = row[3] / base;
        g.qmin = row[4] / base;
        g.pmax = row[8] / base;
        g.pmin = row[9] / base;
        if (g.pmin > g.pmax || g.qmin > g.qmax)
            throw ParseError("inverted generation bounds on gen at bus " +
                             std::to_string(g.bus));
        net.generators.push_back(g);
        active_gen_rows.push_back(r);
    }

    if (matrices.count("gencost")) {
        const auto& costm = matrices["gencost"];
        size_t n_rows_total = genm.rows.size();
        size_t gi = 0;
        for (size_t r = 0; r < costm.rows.size() && r < n_rows_total; ++r) {
            // Skip rows of generators that were dropped as out of service.
            auto it = std::find(active_gen_rows.begin(), active_gen_rows.end(), r);
            if (it == active_gen_rows.end()) continue;
            gi = static_cast<size_t>(it - active_gen_rows.begin());
            const auto& row = costm.rows[r];
            if (row.size() < 4)
                throw ParseError("gencost row too short at line " +
                                 std::to_string(costm.line_numbers[r]));
            int model = static_cast<int>(row[0]);
            if (model != 2)
                throw ParseError("only polynomial (model 2) gencost supported, got model " +
                                 std::to_string(model));
            int ncoef = static_cast<int>(row[3]);
            if (static_cast<int>(row.size()) < 4 + ncoef)
                throw ParseError("gencost row missing coefficients at line " +
                                 std::to_string(costm.line_numbers[r]));
            Generator& g = net.generators[gi];
            // MATPOWER costs are polynomials in MW; rescale so they apply
            // to per-unit injections directly.
            if (ncoef >= 3) {
                g.cp2 = row[4] * base * base;
                g.cp1 = row[5] * base;
                g.cp0 = row[6];
            } else if (ncoef == 2) {
                g.cp1 = row[4] * base;
                g.cp0 = row[5];
            } else if (ncoef == 1) {
                g.cp0 = row[4];
            }
            if (g.cp2 < 0.0)
                throw ParseError("negative quadratic cost coefficient on gen at bus " +
                                 std::to_string(g.bus));
        }
    }

    net.rebuild_indices();

    const auto& brm = matrices["branch"];
    std::map<std::pair<int, int>, int> circuit_count;
    for (size_t r = 0; r < brm.rows.size(); ++r) {
        const auto& row = brm.rows[r];
        if (row.size() < 11)
            throw ParseError("branch row too short at line " +
                             std::to_string(brm.line_numbers[r]));
        int status = static_cast<int>(row[10]);
        if (status == 0) continue;  // out-of-service lines dropped before analysis
        Branch fwd;
        fwd.from = static_cast<int>(row[0]);
        fwd.to = static_cast<int>(row[1]);
        if (!net.has_bus(fwd.from) || !net.has_bus(fwd.to))
            throw ParseError("branch at line " + std::to_string(brm.line_numbers[r]) +
                             " references unknown bus");
        fwd.r = row[2];
        fwd.x = row[3];
        double denom = fwd.r * fwd.r + fwd.x * fwd.x;
        if (denom <= 0.0)
            throw ParseError("zero-impedance branch at line " +
                             std::to_string(brm.line_numbers[r]));
        fwd.g = fwd.r / denom;
        fwd.b = -fwd.x / denom;
        fwd.b_charge = row[4];
        fwd.rate = row[5] / base;
        if (!(fwd.rate > 0.0))
            throw ParseError("nonpositive rate on branch at line " +
                             std::to_string(brm.line_numbers[r]));
        double ratio = row[8];
        fwd.tau1 = ratio == 0.0 ? 1.0 : ratio;
        fwd.tau2 = 1.0;
        fwd.sigma = row[9] * kPi / 180.0;
        double amin = -kMaxAngleDiff, amax = kMaxAngleDiff;
        bool clamped = true;
        if (row.size() >= 13) {
            double lo = row[11] * kPi / 180.0, hi = row[12] * kPi / 180.0;
            // angmin = angmax = 0 means unconstrained in the MATPOWER format.
            if (!(row[11] == 0.0 && row[12] == 0.0)) {
                if (lo > hi)
                    throw ParseError("inverted angle bounds on branch at line " +
                                     std::to_string(brm.line_numbers[r]));
                clamped = lo < -kMaxAngleDiff || hi > kMaxAngleDiff;
                amin = std::max(lo, -kMaxAngleDiff);
                amax = std::min(hi, kMaxAngleDiff);
            }
        }
        fwd.dmin = amin;
        fwd.dmax = amax;
        fwd.angle_clamped = clamped;

        auto key = std::make_pair(std::min(fwd.from, fwd.to), std::max(fwd.from, fwd.to));
        fwd.circuit = ++circuit_count[key];

        Branch bwd = fwd;
        std::swap(bwd.from, bwd.to);
        std::swap(bwd.tau1, bwd.tau2);
        bwd.sigma = -fwd.sigma;
        bwd.dmin = -fwd.dmax;
        bwd.dmax = -fwd.dmin;

        int fidx = static_cast<int>(net.branches.size());
        fwd.reverse = fidx + 1;
        bwd.reverse = fidx;
        net.branches.push_back(fwd);
        net.branches.push_back(bwd);
    }

    return net;
}

struct ValidationFinding {
    std::string code;
    std::string message;
};

struct ValidationReport {
    std::vector<ValidationFinding> findings;
    bool ok() const { return findings.empty(); }
};

// Connected components over in-service branches, by bus index.
inline std::vector<int> connected_components(const Network& net) {
    std::vector<int> comp(net.buses.size(), -1);
    int n_comp = 0;
    for (size_t seed = 0; seed < net.buses.size(); ++seed) {
        if (comp[seed] >= 0) continue;
        std::vector<int> stack{static_cast<int>(seed)};
        comp[seed] = n_comp;
        while (!stack.empty()) {
            int i = stack.back();
            stack.pop_back();
            for (const Branch& br : net.branches) {
                int fi = net.bus_index(br.from), ti = net.bus_index(br.to);
                if (fi == i && comp[ti] < 0) {
                    comp[ti] = n_comp;
                    stack.push_back(ti);
                }
            }
        }
        ++n_comp;
    }
    return comp;
}

inline ValidationReport validate(const Network& net) {
    ValidationReport rep;
    auto add = [&](const std::string& code, const std::string& msg) {
        rep.findings.push_back({code, msg});
    };
    std::set<int> seen;
    for (const Bus& b : net.buses) {
        if (!seen.insert(b.id).second)
            add("duplicate-bus", "duplicate bus id " + std::to_string(b.id));
        if (b.vmin > b.vmax)
            add("bound-inversion", "vmin > vmax on bus " + std::to_string(b.id));
        if (!(b.vmin > 0.0))
            add("bound-inversion", "vmin <= 0 on bus " + std::to_string(b.id));
        if (!std::isfinite(b.pd) || !std::isfinite(b.qd))
            add("non-finite", "non-finite demand on bus " + std::to_string(b.id));
    }
    for (const Generator& g : net.generators) {
        if (!net.has_bus(g.bus))
            add("unknown-bus", "generator references unknown bus " + std::to_string(g.bus));
        if (g.pmin > g.pmax || g.qmin > g.qmax)
            add("bound-inversion", "inverted generation bounds at bus " + std::to_string(g.bus));
        if (g.cp2 < 0.0 || g.cq2 < 0.0)
            add("nonconvex-cost", "negative quadratic cost at bus " + std::to_string(g.bus));
    }
    for (const Branch& br : net.branches) {
        if (br.dmin > br.dmax)
            add("bound-inversion", "inverted angle bounds on branch " +
                                       std::to_string(br.from) + "-" + std::to_string(br.to));
    }
    if (!net.buses.empty()) {
        auto comp = connected_components(net);
        int n_comp = *std::max_element(comp.begin(), comp.end()) + 1;
        if (n_comp > 1) {
            std::vector<int> sizes(n_comp, 0);
            for (int c : comp) ++sizes[c];
            std::string msg = "disconnected: component sizes";
            for (int s : sizes) msg += " " + std::to_string(s);
            add("disconnected", msg);
        }
        // One REF bus per connected component.
        std::vector<int> refs(n_comp, 0);
        for (size_t i = 0; i < net.buses.size(); ++i)
            if (net.buses[i].bus_type == BusType::REF) ++refs[comp[i]];
        for (int c = 0; c < n_comp; ++c) {
            if (refs[c] == 0) add("missing-ref", "component " + std::to_string(c) + " has no REF bus");
            if (refs[c] > 1) add("multiple-ref", "component " + std::to_string(c) + " has " +
                                                     std::to_string(refs[c]) + " REF buses");
        }
    }
    return rep;
}

// Canonical JSON form. Carries enough to reconstruct the per-unit model
// exactly, plus provenance of defaults applied during parsing.
inline nlohmann::json to_json(const Network& net) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["name"] = net.name;
    j["base_mva"] = net.base_mva;
    for (const Bus& b : net.buses) {
        j["buses"].push_back({{"id", b.id},
                              {"type", b.bus_type == BusType::REF  ? "REF"
                                       : b.bus_type == BusType::PV ? "PV"
                                                                   : "PQ"},
                              {"pd", b.pd},
                              {"qd", b.qd},
                              {"gs", b.gs},
                              {"bs", b.bs},
                              {"vmin", b.vmin},
                              {"vmax", b.vmax},
                              {"theta_min", b.theta_min},
                              {"theta_max", b.theta_max},
                              {"base_kv", b.base_kv},
                              {"area", b.area},
                              {"vm0", b.vm0},
                              {"va0", b.va0},
                              {"zone", b.zone}});
    }
    for (const Branch& br : net.branches) {
        j["branches"].push_back({{"from", br.from},
                                 {"to", br.to},
                                 {"circuit", br.circuit},
                                 {"g", br.g},
                                 {"b", br.b},
                                 {"r", br.r},
                                 {"x", br.x},
                                 {"b_charge", br.b_charge},
                                 {"tau1", br.tau1},
                                 {"tau2", br.tau2},
                                 {"sigma", br.sigma},
                                 {"rate", br.rate},
                                 {"dmin", br.dmin},
                                 {"dmax", br.dmax},
                                 {"angle_clamped", br.angle_clamped},
                                 {"reverse", br.reverse}});
    }
    for (const Generator& g : net.generators) {
        j["generators"].push_back({{"bus", g.bus},
                                   {"pmin", g.pmin},
                                   {"pmax", g.pmax},
                                   {"qmin", g.qmin},
                                   {"qmax", g.qmax},
                                   {"cp2", g.cp2},
                                   {"cp1", g.cp1},
                                   {"cp0", g.cp0},
                                   {"cq2", g.cq2},
                                   {"cq1", g.cq1}});
    }
    return j;
}

inline Network network_from_json(const nlohmann::json& j) {
    Network net;
    net.name = j.value("name", "case");
    net.base_mva = j.at("base_mva").get<double>();
    for (const auto& jb : j.at("buses")) {
        Bus b;
        b.id = jb.at("id").get<int>();
        std::string t = jb.at("type").get<std::string>();
        b.bus_type = t == "REF" ? BusType::REF : t == "PV" ? BusType::PV : BusType::PQ;
        b.pd = jb.at("pd");
        b.qd = jb.at("qd");
        b.gs = jb.at("gs");
        b.bs = jb.at("bs");
        b.vmin = jb.at("vmin");
        b.vmax = jb.at("vmax");
        b.theta_min = jb.at("theta_min");
        b.theta_max = jb.at("theta_max");
        b.base_kv = jb.at("base_kv");
        b.area = jb.value("area", 0.0);
        b.vm0 = jb.value("vm0", 1.0);
        b.va0 = jb.value("va0", 0.0);
        b.zone = jb.value("zone", 0.0);
        net.buses.push_back(b);
    }
    if (j.contains("branches"))
        for (const auto& jb : j.at("branches")) {
            Branch br;
            br.from = jb.at("from");
            br.to = jb.at("to");
            br.circuit = jb.at("circuit");
            br.g = jb.at("g");
            br.b = jb.at("b");
            br.r = jb.at("r");
            br.x = jb.at("x");
            br.b_charge = jb.at("b_charge");
            br.tau1 = jb.at("tau1");
            br.tau2 = jb.at("tau2");
            br.sigma = jb.at("sigma");
            br.rate = jb.at("rate");
            br.dmin = jb.at("dmin");
            br.dmax = jb.at("dmax");
            br.angle_clamped = jb.value("angle_clamped", false);
            br.reverse = jb.at("reverse");
            net.branches.push_back(br);
        }
    if (j.contains("generators"))
        for (const auto& jg : j.at("generators")) {
            Generator g;
            g.bus = jg.at("bus");
            g.pmin = jg.at("pmin");
            g.pmax = jg.at("pmax");
            g.qmin = jg.at("qmin");
            g.qmax = jg.at("qmax");
            g.cp2 = jg.at("cp2");
            g.cp1 = jg.at("cp1");
            g.cp0 = jg.at("cp0");
            g.cq2 = jg.at("cq2");
            g.cq1 = jg.at("cq1");
            net.generators.push_back(g);
        }
    net.rebuild_indices();
    return net;
}

// Quadratic dispatch cost evaluated directly from the polynomial.
inline double dispatch_cost(const Network& net, const std::vector<double>& sp,
                            const std::vector<double>& sq) {
    double total = 0.0;
    for (size_t g = 0; g < net.generators.size(); ++g) {
        const Generator& gen = net.generators[g];
        total += gen.cp2 * sp[g] * sp[g] + gen.cp1 * sp[g] + gen.cp0;
        if (g < sq.size()) total += gen.cq2 * sq[g] * sq[g] + gen.cq1 * sq[g];
    }
    return total;
}

}  // namespace ropf

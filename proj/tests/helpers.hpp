#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "ropf/case_io.hpp"

namespace testutil {

inline std::string read_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("missing test fixture: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

inline std::string fixture_path(const std::string& name) {
    return std::string(ROPF_DATA_DIR) + "/" + name;
}

inline ropf::Network load_case(const std::string& name) {
    return ropf::parse_case(read_file(fixture_path(name + ".m")), name);
}

// Minimal single-bus network with one generator, handy for degenerate paths.
inline std::string single_bus_case() {
    return R"(function mpc = single
mpc.version = '2';
mpc.baseMVA = 100.0;
mpc.bus = [
  1 3 10.0 2.0 0.0 0.0 1 1.0 0.0 230.0 1 1.1 0.9;
];
mpc.gen = [
  1 10.0 0.0 50.0 -50.0 1.0 100.0 1 100.0 0.0;
];
mpc.gencost = [
  2 0.0 0.0 3 0.0 25.0 0.0;
];
mpc.branch = [
];
)";
}

// Two buses joined by one line; generator at bus 1, load at bus 2.
inline std::string two_bus_case(double pd = 50.0, double qd = 10.0, double rate = 100.0) {
    std::ostringstream os;
    os << "function mpc = twobus\n"
       << "mpc.version = '2';\n"
       << "mpc.baseMVA = 100.0;\n"
       << "mpc.bus = [\n"
       << "  1 3 0.0 0.0 0.0 0.0 1 1.0 0.0 230.0 1 1.1 0.9;\n"
       << "  2 1 " << pd << " " << qd << " 0.0 0.0 1 1.0 0.0 230.0 1 1.1 0.9;\n"
       << "];\n"
       << "mpc.gen = [\n"
       << "  1 0.0 0.0 150.0 -150.0 1.0 100.0 1 300.0 0.0;\n"
       << "];\n"
       << "mpc.gencost = [\n"
       << "  2 0.0 0.0 3 0.0 20.0 0.0;\n"
       << "];\n"
       << "mpc.branch = [\n"
       << "  1 2 0.01 0.05 0.02 " << rate << " " << rate << " " << rate
       << " 0.0 0.0 1 -30.0 30.0;\n"
       << "];\n";
    return os.str();
}

}  // namespace testutil

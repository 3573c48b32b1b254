#include <string>
#include <vector>

#include "ropf/cli_app.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return ropf::run_cli(args);
}

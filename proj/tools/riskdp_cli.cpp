#include <string>
#include <vector>

#include "riskdp/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return riskdp::cli::run(args);
}

#include <string>
#include <vector>

#include "stockpot/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return stockpot::cli::run(args);
}

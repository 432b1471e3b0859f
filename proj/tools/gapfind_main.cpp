#include <string>
#include <vector>

#include "gapfind/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return gapfind::cli::run(args);
}

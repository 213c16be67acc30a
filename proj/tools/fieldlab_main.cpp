#include <string>
#include <vector>

#include "fieldlab/experiments.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return fieldlab::cli::cli_main(args);
}

#include <iostream>
#include <string>
#include <vector>

#include "sage/app.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return sage::run_cli(args, std::cout, std::cerr);
}

#include <iostream>
#include <string>
#include <vector>

#include "saltpepper/cli.hpp"
#include "saltpepper/runtime.hpp"

int main(int argc, char** argv) {
    saltpepper::configure_allocator();
    std::vector<std::string> args(argv + 1, argv + argc);
    return saltpepper::run_cli(args, std::cout, std::cerr);
}

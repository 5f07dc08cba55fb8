#include <iostream>

#include "racestack/sim/cli.hpp"

int main(int argc, char** argv) { return racestack::sim::cli_main(argc, argv, std::cout, std::cerr); }

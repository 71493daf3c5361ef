#include <iostream>

#include "phaseforge/cli.hpp"

int main(int argc, char** argv) { return phaseforge::run_cli(argc, argv, std::cout, std::cerr); }

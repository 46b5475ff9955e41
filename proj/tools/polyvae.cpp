#include <iostream>

#include "polyvae/cli.hpp"

int main(int argc, char** argv) { return polyvae::run_cli(argc, argv, std::cout, std::cerr); }

#include <iostream>

#include "dpanet/cli.hpp"

int main(int argc, char** argv) { return dpanet::run_cli(argc, argv, std::cout, std::cerr); }

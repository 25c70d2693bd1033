#include "drophmc/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return drophmc::run_cli(argc, argv, std::cout, std::cerr); }

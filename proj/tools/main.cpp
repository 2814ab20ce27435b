#include "ccpool/cli.hpp"

#include <iostream>

int main(int argc, char **argv) { return ccpool::run_cli(argc, argv, std::cout, std::cerr); }

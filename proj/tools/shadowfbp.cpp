#include <iostream>

#include "shadowfbp/cli.hpp"

int main(int argc, char** argv) { return shadowfbp::run_cli(argc, argv, std::cout, std::cerr); }

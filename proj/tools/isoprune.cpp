#include <iostream>

#include "isoprune/cli.hpp"

int main(int argc, char** argv) { return isoprune::run(argc, argv, std::cout, std::cerr); }

#include <iostream>

#include "atomforest/cli.hpp"

int main(int argc, char** argv) { return atomforest::cli::run(argc, argv, std::cout, std::cerr); }

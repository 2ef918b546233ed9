#include <iostream>

#include "oodkit/cli.hpp"

int main(int argc, char** argv) { return oodkit::run_cli(argc, argv, std::cout, std::cerr); }

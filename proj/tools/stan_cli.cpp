#include <iostream>

#include "stan/cli.hpp"

int main(int argc, char** argv) { return stan::run_cli(argc, argv, std::cout, std::cerr); }

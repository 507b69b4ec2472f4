#include "compatkit/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return compat::cli::dispatch(argc, argv, std::cout, std::cerr); }

#include <iostream>

#include "fedrane/cli.hpp"

int main(int argc, char** argv) { return fedrane::cli::dispatch(argc, argv, std::cout, std::cerr); }

#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) { return loctex::cli::run_subcommand(argc, argv, std::cout, std::cerr); }

#include <iostream>

#include "ferryplan/cli.hpp"

int main(int argc, char** argv) { return ferryplan::cli::run(argc, argv, std::cout, std::cerr); }

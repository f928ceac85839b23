#include <iostream>

#include "periscope/cli.hpp"

int main(int argc, char** argv) { return periscope::run(argc, argv, std::cout, std::cerr); }

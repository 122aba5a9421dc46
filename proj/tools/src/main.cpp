#include <iostream>

#include "wgmri_cli/cli.hpp"

int main(int argc, char** argv) { return wgmri::cli::run(argc, argv, std::cout, std::cerr); }

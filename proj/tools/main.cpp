#include "cli.hpp"

int main(int argc, char** argv) { return propdesign::cli::run(argc, argv, std::cout, std::cerr); }

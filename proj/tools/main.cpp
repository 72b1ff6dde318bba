#include <iostream>

#include "docbreg/cli.hpp"

int main(int argc, char** argv) { return docbreg::run_cli(argc, argv, std::cout, std::cerr); }

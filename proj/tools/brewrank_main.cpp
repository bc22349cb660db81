#include <iostream>

#include "brewrank/cli.hpp"

int main(int argc, char** argv) { return brewrank::run_cli(argc, argv, std::cout, std::cerr); }

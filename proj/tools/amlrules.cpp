#include <iostream>

#include "aml/pipeline.hpp"

int main(int argc, char** argv) { return aml::run_cli(argc, argv, std::cout, std::cerr); }

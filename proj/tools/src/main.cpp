#include <iostream>

#include "morphdose/cli.hpp"

int main(int argc, char** argv) {
  return morphdose::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}

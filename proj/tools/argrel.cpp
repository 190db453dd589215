#include <iostream>

#include "argrel/cli.hpp"

int main(int argc, char** argv) {
  return argrel::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}

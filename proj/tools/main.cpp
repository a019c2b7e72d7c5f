#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) {
  return irtforge::cli::run(argc, argv, irtforge::global_registry(), std::cout, std::cerr);
}

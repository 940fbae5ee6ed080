#include <iostream>
#include <string>
#include <vector>

#include "didiv/cli.hpp"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv, argv + argc);
  return didiv::cli::run(args, std::cout, std::cerr);
}

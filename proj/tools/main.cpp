#include <iostream>
#include <string>
#include <vector>

#include "hfnet/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return hfnet::run_cli(args, std::cout, std::cerr);
}

#include <iostream>

#include "rsnet/cli.hpp"

int main(int argc, char** argv) {
  return rsnet::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}

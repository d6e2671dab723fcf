#include <iostream>
#include <string>
#include <vector>

#include "mmn/cli.hpp"

int main(int argc, char** argv) {
  return mmn::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cin, std::cout, std::cerr);
}

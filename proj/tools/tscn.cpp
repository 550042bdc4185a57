#include <iostream>
#include <string>
#include <vector>

#include "tscn/cli.hpp"

int main(int argc, char** argv) {
  return tscn::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}

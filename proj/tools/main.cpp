#include <iostream>

#include "mmfuse/expcli/cli.hpp"

int main(int argc, char** argv) {
  return mmfuse::expcli::run_cli({argv + 1, argv + argc}, std::cout, std::cerr);
}

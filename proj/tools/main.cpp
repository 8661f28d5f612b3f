#include <iostream>

#include "streamgate/cli.hpp"
#include "streamgate/platform.hpp"

int main(int argc, char** argv) {
  streamgate::tune_allocator();
  return streamgate::run_cli(argc, argv, std::cout, std::cerr);
}

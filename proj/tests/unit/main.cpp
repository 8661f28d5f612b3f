#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "streamgate/platform.hpp"

int main(int argc, char** argv) {
  streamgate::tune_allocator();
  doctest::Context ctx(argc, argv);
  return ctx.run();
}

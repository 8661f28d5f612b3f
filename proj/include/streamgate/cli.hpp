#pragma once

#include <iosfwd>

namespace streamgate {

// Exit codes: 0 success, 1 unexpected failure, 2 configuration or usage
// error, 3 data error, 4 numerical failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace streamgate

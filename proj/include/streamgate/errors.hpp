#pragma once

#include <stdexcept>
#include <string>

namespace streamgate {

// Invalid configuration (bad K, head split, policy values, unknown flags).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or infeasible data: bad stream files, infeasible generation,
// missing annotations, shape mismatches in inputs.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite loss or gradient during training.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace streamgate

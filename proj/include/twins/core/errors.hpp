#pragma once

#include <stdexcept>
#include <string>

namespace twins {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration values (bad sizes, out-of-range hyperparameters).
struct ConfigError : Error {
  using Error::Error;
};

// Shape or precondition violations at module boundaries.
struct ContractError : Error {
  using Error::Error;
};

// On-disk format problems (bad magic, truncated payload).
struct FormatError : Error {
  using Error::Error;
};

// Bad dataset contents (class index out of range, inconsistent masks).
struct DataError : Error {
  using Error::Error;
};

// Non-finite values surfaced during compute.
struct NumericalError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace twins

#pragma once

#include <stdexcept>
#include <string>

namespace missfuse {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape disagreement between tensors.
struct DimensionError : Error {
  using Error::Error;
};

// Invalid configuration value or misuse of an operation's contract.
struct ConfigError : Error {
  using Error::Error;
};

// Malformed input data (bad sample, non-finite loss, missing file).
struct DataError : Error {
  using Error::Error;
};

// Unparseable text input; message carries line/field location.
struct ParseError : Error {
  using Error::Error;
};

// Violation of the evaluation protocol (e.g. empty modality subset).
struct ProtocolError : Error {
  using Error::Error;
};

}  // namespace missfuse

#pragma once

#include <stdexcept>

namespace damstf {

// Error taxonomy shared across the library. The CLI maps these onto exit
// codes: ConfigError/ParseError -> 2, IoError -> 3, InvariantError -> 4.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvariantError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace damstf

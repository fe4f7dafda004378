#pragma once

#include <stdexcept>
#include <string>

namespace domino {

// Dimension or rank mismatch between operands.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A caller broke an operation's precondition (bad id, empty input, ...).
struct ContractError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Malformed file or stream contents.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// NaN or Inf appeared where every value must be finite.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace domino
